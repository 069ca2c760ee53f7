use std::sync::Arc;

use gnngeo::graph::{EDGE_FEATURE_DIM, NODE_FEATURE_DIM};
use gnngeo::model::{
    forward, forward_vars, Aggregator, Decoder, ModelConfig, ModelInput, ModelParams,
};
use gnngeo::numeric::{grad_check_many, GradCheckOptions, Mode, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn input(n: usize, edges: &[(usize, usize)], seed: u64) -> ModelInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adjacency = vec![Vec::new(); n];
    for (e, &(a, b)) in edges.iter().enumerate() {
        adjacency[a].push((b, e));
        adjacency[b].push((a, e));
    }
    adjacency.iter_mut().for_each(|l| l.sort_unstable());
    ModelInput {
        node_features: random(&mut rng, n, NODE_FEATURE_DIM),
        edge_features: random(&mut rng, edges.len(), EDGE_FEATURE_DIM),
        adjacency: Arc::new(adjacency),
    }
}

fn config(g: usize, k: usize, layers: usize, aggregator: Aggregator, decoder: Decoder) -> ModelConfig {
    ModelConfig {
        g,
        k,
        layers,
        aggregator,
        edge_hidden: 2 * k,
        decoder,
        seed: 11,
    }
}

#[test]
fn full_model_gradient_check() {
    let edges = [
        (0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (8, 9), (9, 10),
        (10, 11), (0, 5), (2, 9), (3, 11), (1, 7),
    ];
    let inp = input(12, &edges, 2);
    let cfg = config(8, 4, 2, Aggregator::Mean, Decoder::BnSigmoid);
    let params = ModelParams::init(&cfg, 12).unwrap();
    let tensors: Vec<Tensor> = params.tensors().into_iter().map(|(t, _)| t.clone()).collect();
    let rows = [0, 2, 3, 5, 8, 11];
    let target = Tensor::matrix(6, 2, (0..12).map(|i| 0.1 + 0.07 * i as f64).collect()).unwrap();

    let started = std::time::Instant::now();
    let report = grad_check_many(
        |tape, vars| {
            let f = forward_vars(tape, &inp, vars, params.bn.as_ref(), &cfg, Mode::Train)
                .map_err(|e| gnngeo::numeric::NumericError::Contract(e.to_string()))?;
            let sel = tape.gather_rows(f.pred, &rows)?;
            tape.mse(sel, &target)
        },
        &tensors,
        GradCheckOptions {
            skip_kinks: true,
            ..GradCheckOptions::default()
        },
    )
    .unwrap();
    assert!(report.max_rel_err <= 1e-3, "{report:?}");
    assert!(report.checked > 10 * report.skipped, "{report:?}");
    assert_eq!(report.checked + report.skipped, params.param_count());
    assert!(started.elapsed().as_secs() < 60);
}

fn layer_embedding(inp: &ModelInput, params: &ModelParams, cfg: &ModelConfig) -> Tensor {
    let mut tape = Tape::new();
    let f = forward(&mut tape, inp, params, cfg, Mode::Eval, false).unwrap();
    tape.value(f.embeddings[cfg.layers]).clone()
}

#[test]
fn layer_l_embedding_sees_exactly_l_hops() {
    let path: Vec<(usize, usize)> = (0..9).map(|i| (i, i + 1)).collect();
    let base = input(10, &path, 4);
    for layers in 1..=3 {
        for agg in [Aggregator::Mean, Aggregator::Sum, Aggregator::Max] {
            let cfg = config(8, 4, layers, agg, Decoder::BnSigmoid);
            let params = ModelParams::init(&cfg, 10).unwrap();
            let h = layer_embedding(&base, &params, &cfg);
            for j in 0..10 {
                let mut moved = base.clone();
                for c in 0..NODE_FEATURE_DIM {
                    let v = moved.node_features.get(j, c);
                    moved.node_features.set(j, c, v + 0.75 + c as f64);
                }
                let hm = layer_embedding(&moved, &params, &cfg);
                for i in 0..10usize {
                    if i.abs_diff(j) > layers {
                        let same = h.row(i).iter().zip(hm.row(i)).all(|(a, b)| a.to_bits() == b.to_bits());
                        assert!(same, "L={layers} {agg}: node {j} reached node {i}");
                    }
                }
                // the perturbation is visible at the node itself
                assert_ne!(h.row(j), hm.row(j), "L={layers} {agg}: node {j}");
            }
        }
    }
}

#[test]
fn neighbor_order_does_not_change_the_output() {
    let edges = [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (3, 4), (2, 5), (5, 0)];
    let base = input(6, &edges, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for agg in [Aggregator::Mean, Aggregator::Sum, Aggregator::Max] {
        let cfg = config(8, 4, 2, agg, Decoder::Sigmoid);
        let params = ModelParams::init(&cfg, 6).unwrap();
        let h = layer_embedding(&base, &params, &cfg);
        let mut shuffled = base.clone();
        let mut adj = (*base.adjacency).clone();
        adj.iter_mut().for_each(|l| l.shuffle(&mut rng));
        shuffled.adjacency = Arc::new(adj);
        let hs = layer_embedding(&shuffled, &params, &cfg);
        for (a, b) in h.data().iter().zip(hs.data()) {
            assert!((a - b).abs() <= 1e-12, "{agg}");
        }
    }
}
