use gnngeo::numeric::{
    grad_check_many, AdamState, BatchNormState, GradCheckOptions, NumericError, Tape, Tensor, Var,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

type Primitive = fn(&mut Tape, &[Var]) -> Result<Var, NumericError>;

/// Each primitive with the input shapes it takes.
fn primitives() -> Vec<(&'static str, Vec<(usize, usize)>, Primitive)> {
    vec![
        ("matmul", vec![(4, 3), (3, 5)], |t, v| t.matmul(v[0], v[1])),
        ("add_bias", vec![(4, 3), (1, 3)], |t, v| t.add_bias(v[0], v[1])),
        ("affine", vec![(4, 3), (3, 2), (1, 2)], |t, v| t.affine(v[0], v[1], v[2])),
        ("add", vec![(3, 3), (3, 3)], |t, v| t.add(v[0], v[1])),
        ("relu", vec![(4, 3)], |t, v| Ok(t.relu(v[0]))),
        ("sigmoid", vec![(4, 3)], |t, v| Ok(t.sigmoid(v[0]))),
        ("concat_cols", vec![(3, 2), (3, 4)], |t, v| t.concat_cols(v[0], v[1])),
        ("gather_rows", vec![(5, 3)], |t, v| t.gather_rows(v[0], &[4, 0, 4, 2])),
        ("sum", vec![(3, 4)], |t, v| Ok(t.sum(v[0]))),
        ("batch_norm_train", vec![(6, 3), (1, 3), (1, 3)], |t, v| {
            let mut s = BatchNormState::new(3);
            t.batch_norm_train(v[0], v[1], v[2], &mut s)
        }),
        ("batch_norm_eval", vec![(6, 3), (1, 3), (1, 3)], |t, v| {
            let mut s = BatchNormState::new(3);
            s.running_mean = vec![0.2, -0.1, 0.4];
            s.running_var = vec![0.5, 1.3, 2.0];
            t.batch_norm_eval(v[0], v[1], v[2], &s)
        }),
    ]
}

#[test]
fn every_primitive_passes_gradient_check_on_ten_seeds() {
    for (name, shapes, op) in primitives() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let xs: Vec<Tensor> = shapes.iter().map(|&(r, c)| random(&mut rng, r, c)).collect();
            let mut probe = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| probe.constant(x.clone())).collect();
            let out = op(&mut probe, &vars).unwrap();
            let shape = probe.value(out).shape().to_vec();
            let len = shape.iter().product();
            let target =
                Tensor::new(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

            let report = grad_check_many(
                |tape, v| {
                    let y = op(tape, v)?;
                    tape.mse(y, &target)
                },
                &xs,
                GradCheckOptions {
                    skip_kinks: true,
                    ..GradCheckOptions::default()
                },
            )
            .unwrap();
            assert!(report.max_rel_err <= 1e-3, "{name} seed {seed}: {report:?}");
            assert!(report.checked > 0, "{name} seed {seed}");
        }
    }
}

#[test]
fn composite_network_passes_gradient_check() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(&mut rng, 5, 4);
        let params = [
            random(&mut rng, 4, 6),
            random(&mut rng, 1, 6),
            random(&mut rng, 6, 2),
            random(&mut rng, 1, 2),
        ];
        let target = Tensor::full(&[5, 2], 0.3);
        let report = grad_check_many(
            |tape, v| {
                let xv = tape.constant(x.clone());
                let h = tape.affine(xv, v[0], v[1])?;
                let h = tape.relu(h);
                let o = tape.affine(h, v[2], v[3])?;
                let o = tape.sigmoid(o);
                tape.mse(o, &target)
            },
            &params,
            GradCheckOptions {
                skip_kinks: true,
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-3, "seed {seed}: {report:?}");
    }
}

#[test]
fn adam_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p0 = random(&mut rng, 3, 3);
    let g = random(&mut rng, 3, 3);
    let run = || {
        let mut p = p0.clone();
        let mut s = AdamState::new([p.shape()]);
        for _ in 0..5 {
            gnngeo::numeric::adam_step(&mut [&mut p], &[&g], &[true], &mut s, 0.01, 0.001).unwrap();
        }
        p
    };
    assert_eq!(run(), run());
}

fn big_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1e6..1e6f64, rows * cols)
        .prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn large_finite_inputs_stay_finite(x in big_matrix(4, 3), w in big_matrix(3, 3), b in big_matrix(1, 3)) {
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x), tape.leaf(w), tape.leaf(b));
        let a = tape.affine(xv, wv, bv).unwrap();
        let s = tape.sigmoid(a);
        let r = tape.relu(a);
        let c = tape.concat_cols(s, r).unwrap();
        let mut bn = BatchNormState::new(6);
        let (g, be) = (tape.leaf(Tensor::ones(&[1, 6])), tape.leaf(Tensor::zeros(&[1, 6])));
        let n = tape.batch_norm_train(c, g, be, &mut bn).unwrap();
        let loss = tape.mse(n, &Tensor::zeros(&[4, 6])).unwrap();
        prop_assert!(tape.value(s).is_finite());
        prop_assert!(tape.value(loss).is_finite());
        let grads = tape.backward(loss).unwrap();
        prop_assert!(grads.wrt(xv).is_finite());
        prop_assert!(grads.wrt(wv).is_finite());
    }

    #[test]
    fn batch_norm_eval_is_a_pure_function(x in big_matrix(3, 2), shift in -5.0..5.0f64) {
        let mut s = BatchNormState::new(2);
        s.running_mean = vec![shift, -shift];
        let eval = || {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let g = tape.constant(Tensor::full(&[1, 2], 2.0));
            let b = tape.constant(Tensor::full(&[1, 2], 0.5));
            let y = tape.batch_norm_eval(xv, g, b, &s).unwrap();
            tape.value(y).clone()
        };
        prop_assert_eq!(eval(), eval());
    }
}
