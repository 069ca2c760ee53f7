//! The graph neural network: node/edge encoders, edge-conditioned message
//! passing layers and the location decoder.

mod conv;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::graph::{AttributedGraph, EDGE_FEATURE_DIM, NODE_FEATURE_DIM};
use crate::numeric::{BatchNormState, Mode, NumericError, Tape, Tensor, Var};

pub use conv::Adjacency;
use conv::{matvec, EdgeConv};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameters do not fit this graph: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Mean,
    Sum,
    Max,
}

impl FromStr for Aggregator {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "sum" => Ok(Self::Sum),
            "max" => Ok(Self::Max),
            other => Err(ModelError::Config(format!("unknown aggregator '{other}'"))),
        }
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Sum => "sum",
            Self::Max => "max",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    Vanilla,
    VanillaBn,
    Sigmoid,
    BnSigmoid,
}

impl Decoder {
    pub fn has_bn(self) -> bool {
        matches!(self, Self::VanillaBn | Self::BnSigmoid)
    }

    pub fn has_sigmoid(self) -> bool {
        matches!(self, Self::Sigmoid | Self::BnSigmoid)
    }
}

impl FromStr for Decoder {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "vanilla_bn" => Ok(Self::VanillaBn),
            "sigmoid" => Ok(Self::Sigmoid),
            "bn_sigmoid" => Ok(Self::BnSigmoid),
            other => Err(ModelError::Config(format!("unknown decoder '{other}'"))),
        }
    }
}

impl fmt::Display for Decoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Vanilla => "vanilla",
            Self::VanillaBn => "vanilla_bn",
            Self::Sigmoid => "sigmoid",
            Self::BnSigmoid => "bn_sigmoid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node embedding width; half comes from the ID table, half from the
    /// attribute map.
    pub g: usize,
    /// Edge embedding width.
    pub k: usize,
    /// Number of message passing layers.
    pub layers: usize,
    pub aggregator: Aggregator,
    /// Hidden width of the edge network.
    pub edge_hidden: usize,
    pub decoder: Decoder,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            g: 64,
            k: 8,
            layers: 2,
            aggregator: Aggregator::Mean,
            edge_hidden: 16,
            decoder: Decoder::BnSigmoid,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.g == 0 || !self.g.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "embedding size must be positive and even, got {}",
                self.g
            )));
        }
        if self.k == 0 || self.layers == 0 || self.edge_hidden == 0 {
            return Err(ModelError::Config(
                "edge size, layer count and edge hidden width must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Total trainable scalars for a graph with `n_nodes` nodes.
    pub fn param_count(&self, n_nodes: usize) -> usize {
        let (g, k, h) = (self.g, self.k, self.edge_hidden);
        let half = g / 2;
        let encoder = n_nodes * half + NODE_FEATURE_DIM * half + half + EDGE_FEATURE_DIM * k + k;
        let per_layer = k * h + h + h * g * g + g * g;
        let bn = if self.decoder.has_bn() { 2 * g } else { 0 };
        let decoder = g * g + g + bn + g * 2 + 2;
        encoder + self.layers * per_layer + decoder
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub node_id: Tensor,
    pub w_attr: Tensor,
    pub b_attr: Tensor,
    pub w_edge: Tensor,
    pub b_edge: Tensor,
    pub layers: Vec<LayerParams>,
    pub w_hid: Tensor,
    pub b_hid: Tensor,
    pub bn: Option<BatchNormState>,
    pub w_loc: Tensor,
    pub b_loc: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = 1.0 / (rows as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

impl ModelParams {
    /// ID embeddings from N(0,1); other weights from U(±1/√fan_in); biases
    /// zero; BN scale one and shift zero.
    pub fn init(cfg: &ModelConfig, n_nodes: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (g, k, h) = (cfg.g, cfg.k, cfg.edge_hidden);
        let half = g / 2;
        let node_id = Tensor::from_parts(
            vec![n_nodes, half],
            (0..n_nodes * half).map(|_| rng.sample(StandardNormal)).collect(),
        );
        let w_attr = uniform(&mut rng, NODE_FEATURE_DIM, half);
        let w_edge = uniform(&mut rng, EDGE_FEATURE_DIM, k);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                w1: uniform(&mut rng, k, h),
                b1: Tensor::zeros(&[1, h]),
                w2: uniform(&mut rng, h, g * g),
                b2: Tensor::zeros(&[1, g * g]),
            })
            .collect();
        let w_hid = uniform(&mut rng, g, g);
        let w_loc = uniform(&mut rng, g, 2);
        Ok(Self {
            node_id,
            w_attr,
            b_attr: Tensor::zeros(&[1, half]),
            w_edge,
            b_edge: Tensor::zeros(&[1, k]),
            layers,
            w_hid,
            b_hid: Tensor::zeros(&[1, g]),
            bn: cfg.decoder.has_bn().then(|| BatchNormState::new(g)),
            w_loc,
            b_loc: Tensor::zeros(&[1, 2]),
        })
    }

    /// Trainable tensors in a fixed order, each with its weight-decay flag.
    pub fn tensors(&self) -> Vec<(&Tensor, bool)> {
        let mut out = vec![
            (&self.node_id, true),
            (&self.w_attr, true),
            (&self.b_attr, false),
            (&self.w_edge, true),
            (&self.b_edge, false),
        ];
        for l in &self.layers {
            out.extend([(&l.w1, true), (&l.b1, false), (&l.w2, true), (&l.b2, false)]);
        }
        out.extend([(&self.w_hid, true), (&self.b_hid, false)]);
        if let Some(bn) = &self.bn {
            out.extend([(&bn.gamma, false), (&bn.beta, false)]);
        }
        out.extend([(&self.w_loc, true), (&self.b_loc, false)]);
        out
    }

    /// Same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.node_id,
            &mut self.w_attr,
            &mut self.b_attr,
            &mut self.w_edge,
            &mut self.b_edge,
        ];
        for l in &mut self.layers {
            out.extend([&mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2]);
        }
        out.extend([&mut self.w_hid, &mut self.b_hid]);
        if let Some(bn) = &mut self.bn {
            out.extend([&mut bn.gamma, &mut bn.beta]);
        }
        out.extend([&mut self.w_loc, &mut self.b_loc]);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(t, _)| t.len()).sum()
    }

    /// Sum of squares over the weight-decayed tensors.
    pub fn decayed_squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .filter(|(_, d)| *d)
            .map(|(t, _)| t.squared_norm())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(t, _)| t.is_finite())
    }
}

/// The parts of an [`AttributedGraph`] the model consumes.
#[derive(Debug, Clone)]
pub struct ModelInput {
    pub node_features: Tensor,
    pub edge_features: Tensor,
    pub adjacency: Arc<Adjacency>,
}

impl ModelInput {
    pub fn num_nodes(&self) -> usize {
        self.node_features.rows()
    }
}

impl From<&AttributedGraph> for ModelInput {
    fn from(g: &AttributedGraph) -> Self {
        Self {
            node_features: g.node_features.clone(),
            edge_features: g.edge_features.clone(),
            adjacency: Arc::new(g.adjacency.clone()),
        }
    }
}

/// Tape handles produced by [`forward`].
pub struct Forward {
    /// Scaled `[N×2]` location predictions.
    pub pred: Var,
    /// Node embeddings after the encoder and after each layer.
    pub embeddings: Vec<Var>,
    /// One handle per [`ModelParams::tensors`] entry.
    pub params: Vec<Var>,
    /// BN state after folding in this batch (train mode only).
    pub bn_state: Option<BatchNormState>,
}

/// Records the full model on `tape`. Parameters become trainable leaves when
/// `trainable` is set and constants otherwise.
pub fn forward(
    tape: &mut Tape,
    input: &ModelInput,
    params: &ModelParams,
    cfg: &ModelConfig,
    mode: Mode,
    trainable: bool,
) -> Result<Forward, ModelError> {
    check_fit(input, params, cfg)?;
    let pvars: Vec<Var> = params
        .tensors()
        .into_iter()
        .map(|(t, _)| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        })
        .collect();
    forward_vars(tape, input, &pvars, params.bn.as_ref(), cfg, mode)
}

/// [`forward`] over caller-provided parameter handles, laid out as in
/// [`ModelParams::tensors`]. `bn` supplies the running statistics.
pub fn forward_vars(
    tape: &mut Tape,
    input: &ModelInput,
    pvars: &[Var],
    bn: Option<&BatchNormState>,
    cfg: &ModelConfig,
    mode: Mode,
) -> Result<Forward, ModelError> {
    cfg.validate()?;
    let expected = 5 + 4 * cfg.layers + 4 + if cfg.decoder.has_bn() { 2 } else { 0 };
    if pvars.len() != expected || bn.is_some() != cfg.decoder.has_bn() {
        return Err(ModelError::Mismatch(format!(
            "{} parameter handles, expected {expected}",
            pvars.len()
        )));
    }
    let mut next = pvars.iter().copied();
    let mut p = || next.next().expect("handle count checked above");

    let (node_id, w_attr, b_attr, w_edge, b_edge) = (p(), p(), p(), p(), p());
    let xv = tape.constant(input.node_features.clone());
    let xe = tape.constant(input.edge_features.clone());
    let attr = tape.affine(xv, w_attr, b_attr)?;
    let mut h = tape.concat_cols(node_id, attr)?;
    let e_emb = tape.affine(xe, w_edge, b_edge)?;

    let mut embeddings = vec![h];
    for _ in 0..cfg.layers {
        let (w1, b1, w2, b2) = (p(), p(), p(), p());
        let hidden = tape.affine(e_emb, w1, b1)?;
        let hidden = tape.relu(hidden);
        let conv = EdgeConv::new(Arc::clone(&input.adjacency), cfg.aggregator);
        let agg = tape.custom(Box::new(conv), &[h, hidden, w2, b2])?;
        let sum = tape.add(h, agg)?;
        h = tape.relu(sum);
        embeddings.push(h);
    }

    let (w_hid, b_hid) = (p(), p());
    let hid = tape.affine(h, w_hid, b_hid)?;
    let mut hid = tape.relu(hid);
    let mut bn_state = None;
    if let Some(state) = bn {
        let (gamma, beta) = (p(), p());
        hid = match mode {
            Mode::Train => {
                let mut s = state.clone();
                let out = tape.batch_norm_train(hid, gamma, beta, &mut s)?;
                bn_state = Some(s);
                out
            }
            Mode::Eval => tape.batch_norm_eval(hid, gamma, beta, state)?,
        };
    }
    let (w_loc, b_loc) = (p(), p());
    let mut pred = tape.affine(hid, w_loc, b_loc)?;
    if cfg.decoder.has_sigmoid() {
        pred = tape.sigmoid(pred);
    }
    Ok(Forward {
        pred,
        embeddings,
        params: pvars.to_vec(),
        bn_state,
    })
}

/// Eval-mode scaled predictions for every node.
pub fn predict(
    input: &ModelInput,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let f = forward(&mut tape, input, params, cfg, Mode::Eval, false)?;
    Ok(tape.value(f.pred).clone())
}

fn check_fit(input: &ModelInput, params: &ModelParams, cfg: &ModelConfig) -> Result<(), ModelError> {
    let n = input.num_nodes();
    if params.node_id.shape() != [n, cfg.g / 2] {
        return Err(ModelError::Mismatch(format!(
            "ID table {:?} for {n} nodes at width {}",
            params.node_id.shape(),
            cfg.g
        )));
    }
    if params.layers.len() != cfg.layers || params.bn.is_some() != cfg.decoder.has_bn() {
        return Err(ModelError::Mismatch(
            "layer count or batch-norm presence differs from the configuration".into(),
        ));
    }
    if input.adjacency.len() != n {
        return Err(ModelError::Mismatch(format!(
            "adjacency over {} nodes, features for {n}",
            input.adjacency.len()
        )));
    }
    Ok(())
}

/// Per-edge `G×G` message weight matrix from an edge embedding.
pub fn edge_weight_matrix(e_emb: &[f64], layer: &LayerParams) -> Tensor {
    let h = layer.w1.cols();
    let gg = layer.w2.cols();
    let g = (gg as f64).sqrt().round() as usize;
    let hidden: Vec<f64> = (0..h)
        .map(|c| {
            let v = layer.b1.data()[c]
                + e_emb.iter().enumerate().map(|(r, x)| x * layer.w1.get(r, c)).sum::<f64>();
            v.max(0.0)
        })
        .collect();
    let data = (0..gg)
        .map(|c| {
            layer.b2.data()[c]
                + hidden.iter().enumerate().map(|(r, x)| x * layer.w2.get(r, c)).sum::<f64>()
        })
        .collect();
    Tensor::from_parts(vec![g, g], data)
}

/// `W_e · h_j`.
pub fn message(h_j: &[f64], w_e: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; h_j.len()];
    matvec(w_e.data(), h_j, &mut out);
    out
}

/// Elementwise aggregate of equal-length messages; no messages gives zeros.
pub fn aggregate(messages: &[Vec<f64>], method: Aggregator, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for (pos, m) in messages.iter().enumerate() {
        for (o, v) in out.iter_mut().zip(m) {
            match method {
                Aggregator::Sum | Aggregator::Mean => *o += v,
                Aggregator::Max => {
                    if pos == 0 || *v > *o {
                        *o = *v;
                    }
                }
            }
        }
    }
    if method == Aggregator::Mean && !messages.is_empty() {
        let n = messages.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
    out
}

/// `relu(h_prev + a)`.
pub fn update(h_prev: &[f64], a: &[f64]) -> Vec<f64> {
    h_prev.iter().zip(a).map(|(h, x)| (h + x).max(0.0)).collect()
}
