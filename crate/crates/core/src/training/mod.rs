//! Full-batch training with early stopping, dataset splitting, coordinate
//! scaling, grid search and model checkpoints.

mod grid;
mod scaler;
mod split;

use std::io::{self, Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::eval::{haversine, Coord};
use crate::graph::AttributedGraph;
use crate::model::{forward, predict, ModelConfig, ModelError, ModelInput, ModelParams};
use crate::numeric::{adam_step, AdamState, BatchNormState, Mode, NumericError, Tape, Tensor};

pub use grid::{grid_search, GridCell, GridResult, GridSpec};
pub use scaler::{CoordTransform, GeoScaler, SCALER_MARGIN_DEG};
pub use split::{split, Split, SplitSpec, MIN_SPLIT_LANDMARKS};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: {what} is not finite")]
    Divergence { epoch: usize, what: &'static str },
    #[error("need at least {min} landmarks to split, got {0}", min = MIN_SPLIT_LANDMARKS)]
    TooFewLandmarks(usize),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("no {0} labels")]
    NoLabels(&'static str),
    #[error("label refers to node {node} but the graph has {n_nodes} nodes")]
    UnknownNode { node: usize, n_nodes: usize },
    #[error("{0} is not a node of the graph")]
    UnknownIp(Ipv4Addr),
    #[error("split file line {line}: {msg}")]
    SplitFile { line: usize, msg: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<NumericError> for TrainError {
    fn from(e: NumericError) -> Self {
        Self::Model(ModelError::Numeric(e))
    }
}

/// Space the decoder's output is trained in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpace {
    /// Min-max scaled with the margin-extended training box.
    Scaled,
    /// Raw degrees.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// λ of the `λ‖Θ‖²` penalty.
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub target_space: TargetSpace,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            weight_decay: 0.001,
            max_epochs: 4000,
            patience: 1000,
            target_space: TargetSpace::Scaled,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::Config(format!("learning rate {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(TrainError::Config(format!("weight decay {}", self.weight_decay)));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(TrainError::Config(format!(
                "need 0 < patience ({}) <= max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Known locations keyed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub train: Vec<(usize, Coord)>,
    pub val: Vec<(usize, Coord)>,
}

impl LabelSet {
    /// Maps ip-keyed locations onto node ids. The probing host (node 0) is
    /// always a training label.
    pub fn from_ips(
        graph: &AttributedGraph,
        probe: Coord,
        train: &[(Ipv4Addr, Coord)],
        val: &[(Ipv4Addr, Coord)],
    ) -> Result<Self, TrainError> {
        let index = graph.ip_index();
        let lookup = |rows: &[(Ipv4Addr, Coord)]| -> Result<Vec<(usize, Coord)>, TrainError> {
            rows.iter()
                .map(|(ip, c)| index.get(ip).map(|&n| (n, *c)).ok_or(TrainError::UnknownIp(*ip)))
                .collect()
        };
        let mut train_rows = vec![(graph.probe().id, probe)];
        train_rows.extend(lookup(train)?);
        Ok(Self {
            train: train_rows,
            val: lookup(val)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Data term plus penalty, before this epoch's update.
    pub train_loss: f64,
    /// After this epoch's update.
    pub val_avg_km: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_km: f64,
    pub stop_reason: StopReason,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainReport {
    pub fn write_json<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters from the best validation epoch.
    pub params: ModelParams,
    pub transform: CoordTransform,
}

pub fn fit_transform(space: TargetSpace, train: &[(usize, Coord)]) -> Result<CoordTransform, TrainError> {
    match space {
        TargetSpace::Raw => Ok(CoordTransform::Identity),
        TargetSpace::Scaled => {
            let coords: Vec<Coord> = train.iter().map(|(_, c)| *c).collect();
            GeoScaler::fit(&coords)
                .map(CoordTransform::MinMax)
                .ok_or(TrainError::NoLabels("training"))
        }
    }
}

/// Data term and its gradients for every parameter tensor (in
/// [`ModelParams::tensors`] order). Only `labels.train` enters the loss.
pub struct Step {
    pub data_loss: f64,
    pub grads: Vec<Tensor>,
    pub bn_state: Option<BatchNormState>,
}

pub fn training_step(
    input: &ModelInput,
    params: &ModelParams,
    cfg: &ModelConfig,
    transform: &CoordTransform,
    labels: &LabelSet,
) -> Result<Step, TrainError> {
    let rows: Vec<usize> = labels.train.iter().map(|(n, _)| *n).collect();
    let target: Vec<f64> = labels
        .train
        .iter()
        .flat_map(|(_, c)| transform.forward(*c))
        .collect();
    let target = Tensor::matrix(rows.len(), 2, target)?;

    let mut tape = Tape::new();
    let f = forward(&mut tape, input, params, cfg, Mode::Train, true)?;
    let sel = tape.gather_rows(f.pred, &rows)?;
    let loss = tape.mse(sel, &target)?;
    let data_loss = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok(Step {
        data_loss,
        grads: f.params.iter().map(|&v| grads.wrt(v).clone()).collect(),
        bn_state: f.bn_state,
    })
}

/// Eval-mode predicted coordinates for every node.
pub fn predict_coords(
    input: &ModelInput,
    params: &ModelParams,
    cfg: &ModelConfig,
    transform: &CoordTransform,
) -> Result<Vec<Coord>, TrainError> {
    let out = predict(input, params, cfg)?;
    Ok((0..out.rows())
        .map(|i| transform.inverse([out.get(i, 0), out.get(i, 1)]))
        .collect())
}

/// Mean haversine error over `labels` in eval mode.
pub fn average_error_km(
    input: &ModelInput,
    params: &ModelParams,
    cfg: &ModelConfig,
    transform: &CoordTransform,
    labels: &[(usize, Coord)],
) -> Result<f64, TrainError> {
    if labels.is_empty() {
        return Err(TrainError::NoLabels("evaluation"));
    }
    let coords = predict_coords(input, params, cfg, transform)?;
    let total: f64 = labels.iter().map(|(n, c)| haversine(coords[*n], *c)).sum();
    Ok(total / labels.len() as f64)
}

fn check_labels(input: &ModelInput, labels: &LabelSet) -> Result<(), TrainError> {
    if labels.train.is_empty() {
        return Err(TrainError::NoLabels("training"));
    }
    if labels.val.is_empty() {
        return Err(TrainError::NoLabels("validation"));
    }
    let n_nodes = input.num_nodes();
    if let Some(&(node, _)) = labels
        .train
        .iter()
        .chain(&labels.val)
        .find(|(n, _)| *n >= n_nodes)
    {
        return Err(TrainError::UnknownNode { node, n_nodes });
    }
    Ok(())
}

/// Reports a non-finite intermediate as divergence at `epoch`.
fn diverged(epoch: usize, what: &'static str) -> impl FnOnce(TrainError) -> TrainError {
    move |e| match e {
        TrainError::Model(ModelError::Numeric(NumericError::NonFinite(_))) => {
            TrainError::Divergence { epoch, what }
        }
        other => other,
    }
}

/// Full-batch training with Adam. After every epoch the validation error is
/// measured; training stops once `patience` epochs pass without a strict
/// improvement, and the parameters of the best epoch are returned.
pub fn train(input: &ModelInput, labels: &LabelSet, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    check_labels(input, labels)?;
    let transform = fit_transform(cfg.target_space, &labels.train)?;
    let mut params = ModelParams::init(&cfg.model, input.num_nodes())?;
    let decay: Vec<bool> = params.tensors().iter().map(|(_, d)| *d).collect();
    let mut adam = AdamState::new(params.tensors().iter().map(|(t, _)| t.shape()));

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 0..cfg.max_epochs {
        let step = training_step(input, &params, &cfg.model, &transform, labels)
            .map_err(diverged(epoch, "forward pass"))?;
        let train_loss = step.data_loss + cfg.weight_decay * params.decayed_squared_norm();
        if !train_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, what: "training loss" });
        }
        {
            let grads: Vec<&Tensor> = step.grads.iter().collect();
            let mut tensors = params.tensors_mut();
            adam_step(&mut tensors, &grads, &decay, &mut adam, cfg.lr, cfg.weight_decay)
                .map_err(|e| diverged(epoch, "parameter update")(e.into()))?;
        }
        if let (Some(bn), Some(state)) = (params.bn.as_mut(), step.bn_state) {
            bn.running_mean = state.running_mean;
            bn.running_var = state.running_var;
            bn.batches_seen = state.batches_seen;
        }
        if !params.is_finite() {
            return Err(TrainError::Divergence { epoch, what: "parameter update" });
        }
        let val_avg_km = average_error_km(input, &params, &cfg.model, &transform, &labels.val)
            .map_err(diverged(epoch, "validation error"))?;
        if !val_avg_km.is_finite() {
            return Err(TrainError::Divergence { epoch, what: "validation error" });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_avg_km,
        });
        match &best {
            Some((_, b, _)) if val_avg_km >= *b => {}
            _ => best = Some((epoch, val_avg_km, params.clone())),
        }
        let best_epoch = best.as_ref().map_or(0, |b| b.0);
        if epoch - best_epoch >= cfg.patience {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }

    let (best_epoch, best_val_km, best_params) = best.expect("max_epochs > 0");
    Ok(TrainOutcome {
        report: TrainReport {
            config: *cfg,
            best_epoch,
            best_val_km,
            stop_reason,
            epochs_run: history.len(),
            history,
        },
        params: best_params,
        transform,
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model together with everything needed to reuse it on the graph
/// it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub params: ModelParams,
    pub transform: CoordTransform,
    /// Node ips in id order, to detect a mismatched graph.
    pub node_ips: Vec<Ipv4Addr>,
    pub test_ips: Vec<Ipv4Addr>,
}

impl Checkpoint {
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), TrainError> {
        serde_json::to_writer(&mut w, self).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, TrainError> {
        let ck: Self =
            serde_json::from_reader(r).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported format version {}",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}
