use serde::{Deserialize, Serialize};

use super::{train, LabelSet, TrainConfig, TrainError, TrainOutcome, TrainReport};
use crate::model::{Aggregator, ModelInput};

/// Candidate values per hyperparameter. Cells are enumerated in
/// lexicographic order over the fields as declared. An empty
/// `edge_hidden` means `2K` for every K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub g: Vec<usize>,
    pub layers: Vec<usize>,
    pub aggregator: Vec<Aggregator>,
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub k: Vec<usize>,
    pub edge_hidden: Vec<usize>,
}

impl GridSpec {
    /// A one-cell grid holding `base`'s values.
    pub fn single(base: &TrainConfig) -> Self {
        Self {
            g: vec![base.model.g],
            layers: vec![base.model.layers],
            aggregator: vec![base.model.aggregator],
            lr: vec![base.lr],
            weight_decay: vec![base.weight_decay],
            k: vec![base.model.k],
            edge_hidden: vec![base.model.edge_hidden],
        }
    }

    /// Every cell, with model seeds derived from `base.model.seed` and the
    /// cell index.
    pub fn cells(&self, base: &TrainConfig) -> Vec<TrainConfig> {
        let auto = [0usize];
        let hidden: &[usize] = if self.edge_hidden.is_empty() { &auto } else { &self.edge_hidden };
        let mut out = Vec::new();
        for &g in &self.g {
            for &layers in &self.layers {
                for &aggregator in &self.aggregator {
                    for &lr in &self.lr {
                        for &weight_decay in &self.weight_decay {
                            for &k in &self.k {
                                for &h in hidden {
                                    let mut c = *base;
                                    c.lr = lr;
                                    c.weight_decay = weight_decay;
                                    c.model.g = g;
                                    c.model.layers = layers;
                                    c.model.aggregator = aggregator;
                                    c.model.k = k;
                                    c.model.edge_hidden = if h == 0 { 2 * k } else { h };
                                    c.model.seed = base.model.seed.wrapping_add(out.len() as u64);
                                    out.push(c);
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub config: TrainConfig,
    pub report: TrainReport,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: usize,
    pub cells: Vec<GridCell>,
    /// The winning cell's trained model.
    pub outcome: TrainOutcome,
}

/// Trains every cell and keeps the one with the lowest validation error;
/// ties go to the earlier best epoch, then to the earlier cell.
pub fn grid_search(
    input: &ModelInput,
    labels: &LabelSet,
    base: &TrainConfig,
    grid: &GridSpec,
) -> Result<GridResult, TrainError> {
    let configs = grid.cells(base);
    if configs.is_empty() {
        return Err(TrainError::Config("empty hyperparameter grid".into()));
    }
    let mut cells = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, TrainOutcome)> = None;
    for (i, cfg) in configs.iter().enumerate() {
        let outcome = train(input, labels, cfg)?;
        let better = match &best {
            None => true,
            Some((_, b)) => {
                let (r, br) = (&outcome.report, &b.report);
                r.best_val_km < br.best_val_km
                    || (r.best_val_km == br.best_val_km && r.best_epoch < br.best_epoch)
            }
        };
        cells.push(GridCell {
            config: *cfg,
            report: outcome.report.clone(),
        });
        if better {
            best = Some((i, outcome));
        }
    }
    let (best, outcome) = best.expect("grid is non-empty");
    Ok(GridResult {
        best,
        cells,
        outcome,
    })
}
