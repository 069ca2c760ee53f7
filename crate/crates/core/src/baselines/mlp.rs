use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineError, PathIndex};
use crate::eval::Coord;
use crate::numeric::{adam_step, AdamState, NumericError, Tape, Tensor, Var};
use crate::training::GeoScaler;

pub const MLP_HIDDEN_WIDTHS: [usize; 4] = [32, 64, 128, 256];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpGeoConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Input value marking a router on the path.
    pub beta: f64,
    pub seed: u64,
}

impl Default for MlpGeoConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            lr: 0.001,
            epochs: 20_000,
            beta: 30.0,
            seed: 0,
        }
    }
}

impl MlpGeoConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if !MLP_HIDDEN_WIDTHS.contains(&self.hidden) {
            return Err(BaselineError::Config(format!(
                "hidden width {} not in {MLP_HIDDEN_WIDTHS:?}",
                self.hidden
            )));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(BaselineError::Config(format!("learning rate {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(BaselineError::Config("epochs must be positive".into()));
        }
        if !self.beta.is_finite() {
            return Err(BaselineError::Config(format!("beta {}", self.beta)));
        }
        Ok(())
    }
}

/// Three dense layers `input → hidden → hidden → 2` (ReLU between) from the
/// standardized probe delay and a router-presence vector to scaled
/// coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGeoModel {
    pub config: MlpGeoConfig,
    /// Router vocabulary, ascending; slot `i + 1` of the input is `routers[i]`.
    pub routers: Vec<Ipv4Addr>,
    pub delay_mean: f64,
    pub delay_std: f64,
    pub scaler: GeoScaler,
    /// `w1, b1, w2, b2, w3, b3`.
    pub params: Vec<Tensor>,
    pub final_loss: f64,
}

impl MlpGeoModel {
    /// `[(d_pt − mean) / std, presence…]` with `beta` at every router the
    /// path crosses before its destination.
    pub fn encode(&self, index: &PathIndex, ip: Ipv4Addr) -> Result<Vec<f64>, BaselineError> {
        let hops = index.path(ip)?;
        let mut x = vec![0.0; 1 + self.routers.len()];
        x[0] = (index.delay_to(ip)? - self.delay_mean) / self.delay_std;
        for h in &hops[..hops.len() - 1] {
            if let Ok(slot) = self.routers.binary_search(&h.ip) {
                x[1 + slot] = self.config.beta;
            }
        }
        Ok(x)
    }

    fn design(&self, index: &PathIndex, ips: &[Ipv4Addr]) -> Result<Tensor, BaselineError> {
        let mut data = Vec::with_capacity(ips.len() * (1 + self.routers.len()));
        for ip in ips {
            data.extend(self.encode(index, *ip)?);
        }
        Ok(Tensor::matrix(ips.len(), 1 + self.routers.len(), data)?)
    }
}

pub(crate) fn mlp_forward(tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var, NumericError> {
    let h1 = tape.affine(x, p[0], p[1])?;
    let h1 = tape.relu(h1);
    let h2 = tape.affine(h1, p[2], p[3])?;
    let h2 = tape.relu(h2);
    tape.affine(h2, p[4], p[5])
}

fn init_params(input: usize, hidden: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dense = |fan_in: usize, fan_out: usize| {
        let a = 1.0 / (fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-a..a)).collect();
        [
            Tensor::from_parts(vec![fan_in, fan_out], w),
            Tensor::zeros(&[1, fan_out]),
        ]
    };
    [dense(input, hidden), dense(hidden, hidden), dense(hidden, 2)]
        .into_iter()
        .flatten()
        .collect()
}

/// Full-batch Adam on the summed squared error in scaled coordinates, for
/// `config.epochs` epochs.
pub fn mlp_geo_train(
    index: &PathIndex,
    labels: &[(Ipv4Addr, Coord)],
    config: &MlpGeoConfig,
) -> Result<MlpGeoModel, BaselineError> {
    config.validate()?;
    let coords: Vec<Coord> = labels.iter().map(|(_, c)| *c).collect();
    let scaler = GeoScaler::fit(&coords).ok_or(BaselineError::NoLandmarks)?;
    let ips: Vec<Ipv4Addr> = labels.iter().map(|(ip, _)| *ip).collect();
    let delays = ips
        .iter()
        .map(|ip| index.delay_to(*ip))
        .collect::<Result<Vec<f64>, _>>()?;
    let n = delays.len() as f64;
    let delay_mean = delays.iter().sum::<f64>() / n;
    let var = delays.iter().map(|d| (d - delay_mean).powi(2)).sum::<f64>() / n;
    let delay_std = if var > 0.0 { var.sqrt() } else { 1.0 };

    let routers: Vec<Ipv4Addr> = index.routers().collect();
    let mut model = MlpGeoModel {
        config: *config,
        params: init_params(1 + routers.len(), config.hidden, config.seed),
        routers,
        delay_mean,
        delay_std,
        scaler,
        final_loss: f64::NAN,
    };
    let x = model.design(index, &ips)?;
    let y: Vec<f64> = coords.iter().flat_map(|c| scaler.transform(*c)).collect();
    let y = Tensor::matrix(labels.len(), 2, y)?;

    let mut adam = AdamState::new(model.params.iter().map(Tensor::shape));
    let decay = vec![false; model.params.len()];
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let pv: Vec<Var> = model.params.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = mlp_forward(&mut tape, xv, &pv)?;
        let loss = tape.mse(out, &y)?;
        let value = tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(BaselineError::Divergence(epoch));
        }
        let grads = tape.backward(loss)?;
        let grads: Vec<&Tensor> = pv.iter().map(|&v| grads.wrt(v)).collect();
        let mut params: Vec<&mut Tensor> = model.params.iter_mut().collect();
        adam_step(&mut params, &grads, &decay, &mut adam, config.lr, 0.0)?;
        if !model.params.iter().all(Tensor::is_finite) {
            return Err(BaselineError::Divergence(epoch));
        }
        model.final_loss = value;
    }
    Ok(model)
}

pub fn mlp_geo_predict(
    model: &MlpGeoModel,
    index: &PathIndex,
    targets: &[Ipv4Addr],
) -> Result<Vec<Coord>, BaselineError> {
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    let x = model.design(index, targets)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let pv: Vec<Var> = model.params.iter().map(|t| tape.constant(t.clone())).collect();
    let out = mlp_forward(&mut tape, xv, &pv)?;
    let out = tape.value(out);
    Ok((0..out.rows())
        .map(|i| model.scaler.inverse([out.get(i, 0), out.get(i, 1)]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::IndexedHop;
    use crate::eval::haversine;
    use crate::measurement::{synth_network, SynthConfig};
    use crate::numeric::{grad_check_many, GradCheckOptions};
    use crate::pipeline::preprocess_synth;
    use std::collections::BTreeMap;

    fn ip(d: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 1, d)
    }

    fn hop(d: u8, delay_ms: f64) -> IndexedHop {
        IndexedHop { ip: ip(d), delay_ms }
    }

    fn toy() -> PathIndex {
        let mut m = BTreeMap::new();
        m.insert(ip(10), vec![hop(1, 1.0), hop(10, 2.0)]);
        m.insert(ip(11), vec![hop(1, 1.0), hop(2, 1.5), hop(11, 3.0)]);
        m.insert(ip(12), vec![hop(3, 0.5), hop(12, 1.0)]);
        PathIndex::from_paths(Ipv4Addr::new(10, 0, 0, 1), m)
    }

    fn quick(epochs: usize) -> MlpGeoConfig {
        MlpGeoConfig {
            hidden: 32,
            epochs,
            ..MlpGeoConfig::default()
        }
    }

    #[test]
    fn presence_vector_marks_path_routers_with_beta() {
        let idx = toy();
        let labels = [
            (ip(10), Coord::new(22.1, 114.0)),
            (ip(11), Coord::new(22.3, 114.2)),
        ];
        let m = mlp_geo_train(&idx, &labels, &quick(1)).unwrap();
        assert_eq!(m.routers, [ip(1), ip(2), ip(3)]);
        let x = m.encode(&idx, ip(10)).unwrap();
        assert_eq!(&x[1..], [30.0, 0.0, 0.0]);
        assert_eq!(&m.encode(&idx, ip(11)).unwrap()[1..], [30.0, 30.0, 0.0]);
        assert_eq!(&m.encode(&idx, ip(12)).unwrap()[1..], [0.0, 0.0, 30.0]);
        // delays 2 and 3 standardize to −1 and +1
        assert_eq!(x[0], -1.0);
    }

    #[test]
    fn predicts_one_row_per_target() {
        let idx = toy();
        let labels = [
            (ip(10), Coord::new(22.1, 114.0)),
            (ip(11), Coord::new(22.3, 114.2)),
        ];
        let m = mlp_geo_train(&idx, &labels, &quick(5)).unwrap();
        assert_eq!(mlp_geo_predict(&m, &idx, &[ip(12), ip(10), ip(11)]).unwrap().len(), 3);
        assert!(mlp_geo_predict(&m, &idx, &[]).unwrap().is_empty());
        assert!(matches!(
            mlp_geo_predict(&m, &idx, &[ip(77)]),
            Err(BaselineError::NoPath(_))
        ));
    }

    #[test]
    fn config_validation_and_divergence() {
        let idx = toy();
        let labels = [(ip(10), Coord::new(22.1, 114.0)), (ip(11), Coord::new(22.3, 114.2))];
        let bad = MlpGeoConfig {
            hidden: 48,
            ..quick(1)
        };
        assert!(matches!(mlp_geo_train(&idx, &labels, &bad), Err(BaselineError::Config(_))));
        let huge = MlpGeoConfig {
            beta: 1e200,
            ..quick(3)
        };
        assert!(matches!(
            mlp_geo_train(&idx, &labels, &huge),
            Err(BaselineError::Divergence(0))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_parts(vec![6, 4], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect());
        let y = Tensor::from_parts(vec![6, 2], (0..12).map(|_| rng.random_range(0.0..1.0)).collect());
        let params = init_params(4, 5, 9);
        let report = grad_check_many(
            |tape, vars| {
                let xv = tape.constant(x.clone());
                let out = mlp_forward(tape, xv, vars)?;
                tape.mse(out, &y)
            },
            &params,
            GradCheckOptions {
                skip_kinks: true,
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-3, "{report:?}");
        assert!(report.checked > report.skipped);
    }

    #[test]
    fn overfits_twenty_noise_free_landmarks() {
        let out = synth_network(&SynthConfig {
            n_landmarks: 20,
            n_routers: 200,
            repetitions: 1,
            per_hop_noise_ms: 0.0,
            rule_violation_fraction: 0.0,
            anonymity_prob: 0.0,
            seed: 6,
            ..SynthConfig::default()
        })
        .unwrap();
        let bundle = preprocess_synth(&out, 0).unwrap();
        let idx = PathIndex::new(out.probe.ip, &bundle.completed_paths, &bundle.graph);
        let labels: Vec<(Ipv4Addr, Coord)> = out.landmarks.iter().map(|l| (l.ip, l.coord())).collect();
        let m = mlp_geo_train(&idx, &labels, &MlpGeoConfig::default()).unwrap();
        let ips: Vec<Ipv4Addr> = labels.iter().map(|(ip, _)| *ip).collect();
        // landmarks behind the same routers differ only by delay and are not
        // separable, so the topology must give every landmark its own path
        let mut presence: Vec<Vec<f64>> = ips.iter().map(|ip| m.encode(&idx, *ip).unwrap()[1..].to_vec()).collect();
        presence.sort_by(|a, b| a.partial_cmp(b).unwrap());
        presence.dedup();
        assert_eq!(presence.len(), ips.len());
        let pred = mlp_geo_predict(&m, &idx, &ips).unwrap();
        let avg = pred
            .iter()
            .zip(&labels)
            .map(|(p, (_, t))| haversine(*p, *t))
            .sum::<f64>()
            / labels.len() as f64;
        assert!(avg < 1.0, "average training error {avg} km");
    }
}
