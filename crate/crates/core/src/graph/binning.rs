use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BINS: usize = 10;

const MAX_ITERS: usize = 300;
const TOL: f64 = 1e-9;

/// 1-D k-means centers, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinModel {
    pub centers: Vec<f64>,
}

impl BinModel {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    /// Index of the nearest center; ties go to the lower index.
    pub fn assign(&self, v: f64) -> usize {
        nearest(&self.centers, v)
    }
}

fn nearest(centers: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = (v - centers[0]).abs();
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = (v - c).abs();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// When there are fewer distinct values than `k`, seeding runs out of
/// positive-distance candidates and the surplus centers duplicate existing
/// ones; [`BinModel::assign`] then sends every value to the lowest copy.
///
/// # Panics
/// If `values` is empty or `k` is zero.
pub fn kmeans_bin(values: &[f64], k: usize, seed: u64) -> BinModel {
    assert!(!values.is_empty() && k > 0, "kmeans_bin needs values and k > 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centers = Vec::with_capacity(k);
    centers.push(values[rng.random_range(0..values.len())]);
    let mut d2: Vec<f64> = values.iter().map(|v| (v - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(i);
                    if r < *w {
                        break;
                    }
                    r -= w;
                }
            }
            values[pick.expect("positive total implies a positive weight")]
        } else {
            centers[0]
        };
        for (w, v) in d2.iter_mut().zip(values) {
            *w = w.min((v - next).powi(2));
        }
        centers.push(next);
    }
    centers.sort_by(f64::total_cmp);

    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for _ in 0..MAX_ITERS {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for &v in values {
            let b = nearest(&centers, v);
            sums[b] += v;
            counts[b] += 1;
        }
        let mut moved: f64 = 0.0;
        for i in 0..k {
            if counts[i] > 0 {
                let c = sums[i] / counts[i] as f64;
                moved = moved.max((c - centers[i]).abs());
                centers[i] = c;
            }
        }
        if moved < TOL {
            break;
        }
    }
    centers.sort_by(f64::total_cmp);
    BinModel { centers }
}
