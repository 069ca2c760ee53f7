use std::cmp::Ordering;
use std::net::Ipv4Addr;

use super::{centroid, BaselineError, PathIndex};
use crate::eval::{haversine, Coord};
use crate::measurement::LandmarkRecord;

/// Last router shared by two paths, with its cumulative delay `d_pr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonRouter {
    pub ip: Ipv4Addr,
    pub delay_ms: f64,
}

/// The shared hop with the largest cumulative delay on the target's path
/// (later position on ties). Paths with no shared hop meet at the probing
/// host, `d_pr = 0`.
pub fn closest_common_router(
    target: Ipv4Addr,
    landmark: Ipv4Addr,
    index: &PathIndex,
) -> Result<CommonRouter, BaselineError> {
    let tp = index.path(target)?;
    let lp = index.path(landmark)?;
    let mut best = CommonRouter {
        ip: index.probe(),
        delay_ms: 0.0,
    };
    let mut found = false;
    for h in tp {
        if lp.iter().any(|o| o.ip == h.ip) && (!found || h.delay_ms >= best.delay_ms) {
            best = CommonRouter {
                ip: h.ip,
                delay_ms: h.delay_ms,
            };
            found = true;
        }
    }
    Ok(best)
}

/// `(d_pt − d_pr) + (d_pl − d_pr)`.
pub fn relative_delay(
    target: Ipv4Addr,
    landmark: Ipv4Addr,
    index: &PathIndex,
) -> Result<f64, BaselineError> {
    let d_pr = closest_common_router(target, landmark, index)?.delay_ms;
    Ok((index.delay_to(target)? - d_pr) + (index.delay_to(landmark)? - d_pr))
}

/// Position of the landmark selected by `better` over relative delays; equal
/// delays go to the lower address.
fn pick(
    target: Ipv4Addr,
    landmarks: &[&LandmarkRecord],
    index: &PathIndex,
    better: Ordering,
) -> Result<usize, BaselineError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, l) in landmarks.iter().enumerate() {
        let rd = relative_delay(target, l.ip, index)?;
        let wins = match best {
            None => true,
            Some((j, b)) => match rd.total_cmp(&b) {
                Ordering::Equal => l.ip < landmarks[j].ip,
                o => o == better,
            },
        };
        if wins {
            best = Some((i, rd));
        }
    }
    best.map(|(i, _)| i).ok_or(BaselineError::NoLandmarks)
}

/// Location of the landmark with the smallest relative delay to `target`.
pub fn slg_geolocate(
    target: Ipv4Addr,
    landmarks: &[LandmarkRecord],
    index: &PathIndex,
) -> Result<Coord, BaselineError> {
    let refs: Vec<&LandmarkRecord> = landmarks.iter().collect();
    Ok(refs[pick(target, &refs, index, Ordering::Less)?].coord())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrGroup {
    /// Delay grows with distance.
    A,
    /// Delay falls as distance grows.
    B,
    C,
}

/// Per landmark, the Pearson correlation between its relative delays and
/// its great-circle distances to every other landmark, and the group that
/// correlation falls in.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrGroups {
    pub c_a: f64,
    pub c_b: f64,
    pub correlations: Vec<f64>,
    pub groups: Vec<CorrGroup>,
}

impl CorrGroups {
    pub fn compute(
        landmarks: &[LandmarkRecord],
        index: &PathIndex,
        c_a: f64,
        c_b: f64,
    ) -> Result<Self, BaselineError> {
        if !(c_a.is_finite() && c_b.is_finite() && c_b < c_a) {
            return Err(BaselineError::Config(format!(
                "need finite thresholds with C_b < C_a, got C_a {c_a}, C_b {c_b}"
            )));
        }
        let n = landmarks.len();
        let mut rd = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    rd[i * n + j] = relative_delay(landmarks[i].ip, landmarks[j].ip, index)?;
                }
            }
        }
        let mut correlations = Vec::with_capacity(n);
        for (i, li) in landmarks.iter().enumerate() {
            let (x, y): (Vec<f64>, Vec<f64>) = landmarks
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, lj)| (rd[i * n + j], haversine(li.coord(), lj.coord())))
                .unzip();
            correlations.push(pearson(&x, &y));
        }
        let groups = correlations
            .iter()
            .map(|&c| {
                if c > c_a {
                    CorrGroup::A
                } else if c < c_b {
                    CorrGroup::B
                } else {
                    CorrGroup::C
                }
            })
            .collect();
        Ok(Self {
            c_a,
            c_b,
            correlations,
            groups,
        })
    }
}

/// Sample Pearson correlation clamped to `[−1, 1]`; 0 when either side has
/// no variance or fewer than two points.
fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Corr-SLG. Each target takes the group of its minimum-relative-delay
/// landmark and is then located within that group: nearest by relative
/// delay in A, farthest in B, the group centroid in C.
pub fn corr_slg_geolocate(
    targets: &[Ipv4Addr],
    landmarks: &[LandmarkRecord],
    index: &PathIndex,
    c_a: f64,
    c_b: f64,
) -> Result<Vec<Coord>, BaselineError> {
    let groups = CorrGroups::compute(landmarks, index, c_a, c_b)?;
    let all: Vec<&LandmarkRecord> = landmarks.iter().collect();
    let members = |g: CorrGroup| -> Vec<&LandmarkRecord> {
        landmarks
            .iter()
            .zip(&groups.groups)
            .filter(|(_, &lg)| lg == g)
            .map(|(l, _)| l)
            .collect()
    };
    let (in_a, in_b, in_c) = (members(CorrGroup::A), members(CorrGroup::B), members(CorrGroup::C));
    let c_centroid = centroid(&in_c.iter().map(|l| l.coord()).collect::<Vec<_>>());

    let within = |t: Ipv4Addr, g: &[&LandmarkRecord], order: Ordering| {
        (!g.is_empty()).then(|| pick(t, g, index, order).map(|i| g[i].coord()))
    };
    targets
        .iter()
        .map(|&t| {
            let nearest = pick(t, &all, index, Ordering::Less)?;
            let coord = match groups.groups[nearest] {
                CorrGroup::A => within(t, &in_a, Ordering::Less),
                CorrGroup::B => within(t, &in_b, Ordering::Greater),
                CorrGroup::C => c_centroid.map(Ok),
            };
            coord.unwrap_or_else(|| Ok(all[nearest].coord()))
        })
        .collect()
}
