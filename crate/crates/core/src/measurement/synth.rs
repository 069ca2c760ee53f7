use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GroundTruth, Hop, LandmarkRecord, MeasurementError, Region, TracerouteRecord};
use crate::eval::{haversine, Coord};

/// Parameters of the synthetic city-scale network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_landmarks: usize,
    pub n_routers: usize,
    pub region: Region,
    /// Probes per destination.
    pub repetitions: u32,
    /// RTT milliseconds per kilometre is `1 / prop_speed_km_per_ms`.
    pub prop_speed_km_per_ms: f64,
    /// Standard deviation of the per-hop Gaussian RTT noise.
    pub per_hop_noise_ms: f64,
    /// Share of landmarks whose final delay falls as distance grows.
    pub rule_violation_fraction: f64,
    /// Per-probe probability that an intermediate hop is anonymous.
    pub anonymity_prob: f64,
    /// Routers that get a second upstream parent; probes alternate between
    /// the two, giving a mesh-like view. 0 keeps a pure tree.
    pub extra_edges: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 500,
            n_routers: 100,
            // roughly 60 km × 60 km around Hong Kong
            region: Region {
                lat_min: 22.10,
                lat_max: 22.64,
                lon_min: 113.80,
                lon_max: 114.38,
            },
            repetitions: 30,
            prop_speed_km_per_ms: 100.0,
            per_hop_noise_ms: 0.05,
            rule_violation_fraction: 0.3,
            anonymity_prob: 0.1,
            extra_edges: 0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), MeasurementError> {
        let bad = |m: String| Err(MeasurementError::Config(m));
        if self.n_landmarks == 0 || self.n_routers == 0 || self.repetitions == 0 {
            return bad("n_landmarks, n_routers and repetitions must be positive".into());
        }
        if self.n_routers > 0xFFFF {
            return bad(format!("at most 65535 routers, got {}", self.n_routers));
        }
        if self.n_landmarks > 200 * 254 {
            return bad(format!("at most 50800 landmarks, got {}", self.n_landmarks));
        }
        let r = &self.region;
        let in_range = (-90.0..=90.0).contains(&r.lat_min)
            && (-90.0..=90.0).contains(&r.lat_max)
            && (-180.0..=180.0).contains(&r.lon_min)
            && (-180.0..=180.0).contains(&r.lon_max);
        if !in_range || r.lat_max <= r.lat_min || r.lon_max <= r.lon_min {
            return bad(format!("degenerate or out-of-range region {r:?}"));
        }
        for (name, p) in [
            ("rule_violation_fraction", self.rule_violation_fraction),
            ("anonymity_prob", self.anonymity_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.prop_speed_km_per_ms.is_finite() && self.prop_speed_km_per_ms > 0.0) {
            return bad("prop_speed_km_per_ms must be positive".into());
        }
        if !(self.per_hop_noise_ms.is_finite() && self.per_hop_noise_ms >= 0.0) {
            return bad("per_hop_noise_ms must be non-negative".into());
        }
        if self.extra_edges > self.n_routers.saturating_sub(1) {
            return bad(format!(
                "extra_edges {} exceeds the {} routers that can take a second parent",
                self.extra_edges,
                self.n_routers.saturating_sub(1)
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub traceroutes: Vec<TracerouteRecord>,
    pub landmarks: Vec<LandmarkRecord>,
    pub truth: GroundTruth,
    /// The vantage point; also present in `truth`.
    pub probe: LandmarkRecord,
}

pub const PROBE_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

fn router_ip(i: usize) -> Ipv4Addr {
    Ipv4Addr::new(10, 1, (i >> 8) as u8, i as u8)
}

fn landmark_ip(router: usize, nth: usize) -> Ipv4Addr {
    Ipv4Addr::new(
        11 + (nth / 254) as u8,
        (router >> 8) as u8,
        router as u8,
        (nth % 254 + 1) as u8,
    )
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Tree node 0 is the probing host, node `1 + i` is router `i`.
struct Topology {
    coords: Vec<Coord>,
    parent: Vec<usize>,
    alt_parent: Vec<Option<usize>>,
}

impl Topology {
    /// Routers from the host's child down to `leaf`, with the cumulative
    /// great-circle distance from the host at each. Nodes with a second parent
    /// use it on odd `(probe_seq + node)`.
    fn path_to(&self, leaf: usize, probe_seq: u32) -> Vec<(usize, f64)> {
        let mut chain = Vec::new();
        let mut node = leaf;
        while node != 0 {
            chain.push(node);
            node = match self.alt_parent[node] {
                Some(alt) if (probe_seq as usize + node) % 2 == 1 => alt,
                _ => self.parent[node],
            };
        }
        chain.reverse();
        let mut prev = 0;
        let mut dist = 0.0;
        chain
            .into_iter()
            .map(|n| {
                dist += haversine(self.coords[prev], self.coords[n]);
                prev = n;
                (n, dist)
            })
            .collect()
    }
}

/// Generates traceroutes from a probing host at the region centre towards
/// every landmark of a random router tree.
///
/// Landmarks attach to their nearest router. Each hop's RTT is cumulative
/// path distance over the propagation speed plus clamped Gaussian noise; a
/// `rule_violation_fraction` of landmarks instead get `max_distance −
/// distance` as their final distance term.
pub fn synth_network(cfg: &SynthConfig) -> Result<SynthOutput, MeasurementError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let region = cfg.region;
    let uniform_coord = |rng: &mut ChaCha8Rng| {
        Coord::new(
            round6(rng.random_range(region.lat_min..=region.lat_max)),
            round6(rng.random_range(region.lon_min..=region.lon_max)),
        )
    };

    let center = region.center();
    let host = Coord::new(round6(center.lat), round6(center.lon));
    let mut topo = Topology {
        coords: vec![host],
        parent: vec![0],
        alt_parent: vec![None],
    };
    for i in 0..cfg.n_routers {
        let c = uniform_coord(&mut rng);
        let parent = rng.random_range(0..=i);
        topo.coords.push(c);
        topo.parent.push(parent);
        topo.alt_parent.push(None);
    }
    // second parents for a random subset of routers 2..=n (router 1 can only
    // hang off the host)
    let mut candidates: Vec<usize> = (2..=cfg.n_routers).collect();
    candidates.shuffle(&mut rng);
    for &node in candidates.iter().take(cfg.extra_edges) {
        let mut alt = rng.random_range(0..node);
        if alt == topo.parent[node] {
            alt = (alt + 1) % node;
        }
        if alt != topo.parent[node] {
            topo.alt_parent[node] = Some(alt);
        }
    }

    let mut truth = GroundTruth::default();
    truth.coords.insert(PROBE_IP, host);
    for i in 0..cfg.n_routers {
        truth.coords.insert(router_ip(i), topo.coords[i + 1]);
    }

    // landmarks, attached to their nearest router
    let mut per_router = vec![0usize; cfg.n_routers];
    let mut landmarks = Vec::with_capacity(cfg.n_landmarks);
    let mut attach = Vec::with_capacity(cfg.n_landmarks);
    for _ in 0..cfg.n_landmarks {
        let c = uniform_coord(&mut rng);
        let router = (0..cfg.n_routers)
            .min_by(|&a, &b| {
                haversine(c, topo.coords[a + 1]).total_cmp(&haversine(c, topo.coords[b + 1]))
            })
            .expect("at least one router");
        let ip = landmark_ip(router, per_router[router]);
        per_router[router] += 1;
        truth.coords.insert(ip, c);
        landmarks.push(LandmarkRecord {
            ip,
            lat: c.lat,
            lon: c.lon,
        });
        attach.push(router + 1);
    }

    let mut order: Vec<usize> = (0..cfg.n_landmarks).collect();
    order.shuffle(&mut rng);
    let n_violators = (cfg.rule_violation_fraction * cfg.n_landmarks as f64).round() as usize;
    let mut violator = vec![false; cfg.n_landmarks];
    for &l in order.iter().take(n_violators) {
        violator[l] = true;
    }

    let landmark_distance = |l: usize, probe_seq: u32| -> (Vec<(usize, f64)>, f64) {
        let path = topo.path_to(attach[l], probe_seq);
        let (last_router, d) = *path.last().expect("attachment is a router");
        let total = d + haversine(topo.coords[last_router], landmarks[l].coord());
        (path, total)
    };
    let max_distance = (0..cfg.n_landmarks)
        .flat_map(|l| (0..cfg.repetitions.min(2)).map(move |s| (l, s)))
        .map(|(l, s)| landmark_distance(l, s).1)
        .fold(0.0, f64::max);

    let noise = Normal::new(0.0, cfg.per_hop_noise_ms).expect("validated std-dev");
    let speed = cfg.prop_speed_km_per_ms;
    let mut traceroutes = Vec::with_capacity(cfg.n_landmarks * cfg.repetitions as usize);
    for l in 0..cfg.n_landmarks {
        for seq in 0..cfg.repetitions {
            let (path, dist) = landmark_distance(l, seq);
            let mut hops = Vec::with_capacity(path.len() + 1);
            for (k, &(node, d)) in path.iter().enumerate() {
                let rtt = (d / speed + noise.sample(&mut rng)).max(0.0);
                let ttl = k as u32 + 1;
                if rng.random_bool(cfg.anonymity_prob) {
                    hops.push(Hop::anonymous(ttl));
                } else {
                    hops.push(Hop::observed(ttl, router_ip(node - 1), rtt));
                }
            }
            let term = if violator[l] { max_distance - dist } else { dist };
            let rtt = (term / speed + noise.sample(&mut rng)).max(0.0);
            hops.push(Hop::observed(path.len() as u32 + 1, landmarks[l].ip, rtt));
            traceroutes.push(TracerouteRecord {
                dst_ip: landmarks[l].ip,
                probe_seq: seq,
                hops,
            });
        }
    }

    Ok(SynthOutput {
        traceroutes,
        landmarks,
        truth,
        probe: LandmarkRecord {
            ip: PROBE_IP,
            lat: host.lat,
            lon: host.lon,
        },
    })
}
