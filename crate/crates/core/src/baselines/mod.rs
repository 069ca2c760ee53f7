//! Delay-based reference geolocators sharing the graph, paths and splits of
//! the GNN pipeline: SLG, Corr-SLG, MLP-Geo and a centroid predictor.

mod mlp;
mod slg;

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use crate::eval::Coord;
use crate::graph::{AttributedGraph, RoutingPath};
use crate::numeric::NumericError;

pub use mlp::{mlp_geo_predict, mlp_geo_train, MlpGeoConfig, MlpGeoModel, MLP_HIDDEN_WIDTHS};
pub use slg::{
    closest_common_router, corr_slg_geolocate, relative_delay, slg_geolocate, CommonRouter,
    CorrGroup, CorrGroups,
};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("no routing path to {0}")]
    NoPath(Ipv4Addr),
    #[error("no landmarks to geolocate against")]
    NoLandmarks,
    #[error("invalid baseline configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {0}")]
    Divergence(usize),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

/// A known hop on a routing path with its cumulative delay from the probing
/// host.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedHop {
    pub ip: Ipv4Addr,
    pub delay_ms: f64,
}

/// Per destination, its routing path with cumulative delays, plus the
/// reverse map from router to the destinations routed through it.
#[derive(Debug, Clone, PartialEq)]
pub struct PathIndex {
    probe: Ipv4Addr,
    paths: BTreeMap<Ipv4Addr, Vec<IndexedHop>>,
    through: BTreeMap<Ipv4Addr, Vec<Ipv4Addr>>,
}

impl PathIndex {
    /// Indexes the completed paths over the graph's node delays. A
    /// destination with several distinct paths keeps the one with the
    /// fewest anonymous hops (earliest on ties). Anonymous hops and hops
    /// missing from the graph are dropped.
    pub fn new(probe: Ipv4Addr, completed: &[RoutingPath], graph: &AttributedGraph) -> Self {
        let delays: HashMap<Ipv4Addr, f64> =
            graph.nodes.iter().map(|n| (n.ip, n.delay_ms)).collect();
        let mut chosen: BTreeMap<Ipv4Addr, &RoutingPath> = BTreeMap::new();
        for p in completed {
            match chosen.get(&p.dst_ip) {
                Some(q) if q.anonymous_count() <= p.anonymous_count() => {}
                _ => {
                    chosen.insert(p.dst_ip, p);
                }
            }
        }
        let paths = chosen
            .into_iter()
            .filter(|(dst, _)| delays.contains_key(dst))
            .map(|(dst, p)| {
                let mut hops: Vec<IndexedHop> = p
                    .entries
                    .iter()
                    .flatten()
                    .filter_map(|ip| delays.get(ip).map(|&d| IndexedHop { ip: *ip, delay_ms: d }))
                    .collect();
                if hops.last().map(|h| h.ip) != Some(dst) {
                    hops.push(IndexedHop {
                        ip: dst,
                        delay_ms: delays[&dst],
                    });
                }
                (dst, hops)
            })
            .collect();
        Self::from_paths(probe, paths)
    }

    /// Builds the index from explicit hop lists; each list ends with its
    /// destination.
    pub fn from_paths(probe: Ipv4Addr, paths: BTreeMap<Ipv4Addr, Vec<IndexedHop>>) -> Self {
        let mut through: BTreeMap<Ipv4Addr, Vec<Ipv4Addr>> = BTreeMap::new();
        for (dst, hops) in &paths {
            for h in &hops[..hops.len().saturating_sub(1)] {
                through.entry(h.ip).or_default().push(*dst);
            }
        }
        Self {
            probe,
            paths,
            through,
        }
    }

    pub fn probe(&self) -> Ipv4Addr {
        self.probe
    }

    pub fn path(&self, dst: Ipv4Addr) -> Result<&[IndexedHop], BaselineError> {
        self.paths
            .get(&dst)
            .map(Vec::as_slice)
            .ok_or(BaselineError::NoPath(dst))
    }

    /// Probe-to-destination delay `d_pt`.
    pub fn delay_to(&self, dst: Ipv4Addr) -> Result<f64, BaselineError> {
        Ok(self.path(dst)?.last().map_or(0.0, |h| h.delay_ms))
    }

    pub fn destinations(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.paths.keys().copied()
    }

    /// Destinations whose path crosses `router` before its end.
    pub fn destinations_through(&self, router: Ipv4Addr) -> &[Ipv4Addr] {
        self.through.get(&router).map_or(&[], Vec::as_slice)
    }

    /// Every address seen strictly before the end of some path, ascending.
    pub fn routers(&self) -> impl Iterator<Item = Ipv4Addr> + '_ {
        self.through.keys().copied()
    }
}

/// Arithmetic mean of the coordinates.
pub fn centroid(coords: &[Coord]) -> Option<Coord> {
    if coords.is_empty() {
        return None;
    }
    let n = coords.len() as f64;
    let lat = coords.iter().map(|c| c.lat).sum::<f64>() / n;
    let lon = coords.iter().map(|c| c.lon).sum::<f64>() / n;
    Some(Coord::new(lat, lon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphConfig};
    use crate::measurement::{Hop, LandmarkRecord, TracerouteRecord};
    use std::collections::BTreeSet;

    fn ip(d: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 0, d)
    }

    #[test]
    fn index_uses_node_delays_and_prefers_fewer_anonymous_hops() {
        let rec = |hops: Vec<Hop>| TracerouteRecord {
            dst_ip: ip(9),
            probe_seq: 0,
            hops,
        };
        let records = vec![
            rec(vec![Hop::observed(1, ip(2), 3.0), Hop::observed(2, ip(9), 8.0)]),
            rec(vec![Hop::observed(1, ip(2), 2.0), Hop::observed(2, ip(9), 9.0)]),
        ];
        let gappy = RoutingPath::new(ip(9), vec![None, Some(ip(9))]);
        let full = RoutingPath::new(ip(9), vec![Some(ip(2)), Some(ip(9))]);
        let landmarks = [LandmarkRecord {
            ip: ip(9),
            lat: 0.0,
            lon: 0.0,
        }];
        let g = build_graph(
            std::slice::from_ref(&full),
            &landmarks,
            &BTreeSet::new(),
            &records,
            &GraphConfig::new(ip(1)),
        )
        .unwrap();
        let idx = PathIndex::new(ip(1), &[gappy, full], &g);
        let hops = idx.path(ip(9)).unwrap();
        assert_eq!(
            hops,
            [
                IndexedHop { ip: ip(2), delay_ms: 2.0 },
                IndexedHop { ip: ip(9), delay_ms: 8.0 }
            ]
        );
        assert_eq!(idx.delay_to(ip(9)).unwrap(), 8.0);
        assert_eq!(idx.destinations_through(ip(2)), [ip(9)]);
        assert!(idx.destinations_through(ip(9)).is_empty());
        assert!(matches!(idx.path(ip(7)), Err(BaselineError::NoPath(_))));
    }

    #[test]
    fn centroid_is_the_mean() {
        let c = centroid(&[Coord::new(1.0, 10.0), Coord::new(3.0, 20.0)]).unwrap();
        assert_eq!(c, Coord::new(2.0, 15.0));
        assert!(centroid(&[]).is_none());
    }
}
