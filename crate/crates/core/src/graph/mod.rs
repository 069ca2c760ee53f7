//! Attributed graph construction from traceroute measurements.

mod binning;
mod paths;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::measurement::{LandmarkRecord, TracerouteRecord};
use crate::numeric::Tensor;

pub use binning::{kmeans_bin, BinModel, DEFAULT_BINS};
pub use paths::{complete_paths, extract_paths, RoutingPath};

pub const NODE_FEATURE_DIM: usize = 5 + DEFAULT_BINS;
pub const EDGE_FEATURE_DIM: usize = 1 + DEFAULT_BINS;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("{kind} {ip} never appears in any routing path")]
    MissingDestination { kind: &'static str, ip: Ipv4Addr },
    #[error("no edges could be built from the routing paths")]
    NoEdges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    ProbingHost,
    Landmark,
    Target,
    Router,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::ProbingHost => "probing_host",
            NodeRole::Landmark => "landmark",
            NodeRole::Target => "target",
            NodeRole::Router => "router",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub ip: Ipv4Addr,
    pub role: NodeRole,
    pub delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub head: usize,
    pub tail: usize,
    /// `delay(tail) − delay(head)`; negative values are kept.
    pub delay_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub probe_ip: Ipv4Addr,
    pub bins: usize,
    pub bin_seed: u64,
}

impl GraphConfig {
    pub fn new(probe_ip: Ipv4Addr) -> Self {
        Self {
            probe_ip,
            bins: DEFAULT_BINS,
            bin_seed: 0,
        }
    }
}

/// Nodes, undirected edges (stored with a head/tail orientation) and their
/// feature matrices. The probing host is always node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    /// Per node: `(neighbor_id, edge_index)` sorted by neighbor id.
    pub adjacency: Vec<Vec<(usize, usize)>>,
    pub node_features: Tensor,
    pub edge_features: Tensor,
    pub node_bins: BinModel,
    pub edge_bins: BinModel,
    /// Edges re-derived from a later path with the opposite orientation.
    pub orientation_conflicts: usize,
}

impl AttributedGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn ip_index(&self) -> HashMap<Ipv4Addr, usize> {
        self.nodes.iter().map(|n| (n.ip, n.id)).collect()
    }

    pub fn probe(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn nodes_with_role(&self, role: NodeRole) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.role == role)
    }

    pub fn write_nodes_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "node_id,ip,role,delay_ms")?;
        for n in &self.nodes {
            writeln!(w, "{},{},{},{}", n.id, n.ip, n.role.as_str(), n.delay_ms)?;
        }
        Ok(())
    }

    pub fn write_edges_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "head_id,tail_id,delay_ms")?;
        for e in &self.edges {
            writeln!(w, "{},{},{}", e.head, e.tail, e.delay_ms)?;
        }
        Ok(())
    }
}

/// Minimum observed rtt per ip.
pub fn min_delays(records: &[TracerouteRecord]) -> BTreeMap<Ipv4Addr, f64> {
    let mut out = BTreeMap::new();
    for hop in records.iter().flat_map(|r| &r.hops) {
        if let (Some(ip), Some(rtt)) = (hop.ip, hop.rtt_ms) {
            out.entry(ip)
                .and_modify(|d: &mut f64| *d = d.min(rtt))
                .or_insert(rtt);
        }
    }
    out
}

/// Builds the attributed graph from completed paths.
///
/// Every path is walked from the probing host; consecutive known addresses
/// become an edge, so residual anonymous hops are bridged. The first
/// derivation of an unordered pair fixes its orientation and delay.
pub fn build_graph(
    completed: &[RoutingPath],
    landmarks: &[LandmarkRecord],
    targets: &BTreeSet<Ipv4Addr>,
    records: &[TracerouteRecord],
    cfg: &GraphConfig,
) -> Result<AttributedGraph, GraphError> {
    let delays = min_delays(records);
    let landmark_ips: BTreeSet<Ipv4Addr> = landmarks.iter().map(|l| l.ip).collect();

    let mut ids: HashMap<Ipv4Addr, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut intern = |ip: Ipv4Addr, nodes: &mut Vec<Node>| -> usize {
        *ids.entry(ip).or_insert_with(|| {
            let id = nodes.len();
            let role = if id == 0 {
                NodeRole::ProbingHost
            } else if landmark_ips.contains(&ip) {
                NodeRole::Landmark
            } else if targets.contains(&ip) {
                NodeRole::Target
            } else {
                NodeRole::Router
            };
            let delay_ms = if id == 0 {
                0.0
            } else {
                delays.get(&ip).copied().unwrap_or(0.0)
            };
            nodes.push(Node {
                id,
                ip,
                role,
                delay_ms,
            });
            id
        })
    };
    let probe = intern(cfg.probe_ip, &mut nodes);

    let mut edges: Vec<Edge> = Vec::new();
    let mut pair_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut conflicts = 0;
    for path in completed {
        let mut prev = probe;
        for ip in path.entries.iter().flatten() {
            let cur = intern(*ip, &mut nodes);
            if cur == prev {
                continue;
            }
            let key = (prev.min(cur), prev.max(cur));
            match pair_index.get(&key) {
                Some(&e) => {
                    if edges[e].head != prev {
                        conflicts += 1;
                    }
                }
                None => {
                    pair_index.insert(key, edges.len());
                    edges.push(Edge {
                        head: prev,
                        tail: cur,
                        delay_ms: nodes[cur].delay_ms - nodes[prev].delay_ms,
                    });
                }
            }
            prev = cur;
        }
    }

    for ip in &landmark_ips {
        if !ids.contains_key(ip) {
            return Err(GraphError::MissingDestination {
                kind: "landmark",
                ip: *ip,
            });
        }
    }
    for ip in targets {
        if !ids.contains_key(ip) {
            return Err(GraphError::MissingDestination {
                kind: "target",
                ip: *ip,
            });
        }
    }
    if edges.is_empty() {
        return Err(GraphError::NoEdges);
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (i, e) in edges.iter().enumerate() {
        adjacency[e.head].push((e.tail, i));
        adjacency[e.tail].push((e.head, i));
    }
    for list in &mut adjacency {
        list.sort_unstable();
    }

    let node_delays: Vec<f64> = nodes.iter().map(|n| n.delay_ms).collect();
    let edge_delays: Vec<f64> = edges.iter().map(|e| e.delay_ms).collect();
    let node_bins = kmeans_bin(&node_delays, cfg.bins, cfg.bin_seed);
    let edge_bins = kmeans_bin(&edge_delays, cfg.bins, cfg.bin_seed.wrapping_add(1));
    let node_features = node_features(&nodes, &node_bins);
    let edge_features = edge_features(&edges, &edge_bins);

    Ok(AttributedGraph {
        nodes,
        edges,
        adjacency,
        node_features,
        edge_features,
        node_bins,
        edge_bins,
        orientation_conflicts: conflicts,
    })
}

/// `[delay, octet1..octet4, one-hot delay bin]` per node.
pub fn node_features(nodes: &[Node], bins: &BinModel) -> Tensor {
    let width = 5 + bins.k();
    let mut data = vec![0.0; nodes.len() * width];
    for (row, n) in data.chunks_mut(width).zip(nodes) {
        row[0] = n.delay_ms;
        for (slot, o) in row[1..5].iter_mut().zip(n.ip.octets()) {
            *slot = f64::from(o);
        }
        row[5 + bins.assign(n.delay_ms)] = 1.0;
    }
    Tensor::matrix(nodes.len(), width, data).expect("finite node features")
}

/// `[delay, one-hot delay bin]` per edge.
pub fn edge_features(edges: &[Edge], bins: &BinModel) -> Tensor {
    let width = 1 + bins.k();
    let mut data = vec![0.0; edges.len() * width];
    for (row, e) in data.chunks_mut(width).zip(edges) {
        row[0] = e.delay_ms;
        row[1 + bins.assign(e.delay_ms)] = 1.0;
    }
    Tensor::matrix(edges.len(), width, data).expect("finite edge features")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::Hop;

    const PROBE: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);

    fn ip(n: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 1, n)
    }

    fn rec(dst: u8, hops: &[(Option<u8>, f64)]) -> TracerouteRecord {
        TracerouteRecord {
            dst_ip: ip(dst),
            probe_seq: 0,
            hops: hops
                .iter()
                .enumerate()
                .map(|(i, (h, rtt))| match h {
                    Some(n) => Hop::observed(i as u32 + 1, ip(*n), *rtt),
                    None => Hop::anonymous(i as u32 + 1),
                })
                .collect(),
        }
    }

    fn lm(n: u8) -> LandmarkRecord {
        LandmarkRecord {
            ip: ip(n),
            lat: 22.3,
            lon: 114.1,
        }
    }

    fn build(records: &[TracerouteRecord], landmarks: &[LandmarkRecord]) -> AttributedGraph {
        let completed = complete_paths(&extract_paths(records));
        build_graph(
            &completed,
            landmarks,
            &BTreeSet::new(),
            records,
            &GraphConfig::new(PROBE),
        )
        .unwrap()
    }

    #[test]
    fn anonymous_hop_is_bridged() {
        let recs = [rec(3, &[(Some(1), 1.0), (None, 0.0), (Some(3), 3.0)])];
        let g = build(&recs, &[lm(3)]);
        let pairs: Vec<(Ipv4Addr, Ipv4Addr)> = g
            .edges
            .iter()
            .map(|e| (g.nodes[e.head].ip, g.nodes[e.tail].ip))
            .collect();
        assert_eq!(pairs, vec![(PROBE, ip(1)), (ip(1), ip(3))]);
        assert_eq!(g.nodes[0].role, NodeRole::ProbingHost);
        assert_eq!(g.nodes[2].role, NodeRole::Landmark);
        assert_eq!(g.nodes[1].role, NodeRole::Router);
    }

    #[test]
    fn negative_edge_delay_is_kept() {
        let recs = [rec(2, &[(Some(1), 10.0), (Some(2), 8.0)])];
        let g = build(&recs, &[lm(2)]);
        assert_eq!(g.edges[1].delay_ms, -2.0);
        assert_eq!(g.edge_features.row(1)[0], -2.0);
    }

    #[test]
    fn shared_edge_built_once_and_conflicts_counted() {
        let recs = [
            rec(2, &[(Some(1), 1.0), (Some(2), 2.0)]),
            rec(3, &[(Some(1), 1.0), (Some(2), 2.0), (Some(3), 3.0)]),
            rec(4, &[(Some(2), 2.0), (Some(1), 1.0), (Some(4), 4.0)]),
        ];
        let g = build(&recs, &[lm(2), lm(3), lm(4)]);
        let mut keys: Vec<(usize, usize)> = g
            .edges
            .iter()
            .map(|e| (e.head.min(e.tail), e.head.max(e.tail)))
            .collect();
        let n = keys.len();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), n);
        assert_eq!(g.orientation_conflicts, 1);
    }

    #[test]
    fn node_delay_is_minimum_rtt_and_probe_is_zero() {
        let recs = [
            rec(2, &[(Some(1), 1.5), (Some(2), 2.5)]),
            rec(2, &[(Some(1), 0.9), (Some(2), 2.7)]),
        ];
        let g = build(&recs, &[lm(2)]);
        assert_eq!(g.nodes[0].delay_ms, 0.0);
        assert_eq!(g.nodes[1].delay_ms, 0.9);
        assert_eq!(g.nodes[2].delay_ms, 2.5);
    }

    #[test]
    fn feature_layout() {
        let recs = [rec(2, &[(Some(1), 2.5), (Some(2), 4.0)])];
        let g = build(&recs, &[lm(2)]);
        assert_eq!(g.node_features.shape(), &[3, NODE_FEATURE_DIM]);
        assert_eq!(g.edge_features.shape(), &[2, EDGE_FEATURE_DIM]);
        assert_eq!(&g.node_features.row(1)[..5], &[2.5, 10.0, 0.0, 1.0, 1.0]);
        assert_eq!(&g.node_features.row(0)[..5], &[0.0, 10.0, 0.0, 0.0, 1.0]);
        let probe_bin = g.node_bins.assign(0.0);
        assert_eq!(g.node_features.row(0)[5 + probe_bin], 1.0);
        for r in 0..3 {
            assert_eq!(g.node_features.row(r)[5..].iter().sum::<f64>(), 1.0);
        }
        for r in 0..2 {
            assert_eq!(g.edge_features.row(r)[1..].iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn identical_edge_delays_give_identical_rows() {
        let edges = [
            Edge { head: 0, tail: 1, delay_ms: 1.25 },
            Edge { head: 1, tail: 2, delay_ms: 1.25 },
            Edge { head: 2, tail: 3, delay_ms: 7.0 },
        ];
        let bins = kmeans_bin(&[1.25, 1.25, 7.0], 10, 0);
        let f = edge_features(&edges, &bins);
        assert_eq!(f.row(0), f.row(1));
    }

    #[test]
    fn adjacency_is_symmetric_and_sorted() {
        let recs = [
            rec(3, &[(Some(1), 1.0), (Some(2), 2.0), (Some(3), 3.0)]),
            rec(4, &[(Some(1), 1.0), (Some(4), 2.0)]),
        ];
        let g = build(&recs, &[lm(3), lm(4)]);
        for (i, list) in g.adjacency.iter().enumerate() {
            assert!(list.windows(2).all(|w| w[0].0 < w[1].0));
            for &(j, e) in list {
                assert!(g.adjacency[j].contains(&(i, e)));
            }
        }
    }

    #[test]
    fn missing_landmark_is_an_error() {
        let recs = [rec(2, &[(Some(1), 1.0), (Some(2), 2.0)])];
        let completed = complete_paths(&extract_paths(&recs));
        let err = build_graph(
            &completed,
            &[lm(2), lm(9)],
            &BTreeSet::new(),
            &recs,
            &GraphConfig::new(PROBE),
        )
        .unwrap_err();
        assert_eq!(
            err,
            GraphError::MissingDestination {
                kind: "landmark",
                ip: ip(9)
            }
        );
    }

    #[test]
    fn csv_export() {
        let recs = [rec(2, &[(Some(1), 1.0), (Some(2), 2.0)])];
        let g = build(&recs, &[lm(2)]);
        let mut buf = Vec::new();
        g.write_nodes_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("node_id,ip,role,delay_ms\n0,10.0.0.1,probing_host,0\n"));
        let mut buf = Vec::new();
        g.write_edges_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "head_id,tail_id,delay_ms\n0,1,1\n1,2,1\n"
        );
    }
}
