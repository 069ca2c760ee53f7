//! Glue from measurement files to a graph bundle the later stages share.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::graph::{
    build_graph, complete_paths, extract_paths, AttributedGraph, GraphConfig, GraphError,
    RoutingPath,
};
use crate::measurement::{LandmarkRecord, SynthOutput, TracerouteRecord};

pub const BUNDLE_VERSION: u32 = 1;

/// Everything derived from one measurement campaign: the attributed graph,
/// the completed paths it came from, and the known locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub format_version: u32,
    pub graph: AttributedGraph,
    pub completed_paths: Vec<RoutingPath>,
    pub probe: LandmarkRecord,
    pub landmarks: Vec<LandmarkRecord>,
    pub targets: Vec<Ipv4Addr>,
}

#[derive(Debug, thiserror::Error)]
pub enum BundleError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph bundle: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Path extraction, anonymous-router completion and graph construction.
pub fn preprocess(
    records: &[TracerouteRecord],
    landmarks: &[LandmarkRecord],
    targets: &BTreeSet<Ipv4Addr>,
    probe: &LandmarkRecord,
    bin_seed: u64,
) -> Result<GraphBundle, BundleError> {
    let completed = complete_paths(&extract_paths(records));
    let cfg = GraphConfig {
        bin_seed,
        ..GraphConfig::new(probe.ip)
    };
    let graph = build_graph(&completed, landmarks, targets, records, &cfg)?;
    Ok(GraphBundle {
        format_version: BUNDLE_VERSION,
        graph,
        completed_paths: completed,
        probe: *probe,
        landmarks: landmarks.to_vec(),
        targets: targets.iter().copied().collect(),
    })
}

/// [`preprocess`] over synthetic output, with every landmark known and no
/// separate targets.
pub fn preprocess_synth(out: &SynthOutput, bin_seed: u64) -> Result<GraphBundle, BundleError> {
    preprocess(
        &out.traceroutes,
        &out.landmarks,
        &BTreeSet::new(),
        &out.probe,
        bin_seed,
    )
}

impl GraphBundle {
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), BundleError> {
        serde_json::to_writer(&mut w, self).map_err(|e| BundleError::Format(e.to_string()))?;
        writeln!(w)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self, BundleError> {
        let b: Self =
            serde_json::from_reader(r).map_err(|e| BundleError::Format(e.to_string()))?;
        if b.format_version != BUNDLE_VERSION {
            return Err(BundleError::Format(format!(
                "unsupported format version {}",
                b.format_version
            )));
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{synth_network, SynthConfig};

    #[test]
    fn bundle_round_trips_bitwise() {
        let out = synth_network(&SynthConfig {
            n_landmarks: 20,
            n_routers: 8,
            repetitions: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let b = preprocess_synth(&out, 3).unwrap();
        let mut buf = Vec::new();
        b.save(&mut buf).unwrap();
        assert_eq!(GraphBundle::load(buf.as_slice()).unwrap(), b);
        assert_eq!(b.graph.probe().ip, out.probe.ip);
    }

    #[test]
    fn rejects_other_versions() {
        let text = r#"{"format_version":99}"#;
        assert!(matches!(
            GraphBundle::load(text.as_bytes()),
            Err(BundleError::Format(_))
        ));
    }
}
