use std::collections::HashSet;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::measurement::TracerouteRecord;

/// Hop addresses from the first hop to the destination; `None` is an
/// anonymous router.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoutingPath {
    pub dst_ip: Ipv4Addr,
    pub entries: Vec<Option<Ipv4Addr>>,
}

impl RoutingPath {
    pub fn new(dst_ip: Ipv4Addr, entries: Vec<Option<Ipv4Addr>>) -> Self {
        Self { dst_ip, entries }
    }

    pub fn hop_count(&self) -> usize {
        self.entries.len()
    }

    pub fn anonymous_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_none()).count()
    }

    /// Same destination, same hop count, and equal at every position where
    /// both paths expose an address.
    pub fn matches(&self, other: &RoutingPath) -> bool {
        self.dst_ip == other.dst_ip
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| match (a, b) {
                    (Some(x), Some(y)) => x == y,
                    _ => true,
                })
    }

    fn fill_from(&mut self, donor: &RoutingPath) {
        for (slot, d) in self.entries.iter_mut().zip(&donor.entries) {
            if slot.is_none() {
                *slot = *d;
            }
        }
    }
}

/// One path per record, in record order, with exact duplicates dropped.
pub fn extract_paths(records: &[TracerouteRecord]) -> Vec<RoutingPath> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in records {
        let p = RoutingPath::new(r.dst_ip, r.hops.iter().map(|h| h.ip).collect());
        if seen.insert(p.clone()) {
            out.push(p);
        }
    }
    out
}

/// Maps anonymous routers to addresses seen in similar re-measured paths.
///
/// Raw paths are scanned in order against the growing completed set. The
/// first completed path that [matches](RoutingPath::matches) absorbs the raw
/// path: each position anonymous in one and known in the other takes the
/// known address. A raw path that matches nothing joins the completed set
/// as-is. Known addresses are never rewritten and hop counts never change.
pub fn complete_paths(raw: &[RoutingPath]) -> Vec<RoutingPath> {
    let mut completed: Vec<RoutingPath> = Vec::new();
    for p in raw {
        match completed.iter_mut().find(|c| c.matches(p)) {
            Some(c) => c.fill_from(p),
            None => completed.push(p.clone()),
        }
    }
    completed
}
