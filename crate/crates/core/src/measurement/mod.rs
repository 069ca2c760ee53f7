//! Traceroute and landmark files, plus a seeded synthetic network generator
//! with known ground truth.
//!
//! Traceroutes are JSON Lines, one probe per line:
//!
//! ```text
//! {"dst_ip":"10.0.0.9","probe_seq":0,"hops":[{"ttl":1,"ip":"10.0.0.1","rtt_ms":2.1},{"ttl":2,"ip":null,"rtt_ms":null}]}
//! ```
//!
//! Landmark and ground-truth files are CSV with the header `ip,lat,lon`.

mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::eval::Coord;

pub use synth::{synth_network, SynthConfig, SynthOutput};

#[derive(Debug, thiserror::Error)]
pub enum MeasurementError {
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Validation { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Range { line: usize, msg: String },
    #[error("line {line}: duplicate ip {ip}")]
    Duplicate { line: usize, ip: Ipv4Addr },
    #[error("invalid synthetic network config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One traceroute hop. Anonymous routers expose neither address nor delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub ttl: u32,
    pub ip: Option<Ipv4Addr>,
    pub rtt_ms: Option<f64>,
}

impl Hop {
    pub fn observed(ttl: u32, ip: Ipv4Addr, rtt_ms: f64) -> Self {
        Self {
            ttl,
            ip: Some(ip),
            rtt_ms: Some(rtt_ms),
        }
    }

    pub fn anonymous(ttl: u32) -> Self {
        Self {
            ttl,
            ip: None,
            rtt_ms: None,
        }
    }

    pub fn is_anonymous(&self) -> bool {
        self.ip.is_none()
    }
}

/// One probe's hop-by-hop view of a destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerouteRecord {
    pub dst_ip: Ipv4Addr,
    pub probe_seq: u32,
    pub hops: Vec<Hop>,
}

impl TracerouteRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.hops.is_empty() {
            return Err("record has no hops".into());
        }
        for (i, hop) in self.hops.iter().enumerate() {
            let expected = i as u32 + 1;
            if hop.ttl != expected {
                return Err(if hop.ttl > expected {
                    format!("ttl gap: expected ttl {expected}, found {}", hop.ttl)
                } else {
                    format!("non-monotone ttl: expected ttl {expected}, found {}", hop.ttl)
                });
            }
            if hop.ip.is_some() != hop.rtt_ms.is_some() {
                return Err(format!(
                    "hop {}: ip and rtt_ms must be both present or both null",
                    hop.ttl
                ));
            }
            if let Some(rtt) = hop.rtt_ms {
                if !rtt.is_finite() || rtt < 0.0 {
                    return Err(format!("hop {}: invalid rtt_ms {rtt}", hop.ttl));
                }
            }
        }
        let last = self.hops.last().expect("non-empty");
        if let Some(ip) = last.ip {
            if ip != self.dst_ip {
                return Err(format!(
                    "final hop {ip} does not match destination {}",
                    self.dst_ip
                ));
            }
        }
        Ok(())
    }
}

/// An address with a known location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub ip: Ipv4Addr,
    pub lat: f64,
    pub lon: f64,
}

impl LandmarkRecord {
    pub fn coord(&self) -> Coord {
        Coord::new(self.lat, self.lon)
    }
}

/// Latitude/longitude bounding box in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Region {
    /// Landmark extent reported for Hong Kong.
    pub const HONG_KONG: Region = Region {
        lat_min: 22.19,
        lat_max: 22.55,
        lon_min: 113.85,
        lon_max: 114.33,
    };

    pub fn contains(&self, c: Coord) -> bool {
        (self.lat_min..=self.lat_max).contains(&c.lat)
            && (self.lon_min..=self.lon_max).contains(&c.lon)
    }

    pub fn center(&self) -> Coord {
        Coord::new(
            (self.lat_min + self.lat_max) / 2.0,
            (self.lon_min + self.lon_max) / 2.0,
        )
    }
}

/// Reads JSON Lines traceroutes. Blank lines are ignored.
pub fn parse_traceroutes<R: BufRead>(reader: R) -> Result<Vec<TracerouteRecord>, MeasurementError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TracerouteRecord =
            serde_json::from_str(&line).map_err(|e| MeasurementError::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
        rec.validate()
            .map_err(|msg| MeasurementError::Validation { line: lineno, msg })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_traceroutes<W: Write>(
    mut w: W,
    records: &[TracerouteRecord],
) -> Result<(), MeasurementError> {
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads an `ip,lat,lon` CSV, checking coordinate ranges and duplicates.
pub fn parse_landmarks<R: Read>(reader: R) -> Result<Vec<LandmarkRecord>, MeasurementError> {
    parse_coord_csv(reader, None)
}

/// Like [`parse_landmarks`] but also requires every row inside `region`.
pub fn parse_landmarks_in_region<R: Read>(
    reader: R,
    region: &Region,
) -> Result<Vec<LandmarkRecord>, MeasurementError> {
    parse_coord_csv(reader, Some(region))
}

fn parse_coord_csv<R: Read>(
    reader: R,
    region: Option<&Region>,
) -> Result<Vec<LandmarkRecord>, MeasurementError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| MeasurementError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["ip", "lat", "lon"] {
        return Err(MeasurementError::Parse {
            line: 1,
            msg: format!("expected header ip,lat,lon, found {:?}", header),
        });
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| MeasurementError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| -> Result<&str, MeasurementError> {
            row.get(k).ok_or_else(|| MeasurementError::Parse {
                line,
                msg: "expected 3 fields".into(),
            })
        };
        let bad = |what: &str, v: &str| MeasurementError::Parse {
            line,
            msg: format!("invalid {what} {v:?}"),
        };
        let ip: Ipv4Addr = field(0)?.parse().map_err(|_| bad("ip", field(0).unwrap_or("")))?;
        let lat: f64 = field(1)?.parse().map_err(|_| bad("lat", field(1).unwrap_or("")))?;
        let lon: f64 = field(2)?.parse().map_err(|_| bad("lon", field(2).unwrap_or("")))?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(MeasurementError::Range {
                line,
                msg: format!("latitude {lat} outside [-90, 90]"),
            });
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(MeasurementError::Range {
                line,
                msg: format!("longitude {lon} outside [-180, 180]"),
            });
        }
        if let Some(r) = region {
            if !r.contains(Coord::new(lat, lon)) {
                return Err(MeasurementError::Range {
                    line,
                    msg: format!("({lat}, {lon}) outside the declared region {r:?}"),
                });
            }
        }
        if !seen.insert(ip) {
            return Err(MeasurementError::Duplicate { line, ip });
        }
        out.push(LandmarkRecord { ip, lat, lon });
    }
    Ok(out)
}

pub fn write_landmarks<W: Write>(mut w: W, rows: &[LandmarkRecord]) -> io::Result<()> {
    writeln!(w, "ip,lat,lon")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.ip, r.lat, r.lon)?;
    }
    Ok(())
}

/// Coordinates of every generated node, routers included.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub coords: BTreeMap<Ipv4Addr, Coord>,
}

impl GroundTruth {
    pub fn get(&self, ip: Ipv4Addr) -> Option<Coord> {
        self.coords.get(&ip).copied()
    }

    pub fn records(&self) -> Vec<LandmarkRecord> {
        self.coords
            .iter()
            .map(|(&ip, c)| LandmarkRecord {
                ip,
                lat: c.lat,
                lon: c.lon,
            })
            .collect()
    }

    pub fn from_records(rows: &[LandmarkRecord]) -> Self {
        Self {
            coords: rows.iter().map(|r| (r.ip, r.coord())).collect(),
        }
    }

    pub fn parse<R: Read>(reader: R) -> Result<Self, MeasurementError> {
        Ok(Self::from_records(&parse_landmarks(reader)?))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        write_landmarks(w, &self.records())
    }
}
