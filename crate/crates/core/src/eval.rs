//! Geodesic error distances, summary statistics and CDF export.

use std::collections::BTreeSet;
use std::io::{self, Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

/// Mean earth radius used for every great-circle distance in this crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A (latitude, longitude) pair in decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coord {
    pub lat: f64,
    pub lon: f64,
}

impl Coord {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }
}

/// Great-circle distance in km (haversine formulation).
pub fn haversine(a: Coord, b: Coord) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("{pred} predictions but {truth} ground-truth coordinates")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("predictions line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub average_km: f64,
    pub median_km: f64,
    pub max_km: f64,
    pub n: usize,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self, EvalError> {
        if errors.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Ok(Self {
            average_km: errors.iter().sum::<f64>() / n as f64,
            median_km: median,
            max_km: sorted[n - 1],
            n,
        })
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, self)?;
        writeln!(w)
    }
}

/// Per-pair haversine errors.
pub fn errors_km(pred: &[Coord], truth: &[Coord]) -> Result<Vec<f64>, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    Ok(pred.iter().zip(truth).map(|(p, t)| haversine(*p, *t)).collect())
}

pub fn error_stats(pred: &[Coord], truth: &[Coord]) -> Result<ErrorStats, EvalError> {
    ErrorStats::from_errors(&errors_km(pred, truth)?)
}

/// Empirical CDF points `(error_km, cumulative_fraction)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries {
    pub points: Vec<(f64, f64)>,
}

impl CdfSeries {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "error_km,cumulative_fraction")?;
        for (e, f) in &self.points {
            writeln!(w, "{e},{f}")?;
        }
        Ok(())
    }
}

/// Sorts the errors and emits `i/n` at the i-th one; repeated errors keep
/// only their highest fraction.
pub fn cdf(errors: &[f64]) -> Result<CdfSeries, EvalError> {
    if errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(n);
    for (i, e) in sorted.into_iter().enumerate() {
        let frac = (i + 1) as f64 / n as f64;
        match points.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => points.push((e, frac)),
        }
    }
    Ok(CdfSeries { points })
}

/// Writes `ip,lat,lon` prediction rows.
pub fn write_predictions<W: Write>(mut w: W, rows: &[(Ipv4Addr, Coord)]) -> io::Result<()> {
    writeln!(w, "ip,lat,lon")?;
    for (ip, c) in rows {
        writeln!(w, "{ip},{},{}", c.lat, c.lon)?;
    }
    Ok(())
}

/// Reads `ip,lat,lon` prediction rows. Unlike landmark files, coordinates
/// only need to be finite: an unbounded decoder may leave the globe.
pub fn parse_predictions<R: Read>(r: R) -> Result<Vec<(Ipv4Addr, Coord)>, EvalError> {
    let bad = |line: usize, msg: String| EvalError::Parse { line, msg };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>() != ["ip", "lat", "lon"] {
        return Err(bad(1, format!("expected header ip,lat,lon, found {header:?}")));
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| bad(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let ip: Ipv4Addr = row[0]
            .parse()
            .map_err(|_| bad(line, format!("invalid ip {:?}", &row[0])))?;
        let num = |k: usize| -> Result<f64, EvalError> {
            row[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(line, format!("invalid coordinate {:?}", &row[k])))
        };
        let c = Coord::new(num(1)?, num(2)?);
        if !seen.insert(ip) {
            return Err(bad(line, format!("duplicate ip {ip}")));
        }
        out.push((ip, c));
    }
    Ok(out)
}
