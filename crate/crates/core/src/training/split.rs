use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

pub const MIN_SPLIT_LANDMARKS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn test_fraction(&self) -> f64 {
        1.0 - self.train - self.val
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<Ipv4Addr>,
    pub val: Vec<Ipv4Addr>,
    pub test: Vec<Ipv4Addr>,
}

impl Split {
    /// `ip,set` rows with set one of train/val/test.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "ip,set")?;
        for (name, ips) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for ip in ips {
                writeln!(w, "{ip},{name}")?;
            }
        }
        Ok(())
    }

    /// Reads what [`Split::write_csv`] writes.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self, TrainError> {
        let bad = |line: usize, msg: String| TrainError::SplitFile { line, msg };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let header = rdr.headers().map_err(|e| bad(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != ["ip", "set"] {
            return Err(bad(1, format!("expected header ip,set, found {header:?}")));
        }
        let mut out = Split {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
        };
        for row in rdr.records() {
            let row = row.map_err(|e| bad(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let ip: Ipv4Addr = row[0]
                .parse()
                .map_err(|_| bad(line, format!("invalid ip {:?}", &row[0])))?;
            match &row[1] {
                "train" => out.train.push(ip),
                "val" => out.val.push(ip),
                "test" => out.test.push(ip),
                other => return Err(bad(line, format!("unknown set {other:?}"))),
            }
        }
        Ok(out)
    }
}

/// Seeded shuffle, then floor-sized train and validation parts; the
/// remainder is the test part.
pub fn split(landmarks: &[Ipv4Addr], spec: &SplitSpec) -> Result<Split, TrainError> {
    let ok = |f: f64| f.is_finite() && (0.0..=1.0).contains(&f);
    if !ok(spec.train) || !ok(spec.val) || spec.test_fraction() < -1e-12 {
        return Err(TrainError::Config(format!(
            "split fractions {} / {} do not fit in 1",
            spec.train, spec.val
        )));
    }
    if landmarks.len() < MIN_SPLIT_LANDMARKS {
        return Err(TrainError::TooFewLandmarks(landmarks.len()));
    }
    let mut ips = landmarks.to_vec();
    ips.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n = ips.len() as f64;
    let n_train = (n * spec.train + 1e-9).floor() as usize;
    let n_val = (n * spec.val + 1e-9).floor() as usize;
    let test = ips.split_off(n_train + n_val);
    let val = ips.split_off(n_train);
    Ok(Split {
        train: ips,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn ips(n: u32) -> Vec<Ipv4Addr> {
        (0..n).map(|i| Ipv4Addr::from(0x0b00_0000 + i)).collect()
    }

    #[test]
    fn hundred_landmarks_split_70_20_10() {
        let s = split(&ips(100), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 20, 10));
    }

    #[test]
    fn splits_partition_the_input() {
        let all = ips(37);
        let s = split(&all, &SplitSpec { seed: 4, ..Default::default() }).unwrap();
        let mut seen = BTreeSet::new();
        for ip in s.train.iter().chain(&s.val).chain(&s.test) {
            assert!(seen.insert(*ip));
        }
        assert_eq!(seen, all.into_iter().collect());
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (25, 7, 5));
    }

    #[test]
    fn csv_round_trip() {
        let s = split(&ips(23), &SplitSpec::default()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(Split::read_csv(buf.as_slice()).unwrap(), s);
        let bad = "ip,set\n11.0.0.1,train\n11.0.0.2,holdout\n";
        assert!(matches!(
            Split::read_csv(bad.as_bytes()),
            Err(TrainError::SplitFile { line: 3, .. })
        ));
    }

    #[test]
    fn seeded_determinism() {
        let spec = SplitSpec { seed: 9, ..Default::default() };
        assert_eq!(split(&ips(50), &spec).unwrap(), split(&ips(50), &spec).unwrap());
        let other = SplitSpec { seed: 10, ..Default::default() };
        assert_ne!(split(&ips(50), &spec).unwrap(), split(&ips(50), &other).unwrap());
    }

    #[test]
    fn too_few_landmarks() {
        assert!(matches!(
            split(&ips(9), &SplitSpec::default()),
            Err(TrainError::TooFewLandmarks(9))
        ));
    }

    #[test]
    fn bad_fractions() {
        let spec = SplitSpec { train: 0.9, val: 0.2, seed: 0 };
        assert!(matches!(split(&ips(20), &spec), Err(TrainError::Config(_))));
    }

    #[test]
    fn csv_rows() {
        let s = Split {
            train: vec![Ipv4Addr::new(1, 1, 1, 1)],
            val: vec![],
            test: vec![Ipv4Addr::new(2, 2, 2, 2)],
        };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "ip,set\n1.1.1.1,train\n2.2.2.2,test\n");
    }
}
