use serde::{Deserialize, Serialize};

use crate::eval::Coord;

/// Degrees of padding added to both ends of the training range.
pub const SCALER_MARGIN_DEG: f64 = 0.1;

/// Per-dimension min-max scaling between degrees and the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoScaler {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeoScaler {
    /// Training extent widened by [`SCALER_MARGIN_DEG`] on every side.
    /// `None` for an empty slice.
    pub fn fit(coords: &[Coord]) -> Option<Self> {
        let first = coords.first()?;
        let mut s = Self {
            lat_min: first.lat,
            lat_max: first.lat,
            lon_min: first.lon,
            lon_max: first.lon,
        };
        for c in coords {
            s.lat_min = s.lat_min.min(c.lat);
            s.lat_max = s.lat_max.max(c.lat);
            s.lon_min = s.lon_min.min(c.lon);
            s.lon_max = s.lon_max.max(c.lon);
        }
        s.lat_min -= SCALER_MARGIN_DEG;
        s.lat_max += SCALER_MARGIN_DEG;
        s.lon_min -= SCALER_MARGIN_DEG;
        s.lon_max += SCALER_MARGIN_DEG;
        Some(s)
    }

    /// `[lat, lon]` in scaled units; values outside the box fall outside
    /// `[0, 1]` rather than being clamped.
    pub fn transform(&self, c: Coord) -> [f64; 2] {
        [
            (c.lat - self.lat_min) / (self.lat_max - self.lat_min),
            (c.lon - self.lon_min) / (self.lon_max - self.lon_min),
        ]
    }

    pub fn inverse(&self, s: [f64; 2]) -> Coord {
        Coord::new(
            self.lat_min + s[0] * (self.lat_max - self.lat_min),
            self.lon_min + s[1] * (self.lon_max - self.lon_min),
        )
    }

    pub fn in_unit_box(s: [f64; 2]) -> bool {
        s.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// How coordinates map to and from the model's output space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordTransform {
    MinMax(GeoScaler),
    /// Raw degrees.
    Identity,
}

impl CoordTransform {
    pub fn forward(&self, c: Coord) -> [f64; 2] {
        match self {
            Self::MinMax(s) => s.transform(c),
            Self::Identity => [c.lat, c.lon],
        }
    }

    pub fn inverse(&self, v: [f64; 2]) -> Coord {
        match self {
            Self::MinMax(s) => s.inverse(v),
            Self::Identity => Coord::new(v[0], v[1]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn margin_extends_training_range() {
        let s = GeoScaler::fit(&[Coord::new(30.61, 120.0), Coord::new(31.73, 121.0)]).unwrap();
        assert!(close(s.lat_min, 30.51) && close(s.lat_max, 31.83));
        assert!(close(s.lon_min, 119.9) && close(s.lon_max, 121.1));
        assert!(close(s.transform(Coord::new(31.17, 120.5))[0], 0.5));
        assert!(GeoScaler::fit(&[]).is_none());
    }

    #[test]
    fn box_corners_map_to_zero_and_one() {
        let s = GeoScaler::fit(&[Coord::new(1.0, 2.0), Coord::new(3.0, 5.0)]).unwrap();
        assert_eq!(s.transform(Coord::new(s.lat_min, s.lon_min)), [0.0, 0.0]);
        assert_eq!(s.transform(Coord::new(s.lat_max, s.lon_max)), [1.0, 1.0]);
    }

    #[test]
    fn outside_points_are_not_clamped() {
        let s = GeoScaler::fit(&[Coord::new(1.0, 2.0), Coord::new(3.0, 5.0)]).unwrap();
        let v = s.transform(Coord::new(10.0, -10.0));
        assert!(v[0] > 1.0 && v[1] < 0.0);
        assert!(!GeoScaler::in_unit_box(v));
    }

    #[test]
    fn single_point_gets_a_nondegenerate_box() {
        let s = GeoScaler::fit(&[Coord::new(22.3, 114.2)]).unwrap();
        assert!(s.lat_max > s.lat_min && s.lon_max > s.lon_min);
        let v = s.transform(Coord::new(22.3, 114.2));
        assert!(close(v[0], 0.5) && close(v[1], 0.5));
    }

    #[test]
    fn identity_transform_is_raw_degrees() {
        let c = Coord::new(22.3, 114.2);
        assert_eq!(CoordTransform::Identity.forward(c), [22.3, 114.2]);
        assert_eq!(CoordTransform::Identity.inverse([22.3, 114.2]), c);
    }
}
