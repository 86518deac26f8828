//! Temporal and geospatial feature encodings.
//!
//! Timestamps are UTC epoch seconds. The day cycle has period 86 400 s and the
//! year cycle (and the linear year count) uses a fixed 365.25-day year.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::Record;
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const SECONDS_PER_YEAR: f64 = 365.25 * SECONDS_PER_DAY;
pub const EARTH_RADIUS_MILES: f64 = 3958.8;

/// A latitude/longitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::domain(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(Error::domain(format!(
                "longitude {lon} outside [-180, 180]"
            )));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalEncoding {
    pub day_sin: f64,
    pub day_cos: f64,
    pub year_sin: f64,
    pub year_cos: f64,
    pub years_linear: f64,
}

fn check_timestamp(t: i64) -> Result<()> {
    if t < 0 {
        return Err(Error::domain(format!("negative timestamp {t}")));
    }
    Ok(())
}

/// Encodes a timestamp as day and year phase pairs plus fractional years since the epoch.
pub fn encode_time_cyclical(t: i64) -> Result<TemporalEncoding> {
    check_timestamp(t)?;
    // Integer remainder keeps the day phase exact for large timestamps.
    let into_day = (t % 86_400) as f64;
    let secs = t as f64;
    let into_year = secs.rem_euclid(SECONDS_PER_YEAR);
    let day_phase = TAU * into_day / SECONDS_PER_DAY;
    let year_phase = TAU * into_year / SECONDS_PER_YEAR;
    Ok(TemporalEncoding {
        day_sin: day_phase.sin(),
        day_cos: day_phase.cos(),
        year_sin: year_phase.sin(),
        year_cos: year_phase.cos(),
        years_linear: secs / SECONDS_PER_YEAR,
    })
}

/// Time as a single scalar in seconds.
pub fn encode_time_condensed(t: i64) -> Result<f64> {
    check_timestamp(t)?;
    Ok(t as f64)
}

/// Great-circle distance in miles on a sphere of radius 3958.8 mi.
pub fn haversine_miles(a: GeoPoint, b: GeoPoint) -> f64 {
    // Fixed argument order makes the result bit-for-bit symmetric.
    let (a, b) = if (a.lat, a.lon) <= (b.lat, b.lon) {
        (a, b)
    } else {
        (b, a)
    };
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // h can creep past 1 by an ulp for antipodal points.
    2.0 * EARTH_RADIUS_MILES * h.clamp(0.0, 1.0).sqrt().asin()
}

/// Per-column statistics from [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub constant_mask: Vec<bool>,
}

impl StandardizationStats {
    /// Applies these statistics to a matrix with the same column layout.
    pub fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.means.len() {
            return Err(Error::domain(format!(
                "matrix has {} columns, statistics cover {}",
                m.ncols(),
                self.means.len()
            )));
        }
        Ok(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
            if self.constant_mask[j] {
                0.0
            } else {
                (m[(i, j)] - self.means[j]) / self.stds[j]
            }
        }))
    }
}

/// Zero mean, unit population variance per column. Constant columns become zeros
/// and are flagged in the returned statistics.
pub fn standardize(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, StandardizationStats)> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::domain(format!(
            "standardize needs at least 2 rows, got {n}"
        )));
    }
    let mut stats = StandardizationStats {
        means: Vec::with_capacity(m.ncols()),
        stds: Vec::with_capacity(m.ncols()),
        constant_mask: Vec::with_capacity(m.ncols()),
    };
    for col in m.column_iter() {
        let first = col[0];
        let constant = col.iter().all(|&x| x == first);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        stats.means.push(mean);
        stats.stds.push(if constant { 0.0 } else { var.sqrt() });
        stats.constant_mask.push(constant);
    }
    let out = stats.apply(m)?;
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureVariant {
    /// Day cycle, year cycle, linear years, latitude, longitude.
    AllFeatures,
    /// Seconds since epoch, latitude, longitude.
    CondensedTime,
}

impl FeatureVariant {
    pub fn column_names(self) -> &'static [&'static str] {
        match self {
            FeatureVariant::AllFeatures => &[
                "day_sin",
                "day_cos",
                "year_sin",
                "year_cos",
                "years_linear",
                "lat",
                "lon",
            ],
            FeatureVariant::CondensedTime => &["seconds", "lat", "lon"],
        }
    }

    pub fn width(self) -> usize {
        self.column_names().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureVariant::AllFeatures => "all_features",
            FeatureVariant::CondensedTime => "condensed_time",
        }
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_features" | "all" => Ok(FeatureVariant::AllFeatures),
            "condensed_time" | "condensed" => Ok(FeatureVariant::CondensedTime),
            other => Err(Error::Usage(format!("unknown feature variant `{other}`"))),
        }
    }
}

/// Builds the raw (unstandardized) geotemporal feature matrix, one row per record.
pub fn build_feature_matrix(records: &[Record], variant: FeatureVariant) -> Result<DMatrix<f64>> {
    let f = variant.width();
    let mut out = DMatrix::zeros(records.len(), f);
    for (i, rec) in records.iter().enumerate() {
        let coords = rec
            .coords
            .ok_or_else(|| Error::domain(format!("record `{}` has no coordinates", rec.id)))?;
        let row: Vec<f64> = match variant {
            FeatureVariant::AllFeatures => {
                let enc = encode_time_cyclical(rec.timestamp)?;
                vec![
                    enc.day_sin,
                    enc.day_cos,
                    enc.year_sin,
                    enc.year_cos,
                    enc.years_linear,
                    coords.lat,
                    coords.lon,
                ]
            }
            FeatureVariant::CondensedTime => {
                vec![
                    encode_time_condensed(rec.timestamp)?,
                    coords.lat,
                    coords.lon,
                ]
            }
        };
        for (j, v) in row.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}
