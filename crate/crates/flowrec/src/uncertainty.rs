//! Per-channel measurement variances.
//!
//! Two sources feed the variances used as weights in reconciliation: a
//! declared a-priori band (relative fraction of reading with an absolute
//! floor) and a calibration against reference values such as well tests,
//! summarized as an exponentially weighted mean squared deviation.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default decay per reference pair when calibrating against history.
pub const DEFAULT_DECAY: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMode {
    #[default]
    APriori,
    Calibrated,
}

/// Declared uncertainty of a channel: `sigma = max(relative * reading, absolute_floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    /// Fraction of reading, dimensionless, >= 0.
    pub relative: f64,
    /// Smallest admissible sigma in Sm3/d, > 0. Keeps every variance strictly positive.
    pub absolute_floor: f64,
    #[serde(default)]
    pub mode: UncertaintyMode,
}

impl UncertaintySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.relative >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "relative uncertainty must be >= 0, got {}",
                self.relative
            )));
        }
        if !(self.absolute_floor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "absolute_floor must be > 0, got {}",
                self.absolute_floor
            )));
        }
        Ok(())
    }
}

/// One reference observation (e.g. a well test) paired with the channel reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePair {
    pub measured: f64,
    pub reference: f64,
    pub timestamp: DateTime<Utc>,
}

/// Variance from the declared a-priori band at a given reading.
///
/// `sigma^2 = max(relative * reading, absolute_floor)^2`.
pub fn a_priori_variance(spec: &UncertaintySpec, reading: f64) -> Result<f64> {
    spec.validate()?;
    if !(reading >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reading must be >= 0, got {reading}"
        )));
    }
    let sigma = (spec.relative * reading).max(spec.absolute_floor);
    Ok(sigma * sigma)
}

/// Exponentially weighted mean squared deviation against reference values.
///
/// Weights are `decay^rank` with the newest pair at rank 0 (weight 1). The
/// result is floored at `floor^2` so downstream weights stay finite.
pub fn calibrate_variance(history: &[ReferencePair], decay: f64, floor: f64) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::InvalidArgument(
            "calibration history is empty".into(),
        ));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decay must be in (0, 1], got {decay}"
        )));
    }
    if !(floor > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "floor must be > 0, got {floor}"
        )));
    }
    let mut ordered: Vec<&ReferencePair> = history.iter().collect();
    ordered.sort_by_key(|p| p.timestamp);
    let mut num = 0.0;
    let mut den = 0.0;
    // Newest pair carries weight 1.
    for (rank, pair) in ordered.iter().rev().enumerate() {
        let w = decay.powi(rank as i32);
        let dev = pair.measured - pair.reference;
        num += w * dev * dev;
        den += w;
    }
    Ok((num / den).max(floor * floor))
}

/// Reads reference pairs from a CSV with columns `channel_id,timestamp,measured,reference`.
pub fn load_reference_pairs(path: &Path) -> Result<BTreeMap<String, Vec<ReferencePair>>> {
    #[derive(Deserialize)]
    struct Row {
        channel_id: String,
        timestamp: DateTime<Utc>,
        measured: f64,
        reference: f64,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<String, Vec<ReferencePair>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        out.entry(row.channel_id).or_default().push(ReferencePair {
            measured: row.measured,
            reference: row.reference,
            timestamp: row.timestamp,
        });
    }
    for pairs in out.values_mut() {
        pairs.sort_by_key(|p| p.timestamp);
    }
    Ok(out)
}
