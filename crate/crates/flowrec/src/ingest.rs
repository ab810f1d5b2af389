//! Raw series loading, filtering and windowed aggregation.
//!
//! Raw channel series come in as `timestamp,channel_id,value,quality` CSV
//! rows. Invalid samples are filtered out, the remainder is averaged over
//! fixed windows aligned to UTC midnight, and the windowed means are
//! assembled into a reconciliation problem once enough coverage is present.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconcile::MeasurementVector;
use crate::topology::{
    build_system_matrices, validate_estimability, MeasurementChannel, NetworkTopology,
    SystemMatrices,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Good,
    Bad,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: DateTime<Utc>,
    pub value: f64,
    pub quality: Quality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub channel_id: String,
    pub samples: Vec<Sample>,
}

impl RawSeries {
    pub fn new(channel_id: String, samples: Vec<Sample>) -> Result<Self> {
        for pair in samples.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(Error::InvalidArgument(format!(
                    "series {channel_id}: timestamps must be strictly increasing at {}",
                    pair[1].timestamp
                )));
            }
        }
        Ok(Self {
            channel_id,
            samples,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterRules {
    pub drop_negative: bool,
    pub drop_bad_quality: bool,
    /// Runs of identical consecutive values are truncated to this length.
    pub frozen_count: Option<usize>,
}

impl Default for FilterRules {
    fn default() -> Self {
        Self {
            drop_negative: true,
            drop_bad_quality: true,
            frozen_count: None,
        }
    }
}

/// Drops non-finite, negative (when enabled), bad-quality and frozen samples.
/// An empty result is legal and simply yields zero coverage downstream.
pub fn filter_invalid(raw: &RawSeries, rules: &FilterRules) -> RawSeries {
    let mut kept: Vec<Sample> = raw
        .samples
        .iter()
        .filter(|s| {
            s.value.is_finite()
                && !(rules.drop_negative && s.value < 0.0)
                && !(rules.drop_bad_quality && s.quality == Quality::Bad)
        })
        .copied()
        .collect();

    if let Some(limit) = rules.frozen_count {
        if limit > 0 {
            let mut out: Vec<Sample> = Vec::with_capacity(kept.len());
            let mut run = 0usize;
            for s in kept.drain(..) {
                match out.last() {
                    Some(prev) if prev.value == s.value => run += 1,
                    _ => run = 1,
                }
                if run <= limit {
                    out.push(s);
                } else {
                    // Keep the run counter growing across dropped samples so a
                    // thawed value resets it but more of the same does not.
                    continue;
                }
            }
            kept = out;
        }
    }

    RawSeries {
        channel_id: raw.channel_id.clone(),
        samples: kept,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowedMeasurement {
    pub channel_id: String,
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    /// Arithmetic mean of the valid samples in the window, Sm3/d.
    pub mean_value: f64,
    /// Valid sample count over the expected count, clamped to [0, 1].
    pub coverage: f64,
    pub n_samples: usize,
}

/// Averages valid samples over fixed windows. Boundaries are aligned to the
/// UNIX epoch plus `offset`, which puts 24-hour windows on UTC midnight.
pub fn aggregate_window(
    raw: &RawSeries,
    window: Duration,
    expected_per_window: usize,
    offset: Duration,
) -> Result<Vec<WindowedMeasurement>> {
    let window_s = window.num_seconds();
    if window_s <= 0 {
        return Err(Error::InvalidArgument(
            "window duration must be positive".into(),
        ));
    }
    if expected_per_window == 0 {
        return Err(Error::InvalidArgument(
            "expected sample rate must be positive".into(),
        ));
    }
    let offset_s = offset.num_seconds();
    let mut buckets: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for s in &raw.samples {
        let t = s.timestamp.timestamp() - offset_s;
        let idx = t.div_euclid(window_s);
        let entry = buckets.entry(idx).or_insert((0.0, 0));
        entry.0 += s.value;
        entry.1 += 1;
    }
    Ok(buckets
        .into_iter()
        .map(|(idx, (sum, count))| {
            let start = Utc
                .timestamp_opt(idx * window_s + offset_s, 0)
                .single()
                .expect("window start in range");
            WindowedMeasurement {
                channel_id: raw.channel_id.clone(),
                window_start: start,
                window_end: start + window,
                mean_value: sum / count as f64,
                coverage: (count as f64 / expected_per_window as f64).min(1.0),
                n_samples: count,
            }
        })
        .collect())
}

/// Everything one reconciliation window needs, aligned and estimable.
#[derive(Debug, Clone)]
pub struct AssembledProblem {
    pub matrices: SystemMatrices,
    pub measurements: MeasurementVector,
    /// Channels dropped for insufficient coverage or missing data.
    pub excluded: Vec<String>,
}

/// Builds the measurement vector for one window, deactivating channels below
/// `min_coverage` (or absent entirely) before the matrices are rebuilt.
pub fn assemble_problem(
    windows: &BTreeMap<String, WindowedMeasurement>,
    topology: &NetworkTopology,
    channels: &[MeasurementChannel],
    variances: &BTreeMap<String, f64>,
    min_coverage: f64,
) -> Result<AssembledProblem> {
    let mut effective: Vec<MeasurementChannel> = Vec::with_capacity(channels.len());
    let mut excluded = Vec::new();
    for ch in channels {
        if !ch.active {
            continue;
        }
        let ok = windows
            .get(&ch.id)
            .map(|w| w.coverage >= min_coverage)
            .unwrap_or(false);
        if ok {
            effective.push(ch.clone());
        } else {
            excluded.push(ch.id.clone());
        }
    }
    if effective.is_empty() {
        return Err(Error::NotEstimable(
            "all channels excluded by coverage filtering".into(),
        ));
    }
    let matrices = build_system_matrices(topology, &effective)?;
    let mut values = Vec::with_capacity(matrices.n());
    let mut sigma2 = Vec::with_capacity(matrices.n());
    for id in &matrices.channel_order {
        values.push(windows[id].mean_value);
        let v = variances.get(id).ok_or_else(|| {
            Error::Dimension(format!("no variance supplied for channel {id:?}"))
        })?;
        sigma2.push(*v);
    }
    let measurements = MeasurementVector::new(values, sigma2, matrices.channel_order.clone())?;
    let report = validate_estimability(&matrices, &measurements.sigma2)?;
    if !report.general_ok {
        return Err(Error::NotEstimable(format!(
            "system not estimable after excluding {excluded:?}"
        )));
    }
    Ok(AssembledProblem {
        matrices,
        measurements,
        excluded,
    })
}

/// Reads `timestamp,channel_id,value,quality` CSV into per-channel series.
pub fn load_series_csv(path: &Path) -> Result<BTreeMap<String, RawSeries>> {
    #[derive(Deserialize)]
    struct Row {
        timestamp: DateTime<Utc>,
        channel_id: String,
        value: f64,
        quality: Quality,
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut grouped: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: Row = row?;
        grouped.entry(row.channel_id).or_default().push(Sample {
            timestamp: row.timestamp,
            value: row.value,
            quality: row.quality,
        });
    }
    grouped
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by_key(|s| s.timestamp);
            RawSeries::new(id.clone(), samples).map(|s| (id, s))
        })
        .collect()
}
