//! End-to-end run: CSV series in, per-window JSON report out.

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::Duration;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ged::{detect_and_eliminate, EliminationPolicy};
use crate::ingest::{
    aggregate_window, assemble_problem, filter_invalid, load_series_csv, FilterRules, RawSeries,
    WindowedMeasurement,
};
use crate::report::{window_report, RunReport, WindowReport, SCHEMA_VERSION};
use crate::simgen::{score_detections, CampaignTruth, DetectionMetrics};
use crate::topology::load_topology;
use crate::uncertainty::{
    a_priori_variance, calibrate_variance, load_reference_pairs, UncertaintyMode, DEFAULT_DECAY,
};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub topology: PathBuf,
    pub data: PathBuf,
    pub window_hours: i64,
    /// Significance level applied to every channel, unless overridden per id.
    pub alpha_global: Option<f64>,
    pub alpha_overrides: BTreeMap<String, f64>,
    pub policy: EliminationPolicy,
    pub max_iter: usize,
    pub min_coverage: f64,
    pub frozen_count: Option<usize>,
    /// Optional well-test CSV backing channels declared as calibrated.
    pub references: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            topology: PathBuf::new(),
            data: PathBuf::new(),
            window_hours: 24,
            alpha_global: None,
            alpha_overrides: BTreeMap::new(),
            policy: EliminationPolicy::Never,
            max_iter: 10,
            min_coverage: 0.5,
            frozen_count: None,
            references: None,
        }
    }
}

/// Expected samples per window from the median sampling interval.
fn expected_per_window(series: &RawSeries, window_s: i64) -> usize {
    if series.samples.len() < 2 {
        return 1;
    }
    let mut gaps: Vec<i64> = series
        .samples
        .windows(2)
        .map(|p| (p[1].timestamp - p[0].timestamp).num_seconds())
        .collect();
    gaps.sort_unstable();
    let median = gaps[gaps.len() / 2].max(1);
    ((window_s / median) as usize).max(1)
}

pub fn run_reconcile(opts: &RunOptions) -> Result<RunReport> {
    if opts.window_hours <= 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    if !(opts.min_coverage >= 0.0 && opts.min_coverage <= 1.0) {
        return Err(Error::Config("min_coverage must be in [0, 1]".into()));
    }
    let (topology, mut channels) = load_topology(&opts.topology)?;
    if let Some(alpha) = opts.alpha_global {
        for ch in &mut channels {
            ch.alpha = alpha;
        }
    }
    for (id, alpha) in &opts.alpha_overrides {
        let ch = channels
            .iter_mut()
            .find(|c| &c.id == id)
            .ok_or_else(|| Error::Config(format!("alpha override for unknown channel {id:?}")))?;
        ch.alpha = *alpha;
    }
    for ch in &channels {
        ch.validate()?;
    }

    let references = match &opts.references {
        Some(path) => load_reference_pairs(path)?,
        None => BTreeMap::new(),
    };

    let rules = FilterRules {
        frozen_count: opts.frozen_count,
        ..Default::default()
    };
    let window = Duration::hours(opts.window_hours);
    let series = load_series_csv(&opts.data)?;

    // Per-channel windowed means, grouped by window start.
    let mut grouped: BTreeMap<chrono::DateTime<chrono::Utc>, BTreeMap<String, WindowedMeasurement>> =
        BTreeMap::new();
    for (id, raw) in &series {
        let filtered = filter_invalid(raw, &rules);
        let expected = expected_per_window(&filtered, window.num_seconds());
        for wm in aggregate_window(&filtered, window, expected, Duration::zero())? {
            grouped
                .entry(wm.window_start)
                .or_default()
                .insert(id.clone(), wm);
        }
    }
    if grouped.is_empty() {
        return Err(Error::Config("no valid samples in the data file".into()));
    }

    let windows: Vec<WindowReport> = grouped
        .par_iter()
        .map(|(start, per_channel)| -> Result<WindowReport> {
            let mut variances = BTreeMap::new();
            for ch in &channels {
                let Some(wm) = per_channel.get(&ch.id) else {
                    continue;
                };
                let variance = match ch.uncertainty.mode {
                    UncertaintyMode::Calibrated => match references.get(&ch.id) {
                        Some(history) if !history.is_empty() => calibrate_variance(
                            history,
                            DEFAULT_DECAY,
                            ch.uncertainty.absolute_floor,
                        )?,
                        _ => a_priori_variance(&ch.uncertainty, wm.mean_value.max(0.0))?,
                    },
                    UncertaintyMode::APriori => {
                        a_priori_variance(&ch.uncertainty, wm.mean_value.max(0.0))?
                    }
                };
                variances.insert(ch.id.clone(), variance);
            }
            let problem =
                assemble_problem(per_channel, &topology, &channels, &variances, opts.min_coverage)?;
            let trace = detect_and_eliminate(
                &problem.measurements,
                &problem.matrices,
                &channels,
                opts.policy,
                opts.max_iter,
            )?;
            Ok(window_report(
                *start,
                *start + window,
                problem.excluded,
                &trace,
                &channels,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        window_hours: opts.window_hours,
        min_coverage: opts.min_coverage,
        windows,
    })
}

/// Scores a run report against a campaign truth file.
pub fn score_report(report: &RunReport, truth: &CampaignTruth) -> Result<DetectionMetrics> {
    let detections: Vec<_> = report
        .windows
        .iter()
        .map(|w| w.to_window_detection())
        .collect();
    score_detections(&detections, truth)
}

/// Reconciled-rates table: `window_start,node_id,y_hat` rows.
pub fn write_rates_csv<W: std::io::Write>(report: &RunReport, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["window_start", "node_id", "y_hat"])?;
    for window in &report.windows {
        for node in &window.nodes {
            writer.write_record([
                window
                    .window_start
                    .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                node.id.clone(),
                format!("{:.6}", node.y_hat),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}
