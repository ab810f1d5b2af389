//! Synthetic measurement campaigns for validating detection behavior.
//!
//! Well truth rates are drawn from log-normal baselines with optional slow
//! sinusoidal variation; aggregate nodes are solved from the balance
//! constraints so the truth satisfies every balance exactly. Channel samples
//! add Gaussian noise sized by the channel's declared uncertainty, and gross
//! error archetypes (bias, drift, zero dropout) are injected on top. The
//! emitted CSV matches the ingestion format, closing the loop end to end.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Quality, RawSeries, Sample};
use crate::topology::{
    build_system_matrices, load_topology, MeasurementChannel, NetworkTopology, SystemMatrices,
};
use crate::uncertainty::a_priori_variance;

/// Fixed campaign epoch; generation has no wall-clock dependence.
/// Fixed campaign start so generated series are reproducible.
pub fn campaign_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrossErrorKind {
    Bias,
    Drift,
    DropoutZero,
}

/// One injected fault: a bias in Sm3/d, a drift in Sm3/d per day growing from
/// zero at the interval start, or a meter stuck at exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrossErrorScenario {
    pub channel_id: String,
    pub kind: GrossErrorKind,
    #[serde(default)]
    pub magnitude: f64,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl GrossErrorScenario {
    fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::Config(format!(
                "scenario on {:?}: start must precede end",
                self.channel_id
            )));
        }
        Ok(())
    }

    fn apply(&self, t: DateTime<Utc>, value: f64) -> f64 {
        if t < self.start || t >= self.end {
            return value;
        }
        match self.kind {
            GrossErrorKind::Bias => value + self.magnitude,
            GrossErrorKind::Drift => {
                let days = (t - self.start).num_seconds() as f64 / 86_400.0;
                value + self.magnitude * days
            }
            GrossErrorKind::DropoutZero => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sinusoid {
    /// Fractional amplitude, must stay below 1 to keep rates positive.
    pub amplitude: f64,
    pub period_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WellSpec {
    pub node: String,
    /// Median well rate in Sm3/d.
    pub baseline: f64,
    /// Log-normal sigma of the window-to-window rate draws.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub sinusoid: Option<Sinusoid>,
}

/// Full in-memory campaign description.
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub topology: NetworkTopology,
    pub channels: Vec<MeasurementChannel>,
    pub horizon_days: u32,
    pub samples_per_hour: u32,
    pub wells: Vec<WellSpec>,
    pub scenarios: Vec<GrossErrorScenario>,
}

/// Scenario config file: everything above, with the topology by reference.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    topology: String,
    horizon_days: u32,
    #[serde(default = "default_cadence")]
    samples_per_hour: u32,
    wells: Vec<WellSpec>,
    #[serde(default)]
    scenarios: Vec<GrossErrorScenario>,
}

fn default_cadence() -> u32 {
    1
}

/// Loads a scenario config JSON; the topology path is resolved relative to
/// the scenario file's directory.
pub fn load_campaign_config(path: &Path) -> Result<CampaignConfig> {
    let text = std::fs::read_to_string(path)?;
    let file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("scenario: {e}")))?;
    let topo_path = {
        let candidate = Path::new(&file.topology);
        if candidate.is_absolute() {
            candidate.to_path_buf()
        } else {
            path.parent().unwrap_or_else(|| Path::new(".")).join(candidate)
        }
    };
    let (topology, channels) = load_topology(&topo_path)?;
    Ok(CampaignConfig {
        topology,
        channels,
        horizon_days: file.horizon_days,
        samples_per_hour: file.samples_per_hour,
        wells: file.wells,
        scenarios: file.scenarios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// True node rates for this window, balanced exactly.
    pub nodes: BTreeMap<String, f64>,
}

/// Ground truth emitted next to the data so detections can be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignTruth {
    pub seed: u64,
    pub window_hours: u32,
    pub windows: Vec<TruthWindow>,
    pub scenarios: Vec<GrossErrorScenario>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCampaign {
    pub topology: NetworkTopology,
    pub channels: Vec<MeasurementChannel>,
    pub seed: u64,
    pub truth: CampaignTruth,
    pub series: BTreeMap<String, RawSeries>,
}

/// Solves the non-well node rates from the balances given the well rates.
/// Fails when the constraints do not determine them uniquely and exactly.
fn complete_rates(
    matrices: &SystemMatrices,
    well_rates: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    let a = &matrices.a;
    let known: Vec<usize> = matrices
        .node_order
        .iter()
        .enumerate()
        .filter(|(_, id)| well_rates.contains_key(*id))
        .map(|(j, _)| j)
        .collect();
    let unknown: Vec<usize> = (0..matrices.m()).filter(|j| !known.contains(j)).collect();

    let mut rates = vec![0.0; matrices.m()];
    for &j in &known {
        rates[j] = well_rates[&matrices.node_order[j]];
    }
    if !unknown.is_empty() {
        if a.nrows() == 0 {
            return Err(Error::Config(
                "nodes without well specs but no constraints to derive them".into(),
            ));
        }
        let a_u = DMatrix::from_fn(a.nrows(), unknown.len(), |r, c| a[(r, unknown[c])]);
        let mut rhs = DVector::zeros(a.nrows());
        for r in 0..a.nrows() {
            for &j in &known {
                rhs[r] -= a[(r, j)] * rates[j];
            }
        }
        if a_u.rank(1e-9) < unknown.len() {
            return Err(Error::Config(
                "constraints do not uniquely determine the unmeasured-by-spec nodes".into(),
            ));
        }
        let x = a_u
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Config(format!("derived node solve failed: {e}")))?;
        let residual = (&a_u * &x - &rhs).amax();
        if residual > 1e-8 * rhs.amax().max(1.0) {
            return Err(Error::Config(
                "well specs are inconsistent with the balance constraints".into(),
            ));
        }
        for (c, &j) in unknown.iter().enumerate() {
            rates[j] = x[c];
        }
    }
    Ok(matrices
        .node_order
        .iter()
        .cloned()
        .zip(rates)
        .collect())
}

fn channel_seed(seed: u64, tag: u64, index: u64) -> ChaCha12Rng {
    // Independent streams per channel keep generation deterministic even if
    // callers parallelize by channel.
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index + 1);
    rng
}

/// Generates a campaign: balanced truth per 24-hour window, noisy channel
/// series at the configured cadence, scenario transforms applied last.
pub fn simulate_campaign(config: &CampaignConfig, seed: u64) -> Result<SyntheticCampaign> {
    if config.horizon_days == 0 {
        return Err(Error::Config("horizon_days must be positive".into()));
    }
    if config.samples_per_hour == 0 {
        return Err(Error::Config("samples_per_hour must be positive".into()));
    }
    for well in &config.wells {
        if !(well.baseline > 0.0) || !(well.noise >= 0.0) {
            return Err(Error::Config(format!(
                "well {:?}: baseline must be > 0 and noise >= 0",
                well.node
            )));
        }
        if let Some(s) = &well.sinusoid {
            if !(s.amplitude >= 0.0 && s.amplitude < 1.0) || !(s.period_days > 0.0) {
                return Err(Error::Config(format!(
                    "well {:?}: sinusoid amplitude must be in [0,1), period positive",
                    well.node
                )));
            }
        }
        if !config.topology.nodes.iter().any(|n| n.id == well.node) {
            return Err(Error::Config(format!(
                "well spec references unknown node {:?}",
                well.node
            )));
        }
    }
    for sc in &config.scenarios {
        sc.validate()?;
        if !config.channels.iter().any(|c| c.id == sc.channel_id) {
            return Err(Error::Config(format!(
                "scenario references unknown channel {:?}",
                sc.channel_id
            )));
        }
    }

    let matrices = build_system_matrices(&config.topology, &config.channels)?;
    let epoch = campaign_epoch();
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");

    // Truth rates: one stream per well, indexed by sorted node id.
    let mut wells_sorted: Vec<&WellSpec> = config.wells.iter().collect();
    wells_sorted.sort_by(|a, b| a.node.cmp(&b.node));
    let mut windows = Vec::with_capacity(config.horizon_days as usize);
    let mut well_draws: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (w_idx, well) in wells_sorted.iter().enumerate() {
        let mut rng = channel_seed(seed, 0xA11, w_idx as u64);
        let rates: Vec<f64> = (0..config.horizon_days)
            .map(|day| {
                let lognormal = well.baseline * (well.noise * gauss.sample(&mut rng)).exp();
                let seasonal = well
                    .sinusoid
                    .map(|s| {
                        1.0 + s.amplitude
                            * (2.0 * std::f64::consts::PI * day as f64 / s.period_days).sin()
                    })
                    .unwrap_or(1.0);
                lognormal * seasonal
            })
            .collect();
        well_draws.insert(well.node.clone(), rates);
    }
    for day in 0..config.horizon_days {
        let start = epoch + Duration::days(day as i64);
        let wells: BTreeMap<String, f64> = well_draws
            .iter()
            .map(|(node, rates)| (node.clone(), rates[day as usize]))
            .collect();
        let nodes = complete_rates(&matrices, &wells)?;
        windows.push(TruthWindow {
            start,
            end: start + Duration::days(1),
            nodes,
        });
    }

    // Channel series: truth plus noise, then the fault transforms.
    let samples_per_day = (24 * config.samples_per_hour) as i64;
    let step = Duration::seconds(86_400 / samples_per_day);
    let mut series = BTreeMap::new();
    let mut channels_sorted: Vec<&MeasurementChannel> =
        config.channels.iter().filter(|c| c.active).collect();
    channels_sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for (c_idx, ch) in channels_sorted.iter().enumerate() {
        let mut rng = channel_seed(seed, 0xC4A, c_idx as u64);
        let faults: Vec<&GrossErrorScenario> = config
            .scenarios
            .iter()
            .filter(|s| s.channel_id == ch.id)
            .collect();
        let mut samples = Vec::with_capacity((config.horizon_days as i64 * samples_per_day) as usize);
        for (day, window) in windows.iter().enumerate() {
            let truth_rate = window.nodes[&ch.node_id];
            let sigma = a_priori_variance(&ch.uncertainty, truth_rate.max(0.0))?.sqrt();
            for k in 0..samples_per_day {
                let t = epoch + Duration::days(day as i64) + step * k as i32;
                let mut value = truth_rate + sigma * gauss.sample(&mut rng);
                for fault in &faults {
                    value = fault.apply(t, value);
                }
                samples.push(Sample {
                    timestamp: t,
                    value,
                    quality: Quality::Good,
                });
            }
        }
        series.insert(ch.id.clone(), RawSeries::new(ch.id.clone(), samples)?);
    }

    Ok(SyntheticCampaign {
        topology: config.topology.clone(),
        channels: config.channels.clone(),
        seed,
        truth: CampaignTruth {
            seed,
            window_hours: 24,
            windows,
            scenarios: config.scenarios.clone(),
        },
        series,
    })
}

/// Writes `data.csv` (ingestion format) and `truth.json` into `dir`.
pub fn write_campaign(campaign: &SyntheticCampaign, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut writer = csv::Writer::from_path(dir.join("data.csv"))?;
    writer.write_record(["timestamp", "channel_id", "value", "quality"])?;
    // Row-major by time, then channel id, so the CSV is byte-stable.
    let mut rows: Vec<(DateTime<Utc>, &str, f64)> = Vec::new();
    for (id, series) in &campaign.series {
        for s in &series.samples {
            rows.push((s.timestamp, id, s.value));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    for (t, id, value) in rows {
        writer.write_record([
            t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            id.to_string(),
            format!("{value:.6}"),
            "good".to_string(),
        ])?;
    }
    writer.flush()?;
    let truth = serde_json::to_string_pretty(&campaign.truth)?;
    std::fs::write(dir.join("truth.json"), truth + "\n")?;
    Ok(())
}

pub fn load_truth(path: &Path) -> Result<CampaignTruth> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("truth: {e}")))
}

/// Per-window detection outcome in the shape scoring needs.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowDetection {
    pub window_start: DateTime<Utc>,
    pub flags: BTreeMap<String, bool>,
    pub top_ranked: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub faulty_windows: usize,
    pub clean_windows: usize,
    pub true_positive_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub true_positive_rate: Option<f64>,
    pub false_positive_rate: Option<f64>,
    /// Fraction of faulty windows where the top-ranked channel is truly faulty.
    pub localization_accuracy: Option<f64>,
    pub per_channel: BTreeMap<String, ChannelScore>,
}

fn overlaps(sc: &GrossErrorScenario, w: &TruthWindow) -> bool {
    sc.start < w.end && sc.end > w.start
}

/// Scores per-window detections against the campaign's injected faults.
pub fn score_detections(
    detections: &[WindowDetection],
    truth: &CampaignTruth,
) -> Result<DetectionMetrics> {
    let by_start: BTreeMap<DateTime<Utc>, &WindowDetection> =
        detections.iter().map(|d| (d.window_start, d)).collect();
    let mut per_channel: BTreeMap<String, (usize, usize, usize, usize)> = BTreeMap::new();
    let mut loc_hits = 0usize;
    let mut loc_total = 0usize;

    for window in &truth.windows {
        let detection = by_start.get(&window.start).ok_or_else(|| {
            Error::Dimension(format!(
                "no detection report for campaign window starting {}",
                window.start
            ))
        })?;
        let faulty: Vec<&str> = truth
            .scenarios
            .iter()
            .filter(|sc| overlaps(sc, window))
            .map(|sc| sc.channel_id.as_str())
            .collect();
        for (id, flagged) in &detection.flags {
            let entry = per_channel.entry(id.clone()).or_insert((0, 0, 0, 0));
            if faulty.contains(&id.as_str()) {
                entry.0 += 1;
                if *flagged {
                    entry.1 += 1;
                }
            } else {
                entry.2 += 1;
                if *flagged {
                    entry.3 += 1;
                }
            }
        }
        if !faulty.is_empty() {
            loc_total += 1;
            if let Some(top) = &detection.top_ranked {
                if faulty.contains(&top.as_str()) {
                    loc_hits += 1;
                }
            }
        }
    }

    let mut channels = BTreeMap::new();
    let (mut tp, mut fp, mut n_faulty, mut n_clean) = (0usize, 0usize, 0usize, 0usize);
    for (id, (faulty, hits, clean, false_hits)) in per_channel {
        n_faulty += faulty;
        tp += hits;
        n_clean += clean;
        fp += false_hits;
        channels.insert(
            id,
            ChannelScore {
                faulty_windows: faulty,
                clean_windows: clean,
                true_positive_rate: (faulty > 0).then(|| hits as f64 / faulty as f64),
                false_positive_rate: (clean > 0).then(|| false_hits as f64 / clean as f64),
            },
        );
    }
    Ok(DetectionMetrics {
        true_positive_rate: (n_faulty > 0).then(|| tp as f64 / n_faulty as f64),
        false_positive_rate: (n_clean > 0).then(|| fp as f64 / n_clean as f64),
        localization_accuracy: (loc_total > 0).then(|| loc_hits as f64 / loc_total as f64),
        per_channel: channels,
    })
}

// ---------------------------------------------------------------------------
// Random estimable systems, used to fuzz the solver routes against each other.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RandomSystem {
    pub matrices: SystemMatrices,
    pub sigma2: Vec<f64>,
    /// Node values satisfying every constraint exactly.
    pub feasible_truth: DVector<f64>,
}

/// Draws a random fully measured, estimable system: every node carries at
/// least one channel, constraints have full row rank, and the stacked system
/// is kept well-conditioned so dual solver routes can be compared tightly.
pub fn random_system(seed: u64, max_nodes: usize, max_channels: usize, max_constraints: usize) -> RandomSystem {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    'outer: loop {
        let m = rng.random_range(1..=max_nodes);
        let extra = rng.random_range(0..=(max_channels.saturating_sub(m)).min(2 * m));
        let n = m + extra;

        let mut c = DMatrix::zeros(n, m);
        for j in 0..m {
            c[(j, j)] = 1.0;
        }
        for i in m..n {
            c[(i, rng.random_range(0..m))] = 1.0;
        }

        let q_target = if m >= 2 { rng.random_range(0..=max_constraints.min(m - 1)) } else { 0 };
        let mut a = DMatrix::zeros(q_target, m);
        let mut q = 0;
        let mut attempts = 0;
        while q < q_target {
            attempts += 1;
            if attempts > 200 {
                continue 'outer;
            }
            let k = rng.random_range(2..=m.min(5));
            let mut cols: Vec<usize> = (0..m).collect();
            for i in 0..k {
                let j = rng.random_range(i..m);
                cols.swap(i, j);
            }
            let mut row = vec![0.0; m];
            for (pos, &col) in cols[..k].iter().enumerate() {
                // Force mixed signs so the balance is a real transfer.
                row[col] = if pos == 0 { 1.0 } else if pos == 1 { -1.0 } else if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            }
            a.row_mut(q).copy_from_slice(&row);
            if a.rows(0, q + 1).rank(1e-9) == q + 1 {
                q += 1;
            }
        }
        let a = a.rows(0, q).into_owned();

        let matrices = SystemMatrices {
            c,
            a,
            channel_order: (0..n).map(|i| format!("m{i:03}")).collect(),
            node_order: (0..m).map(|j| format!("n{j:03}")).collect(),
        };

        // Keep only comfortably conditioned instances.
        let svd = matrices.stacked().svd(false, false);
        let s_min = svd.singular_values.min();
        if !(s_min > 0.0) || svd.singular_values.max() / s_min > 1e6 {
            continue;
        }

        let sigma2: Vec<f64> = (0..n)
            .map(|_| {
                let log_sigma = rng.random_range(0.1f64.ln()..=10.0f64.ln());
                log_sigma.exp().powi(2)
            })
            .collect();

        // Project a random vector onto the nullspace of A for a feasible truth.
        let x0 = DVector::from_fn(m, |_, _| rng.random_range(-100.0..100.0));
        let feasible_truth = if q == 0 {
            x0
        } else {
            let a = &matrices.a;
            let aat = a * a.transpose();
            let lam = aat
                .svd(true, true)
                .solve(&(a * &x0), 1e-12)
                .expect("full row rank");
            &x0 - a.transpose() * lam
        };

        return RandomSystem {
            matrices,
            sigma2,
            feasible_truth,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ged::{detect, normalized_statistics};
    use crate::reconcile::MeasurementVector;
    use crate::topology::{BalanceConstraint, MeterType, Node, NodeRole};
    use crate::uncertainty::{UncertaintyMode, UncertaintySpec};

    fn spec(relative: f64) -> UncertaintySpec {
        UncertaintySpec {
            relative,
            absolute_floor: 1.0,
            mode: UncertaintyMode::APriori,
        }
    }

    fn config(noise: f64, scenarios: Vec<GrossErrorScenario>) -> CampaignConfig {
        let topology = NetworkTopology {
            nodes: vec![
                Node {
                    id: "exp".into(),
                    name: "Export".into(),
                    role: NodeRole::Export,
                    tier: 1,
                },
                Node {
                    id: "w1".into(),
                    name: "Well 1".into(),
                    role: NodeRole::Well,
                    tier: 0,
                },
                Node {
                    id: "w2".into(),
                    name: "Well 2".into(),
                    role: NodeRole::Well,
                    tier: 0,
                },
            ],
            constraints: vec![BalanceConstraint {
                label: "export".into(),
                plus: vec!["w1".into(), "w2".into()],
                minus: vec!["exp".into()],
            }],
        };
        let mk = |id: &str, node: &str| MeasurementChannel {
            id: id.into(),
            node_id: node.into(),
            meter_type: MeterType::Mpfm,
            alpha: 0.01,
            uncertainty: spec(noise),
            active: true,
        };
        CampaignConfig {
            channels: vec![mk("m1", "w1"), mk("m2", "w2"), mk("m3", "exp")],
            topology,
            horizon_days: 3,
            samples_per_hour: 1,
            wells: vec![
                WellSpec {
                    node: "w1".into(),
                    baseline: 100.0,
                    noise: 0.1,
                    sinusoid: None,
                },
                WellSpec {
                    node: "w2".into(),
                    baseline: 150.0,
                    noise: 0.1,
                    sinusoid: None,
                },
            ],
            scenarios,
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = config(0.05, vec![]);
        let a = simulate_campaign(&cfg, 42).unwrap();
        let b = simulate_campaign(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_campaign(&cfg, 43).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn truth_balances_exactly() {
        let cfg = config(0.05, vec![]);
        let campaign = simulate_campaign(&cfg, 7).unwrap();
        for w in &campaign.truth.windows {
            let imbalance = w.nodes["w1"] + w.nodes["w2"] - w.nodes["exp"];
            assert!(imbalance.abs() < 1e-9 * w.nodes["exp"].abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_channels_equal_truth() {
        let mut cfg = config(0.0, vec![]);
        // Shrink the floor so sigma is effectively zero.
        for ch in &mut cfg.channels {
            ch.uncertainty.absolute_floor = 1e-12;
        }
        let campaign = simulate_campaign(&cfg, 1).unwrap();
        for (id, series) in &campaign.series {
            let node = &campaign.channels.iter().find(|c| &c.id == id).unwrap().node_id;
            for s in &series.samples {
                let day = ((s.timestamp - campaign_epoch()).num_seconds() / 86_400) as usize;
                let truth = campaign.truth.windows[day].nodes[node];
                assert!((s.value - truth).abs() < 1e-6, "{id} at {}", s.timestamp);
            }
        }
    }

    #[test]
    fn dropout_zero_inside_interval_only() {
        let start = campaign_epoch() + Duration::days(1);
        let end = campaign_epoch() + Duration::days(2);
        let cfg = config(
            0.05,
            vec![GrossErrorScenario {
                channel_id: "m1".into(),
                kind: GrossErrorKind::DropoutZero,
                magnitude: 0.0,
                start,
                end,
            }],
        );
        let campaign = simulate_campaign(&cfg, 5).unwrap();
        for s in &campaign.series["m1"].samples {
            if s.timestamp >= start && s.timestamp < end {
                assert_eq!(s.value, 0.0);
            } else {
                assert!(s.value.abs() > 1.0);
            }
        }
    }

    #[test]
    fn bias_shifts_inside_interval() {
        let start = campaign_epoch();
        let end = campaign_epoch() + Duration::days(3);
        let clean_cfg = config(0.05, vec![]);
        let biased_cfg = config(
            0.05,
            vec![GrossErrorScenario {
                channel_id: "m2".into(),
                kind: GrossErrorKind::Bias,
                magnitude: 10.0,
                start,
                end,
            }],
        );
        let clean = simulate_campaign(&clean_cfg, 11).unwrap();
        let biased = simulate_campaign(&biased_cfg, 11).unwrap();
        for (a, b) in clean.series["m2"].samples.iter().zip(&biased.series["m2"].samples) {
            assert!((b.value - a.value - 10.0).abs() < 1e-9);
        }
        // Other channels untouched.
        assert_eq!(clean.series["m1"], biased.series["m1"]);
    }

    #[test]
    fn drift_grows_linearly() {
        let start = campaign_epoch();
        let end = campaign_epoch() + Duration::days(3);
        let clean = simulate_campaign(&config(0.05, vec![]), 3).unwrap();
        let drifted = simulate_campaign(
            &config(
                0.05,
                vec![GrossErrorScenario {
                    channel_id: "m3".into(),
                    kind: GrossErrorKind::Drift,
                    magnitude: 24.0,
                    start,
                    end,
                }],
            ),
            3,
        )
        .unwrap();
        let a = &clean.series["m3"].samples;
        let b = &drifted.series["m3"].samples;
        assert!((b[0].value - a[0].value).abs() < 1e-9);
        // One hour in: 24 Sm3/d per day * (1/24) day = 1.
        assert!((b[1].value - a[1].value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scenario_on_unknown_channel_rejected() {
        let cfg = config(
            0.05,
            vec![GrossErrorScenario {
                channel_id: "ghost".into(),
                kind: GrossErrorKind::Bias,
                magnitude: 1.0,
                start: campaign_epoch(),
                end: campaign_epoch() + Duration::days(1),
            }],
        );
        assert!(matches!(simulate_campaign(&cfg, 1), Err(Error::Config(_))));
    }

    fn run_detections(campaign: &SyntheticCampaign) -> Vec<WindowDetection> {
        let matrices = build_system_matrices(&campaign.topology, &campaign.channels).unwrap();
        campaign
            .truth
            .windows
            .iter()
            .map(|w| {
                let mut values = Vec::new();
                let mut sigma2 = Vec::new();
                for id in &matrices.channel_order {
                    let series = &campaign.series[id];
                    let in_window: Vec<f64> = series
                        .samples
                        .iter()
                        .filter(|s| s.timestamp >= w.start && s.timestamp < w.end)
                        .map(|s| s.value)
                        .collect();
                    let mean = in_window.iter().sum::<f64>() / in_window.len() as f64;
                    let ch = campaign.channels.iter().find(|c| &c.id == id).unwrap();
                    let node_truth = w.nodes[&ch.node_id];
                    let var = a_priori_variance(&ch.uncertainty, node_truth).unwrap()
                        / in_window.len() as f64;
                    values.push(mean);
                    sigma2.push(var);
                }
                let y =
                    MeasurementVector::new(values, sigma2, matrices.channel_order.clone()).unwrap();
                let stats = normalized_statistics(&y, &matrices).unwrap();
                let report = detect(&stats, &campaign.channels).unwrap();
                WindowDetection {
                    window_start: w.start,
                    flags: matrices
                        .channel_order
                        .iter()
                        .cloned()
                        .zip(report.flags.iter().copied())
                        .collect(),
                    top_ranked: report.ranked.first().cloned(),
                }
            })
            .collect()
    }

    #[test]
    fn scoring_perfect_and_missed() {
        let start = campaign_epoch();
        let end = campaign_epoch() + Duration::days(3);
        let truth = CampaignTruth {
            seed: 0,
            window_hours: 24,
            windows: (0..3)
                .map(|d| TruthWindow {
                    start: start + Duration::days(d),
                    end: start + Duration::days(d + 1),
                    nodes: BTreeMap::new(),
                })
                .collect(),
            scenarios: vec![GrossErrorScenario {
                channel_id: "m1".into(),
                kind: GrossErrorKind::Bias,
                magnitude: 10.0,
                start,
                end,
            }],
        };
        let perfect: Vec<WindowDetection> = truth
            .windows
            .iter()
            .map(|w| WindowDetection {
                window_start: w.start,
                flags: [("m1".to_string(), true), ("m2".to_string(), false)].into(),
                top_ranked: Some("m1".into()),
            })
            .collect();
        let metrics = score_detections(&perfect, &truth).unwrap();
        assert_eq!(metrics.true_positive_rate, Some(1.0));
        assert_eq!(metrics.false_positive_rate, Some(0.0));
        assert_eq!(metrics.localization_accuracy, Some(1.0));

        let blind: Vec<WindowDetection> = truth
            .windows
            .iter()
            .map(|w| WindowDetection {
                window_start: w.start,
                flags: [("m1".to_string(), false), ("m2".to_string(), false)].into(),
                top_ranked: None,
            })
            .collect();
        let metrics = score_detections(&blind, &truth).unwrap();
        assert_eq!(metrics.true_positive_rate, Some(0.0));
        assert_eq!(metrics.localization_accuracy, Some(0.0));
    }

    #[test]
    fn scoring_window_mismatch_rejected() {
        let truth = CampaignTruth {
            seed: 0,
            window_hours: 24,
            windows: vec![TruthWindow {
                start: campaign_epoch(),
                end: campaign_epoch() + Duration::days(1),
                nodes: BTreeMap::new(),
            }],
            scenarios: vec![],
        };
        assert!(score_detections(&[], &truth).is_err());
    }

    #[test]
    fn power_monotone_in_bias_magnitude() {
        // Single-tier campaign, bias on one well meter; empirical TPR must be
        // nondecreasing over 2, 5, 10 sigma.
        let mut tprs = Vec::new();
        for (i, mult) in [2.0, 5.0, 10.0].iter().enumerate() {
            let mut cfg = config(0.05, vec![]);
            cfg.horizon_days = 100;
            // sigma at baseline 100 with 5% relative is 5; scale the bias.
            cfg.scenarios = vec![GrossErrorScenario {
                channel_id: "m1".into(),
                kind: GrossErrorKind::Bias,
                magnitude: mult * 5.0,
                start: campaign_epoch(),
                end: campaign_epoch() + Duration::days(100),
            }];
            let campaign = simulate_campaign(&cfg, 1234 + i as u64).unwrap();
            let detections = run_detections(&campaign);
            let metrics = score_detections(&detections, &campaign.truth).unwrap();
            tprs.push(metrics.per_channel["m1"].true_positive_rate.unwrap());
        }
        assert!(tprs[0] <= tprs[1] + 1e-9 && tprs[1] <= tprs[2] + 1e-9, "{tprs:?}");
        assert!(tprs[2] > 0.9, "{tprs:?}");
    }

    #[test]
    fn random_system_is_estimable() {
        for seed in 0..20 {
            let sys = random_system(seed, 10, 30, 5);
            assert_eq!(sys.matrices.stacked().rank(1e-9), sys.matrices.m());
            let resid = (&sys.matrices.a * &sys.feasible_truth).amax();
            assert!(resid < 1e-8, "seed {seed}: {resid}");
        }
    }
}
