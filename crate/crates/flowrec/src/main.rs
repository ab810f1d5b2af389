use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use flowrec::error::{Error, Result};
use flowrec::ged::EliminationPolicy;
use flowrec::pipeline::{run_reconcile, score_report, write_rates_csv, RunOptions};
use flowrec::report::RunReport;
use flowrec::simgen::{load_campaign_config, load_truth, simulate_campaign, write_campaign};

#[derive(Parser)]
#[command(name = "flowrec", version, about = "Flow network reconciliation and meter fault detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Reconcile measured series against the network balances and flag
    /// suspect meters window by window.
    Reconcile {
        /// Topology config (JSON).
        #[arg(long)]
        topology: PathBuf,
        /// Measurement series CSV: timestamp,channel_id,value,quality.
        #[arg(long)]
        data: PathBuf,
        /// Aggregation window length in hours.
        #[arg(long, default_value_t = 24)]
        window: i64,
        /// Significance level: a bare number applies to all channels, or
        /// `channel=value` to override one. Repeatable.
        #[arg(long = "alpha")]
        alphas: Vec<String>,
        /// Elimination policy: never, max-abs-z, or threshold:LOW:FLOOR.
        #[arg(long, default_value = "never")]
        policy: String,
        /// Minimum fraction of expected samples for a window to count.
        #[arg(long, default_value_t = 0.5)]
        min_coverage: f64,
        /// Cap on detect-eliminate iterations per window.
        #[arg(long, default_value_t = 10)]
        max_iter: usize,
        /// Truncate runs of identical consecutive values to this length.
        #[arg(long)]
        frozen_count: Option<usize>,
        /// Well-test reference CSV for calibrated channels:
        /// channel_id,timestamp,measured,reference.
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
        format: OutputFormat,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Truth JSON to score detections against; metrics are written next
        /// to the report (or to stdout when --out is omitted).
        #[arg(long)]
        score: Option<PathBuf>,
    },
    /// Generate a synthetic measurement campaign from a scenario config.
    Simulate {
        /// Scenario config (JSON).
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output directory; receives data.csv and truth.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an existing report against a campaign truth file.
    Score {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Metrics destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_alphas(specs: &[String]) -> Result<(Option<f64>, BTreeMap<String, f64>)> {
    let mut global = None;
    let mut overrides = BTreeMap::new();
    for spec in specs {
        match spec.split_once('=') {
            Some((id, value)) => {
                let alpha: f64 = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid alpha {value:?} for {id:?}")))?;
                overrides.insert(id.trim().to_string(), alpha);
            }
            None => {
                let alpha: f64 = spec
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid alpha {spec:?}")))?;
                if global.replace(alpha).is_some() {
                    return Err(Error::Config("multiple global alpha values".into()));
                }
            }
        }
    }
    Ok((global, overrides))
}

fn parse_policy(spec: &str) -> Result<EliminationPolicy> {
    match spec {
        "never" => Ok(EliminationPolicy::Never),
        "max-abs-z" => Ok(EliminationPolicy::MaxAbsZ),
        other => {
            let parts: Vec<&str> = other.split(':').collect();
            if parts.len() == 3 && parts[0] == "threshold" {
                let low = parts[1]
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid threshold {:?}", parts[1])))?;
                let floor = parts[2]
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid floor {:?}", parts[2])))?;
                let policy = EliminationPolicy::ThresholdRule {
                    low_production_threshold: low,
                    expected_production_floor: floor,
                };
                policy.validate()?;
                Ok(policy)
            } else {
                Err(Error::Config(format!(
                    "unknown policy {other:?}; expected never, max-abs-z, or threshold:LOW:FLOOR"
                )))
            }
        }
    }
}

fn write_output(path: Option<&PathBuf>, contents: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, contents)?,
        None => std::io::stdout().write_all(contents.as_bytes())?,
    }
    Ok(())
}

fn to_pretty_json<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Reconcile {
            topology,
            data,
            window,
            alphas,
            policy,
            min_coverage,
            max_iter,
            frozen_count,
            references,
            format,
            out,
            score,
        } => {
            let (alpha_global, alpha_overrides) = parse_alphas(&alphas)?;
            let opts = RunOptions {
                topology,
                data,
                window_hours: window,
                alpha_global,
                alpha_overrides,
                policy: parse_policy(&policy)?,
                max_iter,
                min_coverage,
                frozen_count,
                references,
            };
            let report = run_reconcile(&opts)?;
            match format {
                OutputFormat::Json => write_output(out.as_ref(), &to_pretty_json(&report)?)?,
                OutputFormat::Csv => {
                    let mut buf = Vec::new();
                    write_rates_csv(&report, &mut buf)?;
                    let text = String::from_utf8(buf)
                        .map_err(|e| Error::Config(format!("csv encoding: {e}")))?;
                    write_output(out.as_ref(), &text)?;
                }
            }
            if let Some(truth_path) = score {
                let truth = load_truth(&truth_path)?;
                let metrics = score_report(&report, &truth)?;
                let metrics_path = out.as_ref().map(|p| p.with_extension("metrics.json"));
                write_output(metrics_path.as_ref(), &to_pretty_json(&metrics)?)?;
            }
            Ok(())
        }
        Command::Simulate { scenario, seed, out } => {
            let config = load_campaign_config(&scenario)?;
            let campaign = simulate_campaign(&config, seed)?;
            write_campaign(&campaign, &out)
        }
        Command::Score { report, truth, out } => {
            let text = std::fs::read_to_string(&report)?;
            let report: RunReport = serde_json::from_str(&text)?;
            let truth = load_truth(&truth)?;
            let metrics = score_report(&report, &truth)?;
            write_output(out.as_ref(), &to_pretty_json(&metrics)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
