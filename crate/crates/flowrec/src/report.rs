//! JSON report emitted per reconciliation run.
//!
//! The layout is versioned and described by `schemas/report.schema.json`
//! shipped with the crate; tests hold the two in sync.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ged::{DetectionStatus, IterationTrace, TerminalStatus};
use crate::reconcile::SolveMethod;
use crate::simgen::WindowDetection;
use crate::topology::MeasurementChannel;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub id: String,
    pub measured: f64,
    pub y_hat: f64,
    pub adjustment: f64,
    pub z: Option<f64>,
    pub threshold: f64,
    pub flagged: bool,
    pub testable: bool,
    pub eliminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: String,
    pub y_hat: f64,
    pub posterior_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub eliminated: Option<String>,
    pub status: DetectionStatus,
    pub flagged: Vec<String>,
    pub ranked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window_start: DateTime<Utc>,
    pub window_end: DateTime<Utc>,
    /// Channels dropped before reconciliation for lack of coverage.
    pub excluded: Vec<String>,
    pub method: SolveMethod,
    /// Detection status of the final iteration.
    pub status: DetectionStatus,
    pub terminal_status: TerminalStatus,
    pub nodes: Vec<NodeReport>,
    pub channels: Vec<ChannelReport>,
    /// Test-statistic ranking of the first iteration, before any elimination.
    pub ranked: Vec<String>,
    /// Constraint residuals of the naive pre-reconciliation estimates.
    pub imbalance_pre: Vec<f64>,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub window_hours: i64,
    pub min_coverage: f64,
    pub windows: Vec<WindowReport>,
}

/// Flattens an elimination trace into the per-window report. Each channel
/// carries the statistics of the last iteration it was part of; node values
/// come from the final reconciliation.
pub fn window_report(
    window_start: DateTime<Utc>,
    window_end: DateTime<Utc>,
    excluded: Vec<String>,
    trace: &IterationTrace,
    channels: &[MeasurementChannel],
) -> WindowReport {
    let first = &trace.iterations[0];
    let last = trace.final_iteration();
    let final_recon = &last.result;
    let post_std = final_recon.posterior_std();
    let node_order = &first.node_order;
    let eliminated = trace.eliminated_channels();

    let mut channel_reports = Vec::new();
    for id in &first.stats.channel_order {
        let (it, idx) = trace
            .iterations
            .iter()
            .rev()
            .find_map(|it| {
                it.stats
                    .channel_order
                    .iter()
                    .position(|c| c == id)
                    .map(|idx| (it, idx))
            })
            .expect("channel present in at least the first iteration");
        let measured = it.result.adjustments[idx] + it.result.y_hat_channels[idx];
        let node_id = channels
            .iter()
            .find(|c| &c.id == id)
            .map(|c| c.node_id.as_str())
            .unwrap_or("");
        let y_hat = node_order
            .iter()
            .position(|n| n == node_id)
            .map(|j| final_recon.y_hat_nodes[j])
            .unwrap_or(it.result.y_hat_channels[idx]);
        channel_reports.push(ChannelReport {
            id: id.clone(),
            measured,
            y_hat,
            adjustment: measured - y_hat,
            z: it.stats.z[idx],
            threshold: it.report.thresholds[idx],
            flagged: it.report.flags[idx],
            testable: it.stats.testable[idx],
            eliminated: eliminated.contains(&id.as_str()),
        });
    }

    let nodes: Vec<NodeReport> = node_order
        .iter()
        .enumerate()
        .map(|(j, id)| NodeReport {
            id: id.clone(),
            y_hat: final_recon.y_hat_nodes[j],
            posterior_std: post_std[j],
        })
        .collect();

    WindowReport {
        window_start,
        window_end,
        excluded,
        method: final_recon.method,
        status: last.report.status,
        terminal_status: trace.terminal_status,
        nodes,
        channels: channel_reports,
        ranked: first.report.ranked.clone(),
        imbalance_pre: first.result.imbalance_pre.iter().copied().collect(),
        trace: trace
            .iterations
            .iter()
            .map(|it| TraceStep {
                eliminated: it.eliminated.clone(),
                status: it.report.status,
                flagged: it
                    .report
                    .channel_order
                    .iter()
                    .zip(&it.report.flags)
                    .filter(|(_, f)| **f)
                    .map(|(id, _)| id.clone())
                    .collect(),
                ranked: it.report.ranked.clone(),
            })
            .collect(),
    }
}

impl WindowReport {
    /// The view scoring needs: per-channel flags and the initial top rank.
    pub fn to_window_detection(&self) -> WindowDetection {
        WindowDetection {
            window_start: self.window_start,
            flags: self
                .channels
                .iter()
                .map(|c| (c.id.clone(), c.flagged))
                .collect(),
            top_ranked: self.ranked.first().cloned(),
        }
    }
}
