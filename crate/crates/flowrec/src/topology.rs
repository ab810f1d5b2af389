//! Process network description and system matrices.
//!
//! A network is a set of nodes (wells, headers, separators, export points)
//! tied together by linear mass-balance constraints with coefficients in
//! {-1, +1}. Measurement channels bind meters to nodes. From these we build
//! the binary measurement matrix `C` (one row per active channel, a single 1
//! in the column of the channel's node) and the constraint matrix `A` (one
//! row per balance).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::UncertaintySpec;

/// Condition-number limit beyond which a factorized system is treated as singular.
pub const COND_LIMIT: f64 = 1e12;

/// Rank tolerance for the integer-entried structural matrices.
const RANK_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Well,
    Header,
    Separator,
    Export,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: String,
    pub name: String,
    pub role: NodeRole,
    pub tier: u32,
}

/// One mass balance: sum of `plus` nodes minus sum of `minus` nodes equals zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceConstraint {
    pub label: String,
    pub plus: Vec<String>,
    pub minus: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterType {
    Mpfm,
    DdVfm,
    MVfm,
    Fiscal,
    Other,
}

impl MeterType {
    /// Default significance level per meter type; tighter for meters that
    /// are trusted more, so they trigger fewer false detections.
    pub fn default_alpha(&self) -> f64 {
        match self {
            MeterType::Fiscal => 0.0001,
            MeterType::Mpfm => 0.001,
            MeterType::DdVfm | MeterType::MVfm | MeterType::Other => 0.01,
        }
    }
}

/// A physical or virtual meter bound to one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementChannel {
    pub id: String,
    pub node_id: String,
    pub meter_type: MeterType,
    pub alpha: f64,
    pub uncertainty: UncertaintySpec,
    pub active: bool,
}

impl MeasurementChannel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "channel {}: alpha must be strictly inside (0,1), got {}",
                self.id, self.alpha
            )));
        }
        self.uncertainty.validate().map_err(|e| {
            Error::InvalidArgument(format!("channel {}: {e}", self.id))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetworkTopology {
    pub nodes: Vec<Node>,
    pub constraints: Vec<BalanceConstraint>,
}

impl NetworkTopology {
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Topology("topology has no nodes".into()));
        }
        let mut ids = BTreeSet::new();
        for node in &self.nodes {
            if !ids.insert(node.id.as_str()) {
                return Err(Error::Topology(format!("duplicate node id {:?}", node.id)));
            }
        }
        for c in &self.constraints {
            if c.plus.len() + c.minus.len() < 2 {
                return Err(Error::Topology(format!(
                    "constraint {:?} must reference at least two nodes",
                    c.label
                )));
            }
            let mut seen = BTreeSet::new();
            for id in c.plus.iter().chain(c.minus.iter()) {
                if !ids.contains(id.as_str()) {
                    return Err(Error::Topology(format!(
                        "constraint {:?} references unknown node {:?}",
                        c.label, id
                    )));
                }
                if !seen.insert(id.as_str()) {
                    return Err(Error::Topology(format!(
                        "constraint {:?} references node {:?} more than once",
                        c.label, id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn node_index(&self) -> BTreeMap<&str, usize> {
        let mut ids: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        ids.sort_unstable();
        ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
    }
}

/// The matrices of the steady-state reconciliation problem, with the id
/// orderings that define their row/column meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    /// N x M binary measurement matrix; row i has a single 1 in the column
    /// of channel i's node.
    pub c: DMatrix<f64>,
    /// Q x M constraint matrix with entries in {-1, 0, +1}.
    pub a: DMatrix<f64>,
    pub channel_order: Vec<String>,
    pub node_order: Vec<String>,
}

impl SystemMatrices {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }
    pub fn m(&self) -> usize {
        self.c.ncols()
    }
    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    /// The (N+Q) x M stack of C over A whose column rank decides estimability.
    pub fn stacked(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.n() + self.q(), self.m());
        s.rows_mut(0, self.n()).copy_from(&self.c);
        s.rows_mut(self.n(), self.q()).copy_from(&self.a);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EstimabilityReport {
    /// C'inv(Sigma)C is nonsingular: every node carries at least one channel,
    /// so the closed-form gain exists.
    pub analytic_ok: bool,
    /// The stacked [C; A] has full column rank: the constrained problem has a
    /// unique solution even for nodes measured only through balances.
    pub general_ok: bool,
}

/// Builds C and A from a topology and its channels. Channel and node order
/// are fixed by lexicographic id sort; inactive channels are dropped.
pub fn build_system_matrices(
    topology: &NetworkTopology,
    channels: &[MeasurementChannel],
) -> Result<SystemMatrices> {
    topology.validate()?;
    let node_index = topology.node_index();
    let node_order: Vec<String> = node_index.keys().map(|s| s.to_string()).collect();

    let mut active: Vec<&MeasurementChannel> = channels.iter().filter(|ch| ch.active).collect();
    active.sort_by(|a, b| a.id.cmp(&b.id));
    if active.is_empty() {
        return Err(Error::Topology("no active measurement channels".into()));
    }
    let mut seen = BTreeSet::new();
    for ch in &active {
        ch.validate()?;
        if !seen.insert(ch.id.as_str()) {
            return Err(Error::Topology(format!("duplicate channel id {:?}", ch.id)));
        }
        if !node_index.contains_key(ch.node_id.as_str()) {
            return Err(Error::Topology(format!(
                "channel {:?} references unknown node {:?}",
                ch.id, ch.node_id
            )));
        }
    }

    let n = active.len();
    let m = node_order.len();
    let q = topology.constraints.len();

    let mut c = DMatrix::zeros(n, m);
    for (i, ch) in active.iter().enumerate() {
        c[(i, node_index[ch.node_id.as_str()])] = 1.0;
    }
    let mut a = DMatrix::zeros(q, m);
    for (row, constraint) in topology.constraints.iter().enumerate() {
        for id in &constraint.plus {
            a[(row, node_index[id.as_str()])] = 1.0;
        }
        for id in &constraint.minus {
            a[(row, node_index[id.as_str()])] = -1.0;
        }
    }

    Ok(SystemMatrices {
        c,
        a,
        channel_order: active.iter().map(|ch| ch.id.clone()).collect(),
        node_order,
    })
}

/// Checks the two estimability levels for a given set of variances.
pub fn validate_estimability(m: &SystemMatrices, sigma2: &[f64]) -> Result<EstimabilityReport> {
    if sigma2.len() != m.n() {
        return Err(Error::Dimension(format!(
            "expected {} variances, got {}",
            m.n(),
            sigma2.len()
        )));
    }
    for (i, v) in sigma2.iter().enumerate() {
        if !(*v > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "variance for channel {:?} must be > 0, got {v}",
                m.channel_order[i]
            )));
        }
    }
    // With unit rows in C, C'inv(Sigma)C is diagonal-free of mixing only up to
    // column occupancy; rank(C) = M is the invertibility condition.
    let analytic_ok = m.c.rank(RANK_EPS) == m.m();
    let general_ok = m.stacked().rank(RANK_EPS) == m.m();
    Ok(EstimabilityReport {
        analytic_ok,
        general_ok,
    })
}

/// Redundancy of the system: N + Q - M for full-column-rank stacks.
/// A value >= 1 is what gross error testing consumes.
pub fn degrees_of_freedom(m: &SystemMatrices) -> Result<usize> {
    if m.stacked().rank(RANK_EPS) != m.m() {
        return Err(Error::NotEstimable(
            "stacked [C; A] is rank deficient; degrees of freedom undefined".into(),
        ));
    }
    Ok(m.n() + m.q() - m.m())
}

// ---------------------------------------------------------------------------
// Topology config file
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    nodes: Vec<Node>,
    constraints: Vec<BalanceConstraint>,
    channels: Vec<ChannelEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelEntry {
    id: String,
    node: String,
    #[serde(rename = "type")]
    meter_type: MeterType,
    alpha: Option<f64>,
    uncertainty: UncertaintySpec,
    #[serde(default = "default_true")]
    active: bool,
}

fn default_true() -> bool {
    true
}

/// Parses the topology config JSON. Unknown fields are rejected; a missing
/// `alpha` falls back to the meter type's default.
pub fn parse_topology(json: &str) -> Result<(NetworkTopology, Vec<MeasurementChannel>)> {
    let file: TopologyFile =
        serde_json::from_str(json).map_err(|e| Error::Config(format!("topology: {e}")))?;
    let topology = NetworkTopology {
        nodes: file.nodes,
        constraints: file.constraints,
    };
    topology.validate()?;
    let channels: Vec<MeasurementChannel> = file
        .channels
        .into_iter()
        .map(|entry| MeasurementChannel {
            alpha: entry.alpha.unwrap_or_else(|| entry.meter_type.default_alpha()),
            id: entry.id,
            node_id: entry.node,
            meter_type: entry.meter_type,
            uncertainty: entry.uncertainty,
            active: entry.active,
        })
        .collect();
    for ch in &channels {
        ch.validate()?;
        if !topology.nodes.iter().any(|n| n.id == ch.node_id) {
            return Err(Error::Topology(format!(
                "channel {:?} references unknown node {:?}",
                ch.id, ch.node_id
            )));
        }
    }
    Ok((topology, channels))
}

pub fn load_topology(path: &Path) -> Result<(NetworkTopology, Vec<MeasurementChannel>)> {
    let text = std::fs::read_to_string(path)?;
    parse_topology(&text)
}
