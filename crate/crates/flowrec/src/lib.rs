//! Steady-state validation and reconciliation of flow-rate measurements.
//!
//! The crate covers the full path from raw meter series to a reconciled,
//! fault-annotated report: network topology and balance constraints,
//! constrained weighted least squares with analytic and saddle-point solvers,
//! maximum-power residual tests with per-meter significance levels, an
//! iterative detect-and-eliminate loop, measurement uncertainty models, data
//! screening and window aggregation, and a synthetic campaign generator for
//! benchmarking detection performance.

pub mod error;
pub mod ged;
pub mod ingest;
pub mod pipeline;
pub mod reconcile;
pub mod report;
pub mod simgen;
pub mod topology;
pub mod uncertainty;

pub use error::{Error, Result};
