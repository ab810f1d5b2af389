//! Steady-state data validation and reconciliation.
//!
//! Given measurements `y ~ N(C y*, Sigma)` and balance constraints `A y* = 0`,
//! the reconciled node values minimize the Sigma-weighted squared adjustment
//! subject to the balances. Two routes are provided:
//!
//! * `reconcile_analytic` evaluates the closed-form gain
//!   `R = V (I - A'(A V A')^{-1} A V) C' Sigma^{-1}` with `V = (C' Sigma^{-1} C)^{-1}`,
//!   which requires every node to carry at least one channel.
//! * `reconcile_kkt` solves the saddle-point system of the Lagrangian directly
//!   and only needs the stacked [C; A] to have full column rank, so it also
//!   handles nodes measured only through constraints.
//!
//! Both expose the gain matrix so the gross error tests can form the
//! adjustment covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{SystemMatrices, COND_LIMIT};

/// Measurements aligned with a `SystemMatrices` channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub channel_order: Vec<String>,
}

impl MeasurementVector {
    pub fn new(values: Vec<f64>, sigma2: Vec<f64>, channel_order: Vec<String>) -> Result<Self> {
        if values.len() != sigma2.len() || values.len() != channel_order.len() {
            return Err(Error::Dimension(format!(
                "values ({}), sigma2 ({}) and channel_order ({}) lengths differ",
                values.len(),
                sigma2.len(),
                channel_order.len()
            )));
        }
        for (i, v) in sigma2.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "variance for channel {:?} must be > 0, got {v}",
                    channel_order[i]
                )));
            }
        }
        Ok(Self {
            values,
            sigma2,
            channel_order,
        })
    }

    fn check_alignment(&self, m: &SystemMatrices) -> Result<()> {
        if self.channel_order != m.channel_order {
            return Err(Error::Dimension(
                "measurement vector channel order does not match system matrices".into(),
            ));
        }
        Ok(())
    }

    pub fn as_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Analytic,
    Kkt,
}

/// Output of one reconciliation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconciliationResult {
    pub method: SolveMethod,
    /// Reconciled node values, ordered by `node_order`.
    pub y_hat_nodes: DVector<f64>,
    /// C * y_hat, per channel.
    pub y_hat_channels: DVector<f64>,
    /// a = y - C * y_hat, per channel.
    pub adjustments: DVector<f64>,
    /// A-residuals of the naive (pre-reconciliation) node estimates; NaN for
    /// balances touching an unmeasured node.
    pub imbalance_pre: DVector<f64>,
    /// Gain matrix R with y_hat = R y.
    pub gain: DMatrix<f64>,
    /// V = (C' Sigma^{-1} C)^{-1}, only available on the analytic path.
    pub prior_cov: Option<DMatrix<f64>>,
    /// Cov(y_hat) = R Sigma R'.
    pub posterior_cov: DMatrix<f64>,
}

impl ReconciliationResult {
    pub fn posterior_std(&self) -> Vec<f64> {
        self.posterior_cov
            .diagonal()
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }
}

/// Solves `a x = b`, rejecting systems with condition number above
/// `COND_LIMIT` instead of returning garbage. The solve itself goes through
/// column-pivoted QR with one step of iterative refinement.
fn solve_conditioned(a: &DMatrix<f64>, b: &DMatrix<f64>, label: &str) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_min > 0.0) || s_max / s_min > COND_LIMIT {
        return Err(Error::Singular(format!(
            "{label} is singular or ill-conditioned (cond ~ {:.3e})",
            if s_min > 0.0 { s_max / s_min } else { f64::INFINITY }
        )));
    }
    let qr = a.clone().col_piv_qr();
    let mut x = qr
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{label}: QR solve failed")))?;
    if let Some(dx) = qr.solve(&(b - a * &x)) {
        x += dx;
    }
    Ok(x)
}

fn sigma_inv(y: &MeasurementVector) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        y.sigma2.len(),
        y.sigma2.iter().map(|s| 1.0 / s),
    ))
}

fn sigma(y: &MeasurementVector) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(&y.sigma2))
}

/// Inverse-variance weighted per-node estimates straight from the raw
/// measurements; NaN where a node has no channel.
fn naive_node_estimates(y: &MeasurementVector, m: &SystemMatrices) -> DVector<f64> {
    let mut num: DVector<f64> = DVector::zeros(m.m());
    let mut den: DVector<f64> = DVector::zeros(m.m());
    for i in 0..m.n() {
        for j in 0..m.m() {
            if m.c[(i, j)] != 0.0 {
                num[j] += y.values[i] / y.sigma2[i];
                den[j] += 1.0 / y.sigma2[i];
            }
        }
    }
    DVector::from_iterator(
        m.m(),
        (0..m.m()).map(|j| if den[j] > 0.0 { num[j] / den[j] } else { f64::NAN }),
    )
}

fn finish(
    method: SolveMethod,
    y: &MeasurementVector,
    m: &SystemMatrices,
    gain: DMatrix<f64>,
    prior_cov: Option<DMatrix<f64>>,
) -> ReconciliationResult {
    let yv = y.as_vector();
    let y_hat_nodes = &gain * &yv;
    let y_hat_channels = &m.c * &y_hat_nodes;
    let adjustments = &yv - &y_hat_channels;
    let imbalance_pre = &m.a * naive_node_estimates(y, m);
    let posterior_cov = &gain * sigma(y) * gain.transpose();
    ReconciliationResult {
        method,
        y_hat_nodes,
        y_hat_channels,
        adjustments,
        imbalance_pre,
        gain,
        prior_cov,
        posterior_cov,
    }
}

/// Closed-form reconciliation. Requires every node to be directly measured
/// (C full column rank); fails with a singularity error otherwise.
pub fn reconcile_analytic(
    y: &MeasurementVector,
    m: &SystemMatrices,
) -> Result<ReconciliationResult> {
    y.check_alignment(m)?;
    let si = sigma_inv(y);
    let ct_si = m.c.transpose() * &si;
    let normal = &ct_si * &m.c;
    let v = solve_conditioned(&normal, &DMatrix::identity(m.m(), m.m()), "C' Sigma^-1 C")?;

    let gain = if m.q() == 0 {
        &v * &ct_si
    } else {
        let ava = &m.a * &v * m.a.transpose();
        let ava_inv = solve_conditioned(&ava, &DMatrix::identity(m.q(), m.q()), "A V A'")?;
        let projector = DMatrix::identity(m.m(), m.m()) - m.a.transpose() * ava_inv * &m.a * &v;
        &v * projector * &ct_si
    };
    Ok(finish(SolveMethod::Analytic, y, m, gain, Some(v)))
}

/// Saddle-point solve of the constrained least-squares first-order conditions:
///
/// ```text
/// [ C' Sigma^-1 C   A' ] [ y_hat  ]   [ C' Sigma^-1 y ]
/// [ A               0  ] [ lambda ] = [ 0             ]
/// ```
pub fn reconcile_kkt(y: &MeasurementVector, m: &SystemMatrices) -> Result<ReconciliationResult> {
    y.check_alignment(m)?;
    let si = sigma_inv(y);
    let ct_si = m.c.transpose() * &si;
    let normal = &ct_si * &m.c;

    let dim = m.m() + m.q();
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (m.m(), m.m())).copy_from(&normal);
    if m.q() > 0 {
        kkt.view_mut((0, m.m()), (m.m(), m.q()))
            .copy_from(&m.a.transpose());
        kkt.view_mut((m.m(), 0), (m.q(), m.m())).copy_from(&m.a);
    }

    // Solving for the full right-hand block [C' Sigma^-1; 0] yields the gain
    // matrix in the primal rows, so the KKT path exposes R as well.
    let mut rhs = DMatrix::zeros(dim, m.n());
    rhs.rows_mut(0, m.m()).copy_from(&ct_si);
    let solution = solve_conditioned(&kkt, &rhs, "KKT saddle-point system")
        .map_err(|_| Error::NotEstimable("KKT system singular: measurements plus constraints do not determine all nodes".into()))?;
    let gain = solution.rows(0, m.m()).into_owned();
    Ok(finish(SolveMethod::Kkt, y, m, gain, None))
}

/// Measurement adjustments a = y - C y_hat for externally supplied node values.
pub fn adjustments(
    y: &MeasurementVector,
    m: &SystemMatrices,
    y_hat_nodes: &DVector<f64>,
) -> Result<DVector<f64>> {
    y.check_alignment(m)?;
    if y_hat_nodes.len() != m.m() {
        return Err(Error::Dimension(format!(
            "expected {} node values, got {}",
            m.m(),
            y_hat_nodes.len()
        )));
    }
    Ok(y.as_vector() - &m.c * y_hat_nodes)
}
