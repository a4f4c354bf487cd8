//! Population estimands for the additive component model.
//!
//! Observations are `Y_i = mu_i + alpha_{g(i)} + gamma_{t(i)} + eps_i` with
//! a stationary AR(1) time factor, so every coordinate has
//!
//! ```text
//! Cov(Y_i, Y_j) = s2_alpha 1{g_i = g_j} + s2_innov / (1 - rho^2) rho^|t_i - t_j| + s2_eps 1{i = j}
//! ```
//!
//! and coordinates are independent. Each estimand is a pair sum
//! `sum_{i,j} w(i, j) E_ij` where `E_ij` is either the covariance or the
//! second moment `Cov + mu_i mu_j'`:
//!
//! | estimand | moment | pair weight |
//! |----------|--------|-------------|
//! | `v_true` | Cov    | 1 |
//! | `v_adj`  | Cov    | CHS weights without the within-cluster lag adjustment |
//! | `v_con`  | second | HM weights |
//! | `v_chs`  | second | CHS weights |
//!
//! Two strategies are implemented: a literal double loop and a factorized
//! path that counts pairs by (same cluster, period gap) for the covariance
//! part and runs the sample estimators on the mean matrix for the mean part.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{self, pair_weight, EstimatorChoice, EstimatorError, Method, ScoreMatrix};
use crate::kernel::KernelSpec;
use crate::numerics::{
    compensated_sum, solve_spd, sym_eigen_min, CompensatedSum, Matrix, NumericsError, OuterAccumulator,
    SymMatrix,
};
use crate::panel::PanelIndex;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("variance parameter {name} must be finite and nonnegative, got {value}")]
    InvalidVariance { name: &'static str, value: f64 },
    #[error("autoregressive coefficient must lie in (-1, 1), got {0}")]
    InvalidRho(f64),
    #[error("mean matrix has {found} rows but the panel has {expected} observations")]
    MeanRows { expected: usize, found: usize },
    #[error("expected {expected} means, got {found}")]
    WrongLength { expected: usize, found: usize },
    #[error("bandwidth {bandwidth} must be below the number of periods {periods}")]
    BandwidthTooLarge { bandwidth: usize, periods: usize },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Additive component model on a fixed panel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentDgp {
    panel: PanelIndex,
    mu: ScoreMatrix,
    pub sigma2_alpha: f64,
    pub sigma2_gamma_innov: f64,
    pub rho: f64,
    pub sigma2_eps: f64,
}

impl ComponentDgp {
    pub fn new(
        panel: PanelIndex,
        mu: ScoreMatrix,
        sigma2_alpha: f64,
        sigma2_gamma_innov: f64,
        rho: f64,
        sigma2_eps: f64,
    ) -> Result<Self, OracleError> {
        for (name, value) in [
            ("sigma2_alpha", sigma2_alpha),
            ("sigma2_gamma_innov", sigma2_gamma_innov),
            ("sigma2_eps", sigma2_eps),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(OracleError::InvalidVariance { name, value });
            }
        }
        if !(rho.abs() < 1.0) {
            return Err(OracleError::InvalidRho(rho));
        }
        if mu.n() != panel.n() {
            return Err(OracleError::MeanRows {
                expected: panel.n(),
                found: mu.n(),
            });
        }
        Ok(Self {
            panel,
            mu,
            sigma2_alpha,
            sigma2_gamma_innov,
            rho,
            sigma2_eps,
        })
    }

    /// Zero means, scalar observations, unit variance for every component.
    pub fn unit(panel: PanelIndex, rho: f64) -> Result<Self, OracleError> {
        let mu = zero_means(panel.n(), 1);
        Self::new(panel, mu, 1.0, 1.0, rho, 1.0)
    }

    /// Zero covariances: only the means matter.
    pub fn means_only(panel: PanelIndex, mu: ScoreMatrix) -> Result<Self, OracleError> {
        Self::new(panel, mu, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn with_means(mut self, mu: ScoreMatrix) -> Result<Self, OracleError> {
        if mu.n() != self.panel.n() {
            return Err(OracleError::MeanRows {
                expected: self.panel.n(),
                found: mu.n(),
            });
        }
        self.mu = mu;
        Ok(self)
    }

    pub fn panel(&self) -> &PanelIndex {
        &self.panel
    }

    pub fn means(&self) -> &ScoreMatrix {
        &self.mu
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    /// Stationary variance of the time factor.
    pub fn gamma_variance(&self) -> f64 {
        self.sigma2_gamma_innov / (1.0 - self.rho * self.rho)
    }

    /// Autocovariance of the time factor at `gap`.
    pub fn gamma_autocov(&self, gap: usize) -> f64 {
        if self.sigma2_gamma_innov == 0.0 {
            return 0.0;
        }
        self.gamma_variance() * self.rho.powi(gap as i32)
    }

    /// Per-coordinate covariance of observations `i` and `j`.
    pub fn cov_scalar(&self, i: usize, j: usize) -> f64 {
        let p = &self.panel;
        let mut c = self.gamma_autocov(p.period(i).abs_diff(p.period(j)));
        if p.cluster(i) == p.cluster(j) {
            c += self.sigma2_alpha;
        }
        if i == j {
            c += self.sigma2_eps;
        }
        c
    }
}

fn zero_means(n: usize, v: usize) -> ScoreMatrix {
    ScoreMatrix::new(v, vec![0.0; n * v]).expect("zeros are finite")
}

/// `Cov(Y_i, Y_j)` as a diagonal matrix.
pub fn population_cov(d: &ComponentDgp, i: usize, j: usize) -> SymMatrix {
    SymMatrix::from_diag(&vec![d.cov_scalar(i, j); d.dim()])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandStrategy {
    #[default]
    DoubleSum,
    Factorized,
}

/// Which pairs an estimand sums over and whether means enter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Target {
    True,
    Adj,
    Con,
    Chs,
    /// Same-cluster pairs in different periods.
    Omitted,
}

impl Target {
    fn uses_means(self) -> bool {
        matches!(self, Target::Con | Target::Chs)
    }

    fn choice(self) -> Option<EstimatorChoice> {
        match self {
            Target::Adj => Some(EstimatorChoice::chs_dropped()),
            Target::Con => Some(EstimatorChoice::new(Method::Hm)),
            Target::Chs => Some(EstimatorChoice::new(Method::Chs)),
            Target::True | Target::Omitted => None,
        }
    }
}

fn check_bandwidth(d: &ComponentDgp, k: &KernelSpec) -> Result<(), OracleError> {
    let periods = d.panel.num_periods();
    if k.bandwidth > 0 && k.bandwidth >= periods {
        return Err(OracleError::BandwidthTooLarge {
            bandwidth: k.bandwidth,
            periods,
        });
    }
    Ok(())
}

fn double_sum(d: &ComponentDgp, target: Target, k: &KernelSpec) -> SymMatrix {
    let p = &d.panel;
    let choice = target.choice();
    let mut cov = CompensatedSum::new();
    let mut means = OuterAccumulator::new(d.dim());
    for i in 0..p.n() {
        for j in 0..p.n() {
            let w = match (target, choice) {
                (_, Some(c)) => pair_weight(p, i, j, c, Some(k)),
                (Target::Omitted, None) => {
                    if p.cluster(i) == p.cluster(j) && p.period(i) != p.period(j) {
                        1.0
                    } else {
                        0.0
                    }
                }
                _ => 1.0,
            };
            if w == 0.0 {
                continue;
            }
            cov.add(w * d.cov_scalar(i, j));
            if target.uses_means() {
                means.add_outer(d.mu.row(i), d.mu.row(j), w);
            }
        }
    }
    let mut out = SymMatrix::from_diag(&vec![cov.value(); d.dim()]);
    if target.uses_means() {
        out = out.add(&means.finish());
    }
    out
}

/// Ordered pair counts by period gap, split by cluster equality.
struct PairCounts {
    same_g: Vec<f64>,
    diff_g: Vec<f64>,
    n: f64,
}

fn pair_counts(p: &PanelIndex) -> PairCounts {
    let periods = p.num_periods();
    let mut all = vec![0.0; periods];
    let mut same_g = vec![0.0; periods];
    let time_n: Vec<f64> = p.periods().map(|o| o.len() as f64).collect();
    for (t, &a) in time_n.iter().enumerate() {
        for (u, &b) in time_n.iter().enumerate() {
            all[t.abs_diff(u)] += a * b;
        }
    }
    for obs in p.clusters() {
        let mut counts = vec![0.0; periods];
        for &i in obs {
            counts[p.period(i)] += 1.0;
        }
        for (t, &a) in counts.iter().enumerate().filter(|(_, a)| **a > 0.0) {
            for (u, &b) in counts.iter().enumerate().filter(|(_, b)| **b > 0.0) {
                same_g[t.abs_diff(u)] += a * b;
            }
        }
    }
    let diff_g = all.iter().zip(&same_g).map(|(a, s)| a - s).collect();
    PairCounts {
        same_g,
        diff_g,
        n: p.n() as f64,
    }
}

/// Pair weight as a function of (same cluster, gap) for distinct or equal
/// observations alike; none of the targets distinguishes `i = j`.
fn gap_weight(target: Target, k: &KernelSpec, same_g: bool, gap: usize) -> f64 {
    let lag = if gap >= 1 && gap <= k.bandwidth {
        k.weight_unchecked(gap)
    } else {
        0.0
    };
    let g = if same_g { 1.0 } else { 0.0 };
    match target {
        Target::True => 1.0,
        Target::Omitted => {
            if gap > 0 {
                g
            } else {
                0.0
            }
        }
        Target::Adj => {
            if gap == 0 {
                1.0
            } else {
                g + lag
            }
        }
        Target::Chs => {
            if gap == 0 {
                1.0
            } else {
                g + lag * (1.0 - g)
            }
        }
        Target::Con => {
            if gap == 0 {
                let total: f64 = k.weights().iter().sum();
                g + 1.0 + 2.0 * total
            } else {
                g + lag
            }
        }
    }
}

fn factorized(d: &ComponentDgp, target: Target, k: &KernelSpec) -> Result<SymMatrix, OracleError> {
    let counts = pair_counts(&d.panel);
    let mut terms = Vec::with_capacity(2 * counts.same_g.len() + 1);
    for gap in 0..counts.same_g.len() {
        let gc = d.gamma_autocov(gap);
        terms.push(counts.same_g[gap] * gap_weight(target, k, true, gap) * (d.sigma2_alpha + gc));
        terms.push(counts.diff_g[gap] * gap_weight(target, k, false, gap) * gc);
    }
    terms.push(counts.n * gap_weight(target, k, true, 0) * d.sigma2_eps);
    let cov = compensated_sum(terms);
    let mut out = SymMatrix::from_diag(&vec![cov; d.dim()]);
    if target.uses_means() {
        let m = &d.mu;
        let mean_part = match target {
            Target::Con => estimators::hm_con(&d.panel, m, k)?.matrix,
            Target::Chs => estimators::chs(&d.panel, m, k, false)?.matrix,
            _ => unreachable!(),
        };
        out = out.add(&mean_part);
    }
    Ok(out)
}

fn compute(
    d: &ComponentDgp,
    target: Target,
    k: &KernelSpec,
    strategy: EstimandStrategy,
) -> Result<SymMatrix, OracleError> {
    check_bandwidth(d, k)?;
    match strategy {
        EstimandStrategy::DoubleSum => Ok(double_sum(d, target, k)),
        EstimandStrategy::Factorized => factorized(d, target, k),
    }
}

/// `Var(sum_i Y_i)`; independent of the means.
pub fn v_true(d: &ComponentDgp, strategy: EstimandStrategy) -> Result<SymMatrix, OracleError> {
    compute(d, Target::True, &KernelSpec::uniform(0), strategy)
}

/// Kernel-truncated variance: cluster, time and cell covariance sums plus
/// kernel-weighted cross-period aggregate covariances, without subtracting
/// the within-cluster cross-period line.
pub fn v_adj(d: &ComponentDgp, k: &KernelSpec, strategy: EstimandStrategy) -> Result<SymMatrix, OracleError> {
    compute(d, Target::Adj, k, strategy)
}

/// Expectation of the HM estimator.
pub fn v_con_estimand(
    d: &ComponentDgp,
    k: &KernelSpec,
    strategy: EstimandStrategy,
) -> Result<SymMatrix, OracleError> {
    compute(d, Target::Con, k, strategy)
}

/// Expectation of the CHS estimator, adjustment included.
pub fn v_chs_estimand(
    d: &ComponentDgp,
    k: &KernelSpec,
    strategy: EstimandStrategy,
) -> Result<SymMatrix, OracleError> {
    compute(d, Target::Chs, k, strategy)
}

/// Sum of same-cluster covariances across different periods: the line that
/// separates `v_true` from the fully untruncated `v_adj`.
pub fn omitted_within_cluster(d: &ComponentDgp, strategy: EstimandStrategy) -> Result<SymMatrix, OracleError> {
    compute(d, Target::Omitted, &KernelSpec::uniform(0), strategy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimandReport {
    pub v_true: SymMatrix,
    pub v_adj: SymMatrix,
    pub v_con: SymMatrix,
    pub v_chs: SymMatrix,
    pub omitted: SymMatrix,
    /// Smallest eigenvalue of `v_true`.
    pub lambda_n: f64,
    /// Smallest eigenvalue of `v_con - v_adj`.
    pub psd_gap_min_eig: f64,
    /// Smallest eigenvalue of `v_chs - v_true`.
    pub chs_gap_min_eig: f64,
    /// Frobenius norm of `v_true^{-1} v_adj - I`; absent when `v_true` is
    /// singular.
    pub ratio_distance: Option<f64>,
    pub singular_v_true: bool,
}

impl EstimandReport {
    /// Whether `v_con - v_adj` is PSD up to `1e-10 * ||v_con||`.
    pub fn con_dominates_adj(&self) -> bool {
        let norm = self.v_con.spectral_norm().unwrap_or(f64::INFINITY);
        self.psd_gap_min_eig >= -1e-10 * norm
    }
}

pub fn psd_gap_report(
    d: &ComponentDgp,
    k: &KernelSpec,
    strategy: EstimandStrategy,
) -> Result<EstimandReport, OracleError> {
    let vt = v_true(d, strategy)?;
    let va = v_adj(d, k, strategy)?;
    let vc = v_con_estimand(d, k, strategy)?;
    let vs = v_chs_estimand(d, k, strategy)?;
    let omitted = omitted_within_cluster(d, strategy)?;
    let lambda_n = sym_eigen_min(&vt)?;
    let psd_gap_min_eig = sym_eigen_min(&vc.sub(&va))?;
    let chs_gap_min_eig = sym_eigen_min(&vs.sub(&vt))?;
    let ratio_distance = if lambda_n > 0.0 {
        match solve_spd(&vt, &va.to_matrix()) {
            Ok(x) => {
                let eye = SymMatrix::identity(d.dim()).to_matrix();
                Some(x.sub(&eye).frobenius_norm())
            }
            Err(NumericsError::NotPositiveDefinite { .. }) => None,
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    Ok(EstimandReport {
        singular_v_true: ratio_distance.is_none(),
        v_true: vt,
        v_adj: va,
        v_con: vc,
        v_chs: vs,
        omitted,
        lambda_n,
        psd_gap_min_eig,
        chs_gap_min_eig,
        ratio_distance,
    })
}

/// Mean-driven gaps in the three-period series example with unit variances
/// and lag-one dependence.
///
/// `D1 = sum m_t^2 + 2 sum m_t m_{t+1}` is the amount by which the plug-in
/// long-run variance overshoots the truth; `D2` is the overshoot of the
/// conservative version, `2 sum m_t^2 + 2 sum m_t m_{t+1} + sum Var(y_t)`.
pub fn series_mean_gap(means: &[f64]) -> Result<(f64, f64), OracleError> {
    if means.len() != 3 {
        return Err(OracleError::WrongLength {
            expected: 3,
            found: means.len(),
        });
    }
    let sq = compensated_sum(means.iter().map(|m| m * m));
    let lag = compensated_sum(means.windows(2).map(|w| w[0] * w[1]));
    let d1 = sq + 2.0 * lag;
    let d2 = 2.0 * sq + 2.0 * lag + means.len() as f64;
    Ok((d1, d2))
}

/// Two-cluster, four-period mean table with balanced rows.
pub const COUNTEREXAMPLE_MEANS: [[f64; 4]; 2] = [[-1.0, -1.0, 1.0, 1.0], [1.0, -1.0, -1.0, 1.0]];
/// Alternating rows: zero cluster sums, strong negative serial products.
pub const ALTERNATING_MEANS: [[f64; 4]; 2] = [[1.0, -1.0, 1.0, -1.0], [1.0, -1.0, 1.0, -1.0]];

/// Mean-product pieces of the CHS estimand at one lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDecomposition {
    /// `sum_g (sum_{i in g} m_i)^2`
    pub cluster: f64,
    /// `sum_t (sum_{i in t} m_i)^2`
    pub time: f64,
    /// `sum_{(t,g)} (cell sum)^2`
    pub cell: f64,
    /// `sum_t E[y_t] E[y_{t+m}]`
    pub serial: f64,
    /// `sum_{t,g} (cell sum at t)(cell sum at t+m)`
    pub within_cluster_serial: f64,
}

impl MeanDecomposition {
    /// `cluster + time - cell + 2 serial - 2 within_cluster_serial`.
    pub fn aggregate(&self) -> f64 {
        self.cluster + self.time - self.cell + 2.0 * self.serial - 2.0 * self.within_cluster_serial
    }
}

/// Decomposes the mean part of the CHS estimand (uniform weight at `lag`)
/// for scalar means laid out as `table[g][t]`, one observation per cell.
pub fn mean_decomposition(table: &[[f64; 4]], lag: usize) -> MeanDecomposition {
    let periods = table.first().map_or(0, |r| r.len());
    let col = |t: usize| table.iter().map(|r| r[t]).sum::<f64>();
    let y: Vec<f64> = (0..periods).map(col).collect();
    let cluster = table.iter().map(|r| r.iter().sum::<f64>().powi(2)).sum();
    let time = y.iter().map(|v| v * v).sum();
    let cell = table.iter().flatten().map(|v| v * v).sum();
    let serial = (0..periods.saturating_sub(lag)).map(|t| y[t] * y[t + lag]).sum();
    let within_cluster_serial = table
        .iter()
        .map(|r| (0..periods.saturating_sub(lag)).map(|t| r[t] * r[t + lag]).sum::<f64>())
        .sum();
    MeanDecomposition {
        cluster,
        time,
        cell,
        serial,
        within_cluster_serial,
    }
}

/// Balanced panel and scalar means (g-major) for a `G x 4` table.
pub fn table_dgp(table: &[[f64; 4]]) -> Result<ComponentDgp, OracleError> {
    let panel = PanelIndex::balanced(table.len(), 4);
    let mu = ScoreMatrix::scalar(&table.iter().flatten().copied().collect::<Vec<_>>())?;
    ComponentDgp::means_only(panel, mu)
}

/// `v_chs - v_true` (scalar) for a mean table with zero covariances and the
/// uniform kernel at `M = 1`.
pub fn chs_mean_gap(table: &[[f64; 4]], strategy: EstimandStrategy) -> Result<f64, OracleError> {
    let d = table_dgp(table)?;
    let k = KernelSpec::uniform(1);
    let gap = v_chs_estimand(&d, &k, strategy)?.sub(&v_true(&d, strategy)?);
    Ok(gap.get(0, 0))
}

/// `v_true^{-1} v_adj` as a dense matrix.
pub fn ratio_matrix(d: &ComponentDgp, k: &KernelSpec, strategy: EstimandStrategy) -> Result<Matrix, OracleError> {
    let vt = v_true(d, strategy)?;
    let va = v_adj(d, k, strategy)?;
    Ok(solve_spd(&vt, &va.to_matrix())?)
}
