//! Monte Carlo rejection rates for the two-way component regression.
//!
//! Each replication draws
//!
//! ```text
//! X_gt = w_a a^x_g + w_g c^x_t + w_e e^x_gt
//! U_gt = w_a a^u_g + w_g c^u_t + w_e e^u_gt
//! Y_gt = b0 + (b1 + h_gt) X_gt + U_gt
//! ```
//!
//! with standard normal `a`, `e` and stationary AR(1) time factors `c`
//! (unit innovations), fits OLS with an intercept and tests `b1` with each
//! variance estimator. Heterogeneous slopes `h_gt` make the score means
//! vary across observations while their total stays zero.
//!
//! Every latent variable has its own ChaCha stream keyed by the master seed,
//! the replication index and a variable tag, so results do not depend on
//! scheduling. Replications run on a rayon pool and are reduced in index
//! order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use thiserror::Error;

use crate::estimators::{EstimatorChoice, ScoreMatrix};
use crate::kernel::KernelSpec;
use crate::numerics::{compensated_sum, CompensatedSum};
use crate::oracle::{v_true, ComponentDgp, EstimandStrategy, OracleError};
use crate::panel::PanelIndex;
use crate::regression::{ols_fit, resolve_kernel, sandwich, BandwidthRule, Design, RegressionError, Z_975};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("autoregressive coefficient must lie in (-1, 1), got {0}")]
    InvalidRho(f64),
    #[error("replications must be at least 1")]
    NoReplications,
    #[error("panel needs at least 2 clusters and 2 periods, got {clusters} x {periods}")]
    InvalidDimensions { clusters: usize, periods: usize },
    #[error("parameter {name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("innovation standard deviation must be nonnegative, got {0}")]
    InvalidSd(f64),
    #[error("test level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("at least one method is required")]
    NoMethods,
    #[error("could not build worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Sign pattern of the heterogeneous slope `h_gt` (1-based `g`, `t`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HetPattern {
    /// `+a` when `g + t` is even, `-a` otherwise.
    #[default]
    Checkerboard,
    /// `+a` in even periods, `-a` in odd ones.
    TimeAlternating,
    None,
}

impl HetPattern {
    pub fn value(self, amplitude: f64, g: usize, t: usize) -> f64 {
        match self {
            HetPattern::Checkerboard => {
                if (g + t).is_multiple_of(2) {
                    amplitude
                } else {
                    -amplitude
                }
            }
            HetPattern::TimeAlternating => {
                if t.is_multiple_of(2) {
                    amplitude
                } else {
                    -amplitude
                }
            }
            HetPattern::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub clusters: usize,
    pub periods: usize,
    pub rho: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub w_alpha: f64,
    pub w_gamma: f64,
    pub w_eps: f64,
    pub het_amplitude: f64,
    pub het_pattern: HetPattern,
    pub replications: usize,
    pub master_seed: u64,
    pub methods: Vec<EstimatorChoice>,
    pub bandwidth: BandwidthRule,
    pub alpha_level: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            clusters: 50,
            periods: 100,
            rho: 0.25,
            beta0: 0.1,
            beta1: 0.1,
            w_alpha: 0.15,
            w_gamma: 0.20,
            w_eps: 0.15,
            het_amplitude: 0.1,
            het_pattern: HetPattern::Checkerboard,
            replications: 1000,
            master_seed: 20_240_607,
            methods: EstimatorChoice::standard_set(),
            bandwidth: BandwidthRule::default(),
            alpha_level: 0.05,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), SimulationError> {
        if self.clusters < 2 || self.periods < 2 {
            return Err(SimulationError::InvalidDimensions {
                clusters: self.clusters,
                periods: self.periods,
            });
        }
        if !(self.rho.abs() < 1.0) {
            return Err(SimulationError::InvalidRho(self.rho));
        }
        if self.replications == 0 {
            return Err(SimulationError::NoReplications);
        }
        for (name, value) in [
            ("beta0", self.beta0),
            ("beta1", self.beta1),
            ("w_alpha", self.w_alpha),
            ("w_gamma", self.w_gamma),
            ("w_eps", self.w_eps),
            ("het_amplitude", self.het_amplitude),
        ] {
            if !value.is_finite() {
                return Err(SimulationError::NonFinite { name, value });
            }
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(SimulationError::InvalidLevel(self.alpha_level));
        }
        if self.methods.is_empty() {
            return Err(SimulationError::NoMethods);
        }
        Ok(())
    }

    pub fn panel(&self) -> PanelIndex {
        PanelIndex::balanced(self.clusters, self.periods)
    }

    /// Two-sided normal critical value at `alpha_level`.
    pub fn critical_value(&self) -> f64 {
        if self.alpha_level == 0.05 {
            Z_975
        } else {
            NormalDist::new(0.0, 1.0)
                .expect("unit normal")
                .inverse_cdf(1.0 - self.alpha_level / 2.0)
        }
    }

    /// `h_gt` in panel order.
    pub fn heterogeneity(&self) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.clusters * self.periods);
        for g in 1..=self.clusters {
            for t in 1..=self.periods {
                h.push(self.het_pattern.value(self.het_amplitude, g, t));
            }
        }
        h
    }
}

/// Stream tags for the latent variables of one replication.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Tag {
    AlphaX = 0,
    GammaX = 1,
    EpsX = 2,
    AlphaU = 3,
    GammaU = 4,
    EpsU = 5,
    Component = 6,
}

/// Generator for `(seed, rep, tag)`.
fn stream(seed: u64, rep: u64, tag: Tag) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((rep << 8) | tag as u64);
    rng
}

fn normals(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Stationary AR(1) path: the first value is drawn from the stationary
/// distribution `N(0, sd^2 / (1 - rho^2))`.
pub fn ar1_path(periods: usize, rho: f64, innovation_sd: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SimulationError> {
    if !(rho.abs() < 1.0) {
        return Err(SimulationError::InvalidRho(rho));
    }
    if !(innovation_sd >= 0.0 && innovation_sd.is_finite()) {
        return Err(SimulationError::InvalidSd(innovation_sd));
    }
    let mut path = Vec::with_capacity(periods);
    if periods == 0 {
        return Ok(path);
    }
    let stationary_sd = innovation_sd / (1.0 - rho * rho).sqrt();
    let z: f64 = StandardNormal.sample(rng);
    path.push(stationary_sd * z);
    for t in 1..periods {
        let z: f64 = StandardNormal.sample(rng);
        path.push(rho * path[t - 1] + innovation_sd * z);
    }
    Ok(path)
}

/// `w_a a_g + w_g c_t + w_e e_gt` in g-major order.
fn component_draw(c: &SimulationConfig, rep: u64, tags: [Tag; 3]) -> Result<Vec<f64>, SimulationError> {
    let alpha = normals(&mut stream(c.master_seed, rep, tags[0]), c.clusters);
    let gamma = ar1_path(c.periods, c.rho, 1.0, &mut stream(c.master_seed, rep, tags[1]))?;
    let eps = normals(&mut stream(c.master_seed, rep, tags[2]), c.clusters * c.periods);
    let mut out = Vec::with_capacity(eps.len());
    for g in 0..c.clusters {
        for t in 0..c.periods {
            out.push(c.w_alpha * alpha[g] + c.w_gamma * gamma[t] + c.w_eps * eps[g * c.periods + t]);
        }
    }
    Ok(out)
}

/// One simulated panel with regressors `[intercept, x]`.
pub fn simulate_panel(c: &SimulationConfig, rep: u64) -> Result<Design, SimulationError> {
    c.validate()?;
    let x = component_draw(c, rep, [Tag::AlphaX, Tag::GammaX, Tag::EpsX])?;
    let u = component_draw(c, rep, [Tag::AlphaU, Tag::GammaU, Tag::EpsU])?;
    let h = c.heterogeneity();
    let y: Vec<f64> = (0..x.len())
        .map(|i| c.beta0 + (c.beta1 + h[i]) * x[i] + u[i])
        .collect();
    let d = Design::new(c.panel(), y, x.into_iter().map(|v| vec![v]).collect(), vec!["x".to_string()])?;
    Ok(d.with_intercept()?)
}

/// Per-coordinate covariance of `X` (and of `U`) between two cells.
fn component_cov(c: &SimulationConfig, p: &PanelIndex, i: usize, j: usize) -> f64 {
    let gap = p.period(i).abs_diff(p.period(j));
    let mut k = c.w_gamma * c.w_gamma * c.rho.powi(gap as i32) / (1.0 - c.rho * c.rho);
    if p.cluster(i) == p.cluster(j) {
        k += c.w_alpha * c.w_alpha;
    }
    if i == j {
        k += c.w_eps * c.w_eps;
    }
    k
}

/// `Var(sum_i X_i (h_i X_i + U_i))`, the slope score at the true
/// coefficients. For jointly Gaussian, independent `X` and `U` with common
/// covariance `k` this is `sum_{i,j} k_ij^2 (1 + 2 h_i h_j)`.
pub fn oracle_score_variance(c: &SimulationConfig) -> f64 {
    let p = c.panel();
    let h = c.heterogeneity();
    let mut acc = CompensatedSum::new();
    for i in 0..p.n() {
        for j in 0..p.n() {
            let k = component_cov(c, &p, i, j);
            acc.add(k * k * (1.0 + 2.0 * h[i] * h[j]));
        }
    }
    acc.value()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum MethodOutcome {
    Ok {
        reject: bool,
        beta_variance: f64,
        score_variance: f64,
    },
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
struct RepOutcome {
    beta1: f64,
    bandwidth: Option<usize>,
    methods: Vec<MethodOutcome>,
}

fn run_replication(c: &SimulationConfig, rep: u64, crit: f64) -> Result<RepOutcome, SimulationError> {
    let design = simulate_panel(c, rep)?;
    let fit = ols_fit(&design)?;
    let slope = 1;
    // one bandwidth per replication, shared by all kernel methods
    let kernel: Option<KernelSpec> = match c.methods.iter().find(|m| m.method.uses_kernel()) {
        Some(&m) => resolve_kernel(design.panel(), &fit.scores, m, c.bandwidth)?,
        None => None,
    };
    let rule = kernel.map_or(c.bandwidth, BandwidthRule::Fixed);
    let methods = c
        .methods
        .iter()
        .map(|&choice| match sandwich(&fit, choice, rule) {
            Ok(inf) => {
                let coef = &inf.coefficients[slope];
                if coef.se > 0.0 {
                    let meat = crate::estimators::estimate(design.panel(), &fit.scores, choice, kernel.as_ref());
                    MethodOutcome::Ok {
                        reject: ((coef.estimate - c.beta1) / coef.se).abs() > crit,
                        beta_variance: coef.se * coef.se,
                        score_variance: meat.map_or(f64::NAN, |m| m.matrix.get(slope, slope)),
                    }
                } else {
                    MethodOutcome::Failed
                }
            }
            Err(_) => MethodOutcome::Failed,
        })
        .collect();
    Ok(RepOutcome {
        beta1: fit.beta_hat[slope],
        bandwidth: kernel.map(|k| k.bandwidth),
        methods,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: EstimatorChoice,
    pub rejections: usize,
    pub failures: usize,
    /// `rejections / R`.
    pub rate: f64,
    /// `sqrt(rate (1 - rate) / R)`.
    pub mc_se: f64,
    /// Mean estimated `Var(beta_1)` over successful replications.
    pub mean_beta_variance: f64,
    /// Mean estimated variance of the slope score sum.
    pub mean_score_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub config: SimulationConfig,
    pub replications: usize,
    pub methods: Vec<MethodSummary>,
    pub mean_bandwidth: Option<f64>,
    pub beta1_mean: f64,
    /// Monte Carlo variance of the slope estimate.
    pub beta1_variance: f64,
    /// Exact variance of the slope score sum; omitted for large panels.
    pub oracle_score_variance: Option<f64>,
}

impl RejectionReport {
    pub fn method(&self, choice: EstimatorChoice) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == choice)
    }
}

/// Largest panel for which the quadratic oracle score variance is computed.
pub const ORACLE_SCORE_LIMIT: usize = 20_000;

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, SimulationError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SimulationError::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

/// Runs all replications on `threads` workers (`0` for the rayon default).
pub fn run_monte_carlo(c: &SimulationConfig, threads: usize) -> Result<RejectionReport, SimulationError> {
    c.validate()?;
    let crit = c.critical_value();
    let outcomes: Vec<Result<RepOutcome, SimulationError>> = with_pool(threads, || {
        (0..c.replications as u64)
            .into_par_iter()
            .map(|rep| run_replication(c, rep, crit))
            .collect()
    })?;
    let outcomes: Vec<RepOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;

    let r = c.replications as f64;
    let methods = c
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let mut rejections = 0;
            let mut failures = 0;
            let mut beta_var = CompensatedSum::new();
            let mut score_var = CompensatedSum::new();
            for o in &outcomes {
                match o.methods[k] {
                    MethodOutcome::Ok {
                        reject,
                        beta_variance,
                        score_variance,
                    } => {
                        rejections += usize::from(reject);
                        beta_var.add(beta_variance);
                        score_var.add(score_variance);
                    }
                    MethodOutcome::Failed => failures += 1,
                }
            }
            let ok = (c.replications - failures).max(1) as f64;
            let rate = rejections as f64 / r;
            MethodSummary {
                method,
                rejections,
                failures,
                rate,
                mc_se: (rate * (1.0 - rate) / r).sqrt(),
                mean_beta_variance: beta_var.value() / ok,
                mean_score_variance: score_var.value() / ok,
            }
        })
        .collect();

    let betas: Vec<f64> = outcomes.iter().map(|o| o.beta1).collect();
    let beta1_mean = compensated_sum(betas.iter().copied()) / r;
    let beta1_variance = if betas.len() > 1 {
        compensated_sum(betas.iter().map(|b| (b - beta1_mean).powi(2))) / (r - 1.0)
    } else {
        0.0
    };
    let bandwidths: Vec<f64> = outcomes.iter().filter_map(|o| o.bandwidth.map(|m| m as f64)).collect();
    let mean_bandwidth = (!bandwidths.is_empty()).then(|| compensated_sum(bandwidths.iter().copied()) / bandwidths.len() as f64);
    let n = c.clusters * c.periods;
    Ok(RejectionReport {
        config: c.clone(),
        replications: c.replications,
        methods,
        mean_bandwidth,
        beta1_mean,
        beta1_variance,
        oracle_score_variance: (n <= ORACLE_SCORE_LIMIT).then(|| oracle_score_variance(c)),
    })
}

/// One draw of `Y = mu + alpha_g + gamma_t + eps` from a component DGP,
/// coordinates independent.
pub fn draw_component(d: &ComponentDgp, rng: &mut ChaCha8Rng) -> Result<ScoreMatrix, SimulationError> {
    let p = d.panel();
    let v = d.dim();
    let sd = |s2: f64| s2.sqrt();
    let mut data = d.means().rows().flatten().copied().collect::<Vec<f64>>();
    let eps = Normal::new(0.0, sd(d.sigma2_eps)).expect("finite sd");
    for c in 0..v {
        let alpha: Vec<f64> = (0..p.num_clusters())
            .map(|_| { let z: f64 = StandardNormal.sample(rng); sd(d.sigma2_alpha) * z })
            .collect();
        let gamma = ar1_path(p.num_periods(), d.rho, sd(d.sigma2_gamma_innov), rng)?;
        for i in 0..p.n() {
            data[i * v + c] += alpha[p.cluster(i)] + gamma[p.period(i)] + eps.sample(rng);
        }
    }
    ScoreMatrix::new(v, data).map_err(|e| SimulationError::Oracle(e.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub oracle: f64,
    pub empirical: f64,
    /// Standard error of the sample variance, `sqrt((m4 - s^4) / N)`.
    pub standard_error: f64,
    pub draws: usize,
}

impl VarianceCheck {
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.oracle) / self.standard_error
    }
}

/// Sample variance of the first coordinate of `sum_i Y_i` over `draws`
/// independent draws, against the oracle value.
pub fn empirical_sum_variance(
    d: &ComponentDgp,
    draws: usize,
    seed: u64,
    threads: usize,
) -> Result<VarianceCheck, SimulationError> {
    let sums: Vec<Result<f64, SimulationError>> = with_pool(threads, || {
        (0..draws as u64)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream(seed, rep, Tag::Component);
                let y = draw_component(d, &mut rng)?;
                Ok(y.total()[0])
            })
            .collect()
    })?;
    let sums: Vec<f64> = sums.into_iter().collect::<Result<_, _>>()?;
    let n = sums.len() as f64;
    let mean = compensated_sum(sums.iter().copied()) / n;
    let m2 = compensated_sum(sums.iter().map(|s| (s - mean).powi(2))) / n;
    let m4 = compensated_sum(sums.iter().map(|s| (s - mean).powi(4))) / n;
    Ok(VarianceCheck {
        oracle: v_true(d, EstimandStrategy::Factorized)?.get(0, 0),
        empirical: m2 * n / (n - 1.0),
        standard_error: ((m4 - m2 * m2) / n).sqrt(),
        draws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub ks_distance: f64,
    pub sigma_n: f64,
    pub replications: usize,
}

/// Kolmogorov-Smirnov distance of `values` from the standard normal.
pub fn ks_distance(values: &[f64]) -> f64 {
    let mut z = values.to_vec();
    z.sort_by(f64::total_cmp);
    let phi = NormalDist::new(0.0, 1.0).expect("unit normal");
    let r = z.len() as f64;
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = phi.cdf(v);
            ((i + 1) as f64 / r - f).max(f - i as f64 / r)
        })
        .fold(0.0, f64::max)
}

/// KS distance of `S_n / sigma_n` for the config's component scores
/// `w_a a_g + w_g c_t + w_e e_gt` (means zero), `sigma_n` from the oracle.
pub fn clt_check(c: &SimulationConfig, replications: usize, threads: usize) -> Result<CltReport, SimulationError> {
    c.validate()?;
    let p = c.panel();
    let d = ComponentDgp::new(
        p.clone(),
        ScoreMatrix::new(1, vec![0.0; p.n()]).expect("zeros"),
        c.w_alpha * c.w_alpha,
        c.w_gamma * c.w_gamma,
        c.rho,
        c.w_eps * c.w_eps,
    )?;
    let sigma_n = v_true(&d, EstimandStrategy::Factorized)?.get(0, 0).sqrt();
    let sums: Vec<Result<f64, SimulationError>> = with_pool(threads, || {
        (0..replications as u64)
            .into_par_iter()
            .map(|rep| {
                let x = component_draw(c, rep, [Tag::AlphaX, Tag::GammaX, Tag::EpsX])?;
                Ok(compensated_sum(x) / sigma_n)
            })
            .collect()
    })?;
    let z: Vec<f64> = sums.into_iter().collect::<Result<_, _>>()?;
    Ok(CltReport {
        ks_distance: ks_distance(&z),
        sigma_n,
        replications,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;
    use approx::assert_relative_eq;

    fn small() -> SimulationConfig {
        SimulationConfig {
            clusters: 6,
            periods: 8,
            replications: 20,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn ar1_stationary_moments() {
        let mut rng = stream(1, 0, Tag::GammaX);
        let path = ar1_path(1_000_000, 0.5, 1.0, &mut rng).unwrap();
        let n = path.len() as f64;
        let mean = path.iter().sum::<f64>() / n;
        let var = path.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!((var / (4.0 / 3.0) - 1.0).abs() < 0.01, "var {var}");
        let lag: f64 = path.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / n;
        assert!((lag / var - 0.5).abs() < 0.01);
    }

    #[test]
    fn ar1_zero_rho_is_iid() {
        let mut a = stream(3, 0, Tag::GammaX);
        let mut b = stream(3, 0, Tag::GammaX);
        let path = ar1_path(50, 0.0, 2.0, &mut a).unwrap();
        let direct: Vec<f64> = normals(&mut b, 50).into_iter().map(|z| 2.0 * z).collect();
        assert_eq!(path, direct);
        assert_eq!(ar1_path(5, 1.0, 1.0, &mut a), Err(SimulationError::InvalidRho(1.0)));
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a = normals(&mut stream(9, 4, Tag::EpsX), 4);
        assert_eq!(a, normals(&mut stream(9, 4, Tag::EpsX), 4));
        assert_ne!(a, normals(&mut stream(9, 4, Tag::EpsU), 4));
        assert_ne!(a, normals(&mut stream(9, 5, Tag::EpsX), 4));
    }

    #[test]
    fn het_patterns() {
        assert_eq!(HetPattern::Checkerboard.value(0.1, 1, 1), 0.1);
        assert_eq!(HetPattern::Checkerboard.value(0.1, 1, 2), -0.1);
        assert_eq!(HetPattern::TimeAlternating.value(0.1, 3, 2), 0.1);
        assert_eq!(HetPattern::None.value(0.1, 3, 2), 0.0);
        let c = SimulationConfig::default();
        assert_eq!(c.heterogeneity().iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn component_shutdown_leaves_idiosyncratic_noise() {
        let c = SimulationConfig {
            w_alpha: 0.0,
            w_gamma: 0.0,
            het_pattern: HetPattern::None,
            ..small()
        };
        let d = simulate_panel(&c, 3).unwrap();
        let eps = normals(&mut stream(c.master_seed, 3, Tag::EpsU), 48);
        for (i, (y, x)) in d.y().iter().zip(d.x()).enumerate() {
            assert_relative_eq!(y - c.beta0 - c.beta1 * x[1], c.w_eps * eps[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn regressor_moments() {
        let c = SimulationConfig {
            clusters: 1000,
            periods: 1000,
            ..SimulationConfig::default()
        };
        let x = component_draw(&c, 0, [Tag::AlphaX, Tag::GammaX, Tag::EpsX]).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 0.15f64.powi(2) + 0.2f64.powi(2) / (1.0 - 0.0625) + 0.15f64.powi(2);
        // one draw of a and c per panel: allow for their sampling error
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }

    #[test]
    fn validation() {
        assert_eq!(
            SimulationConfig { rho: 1.0, ..small() }.validate(),
            Err(SimulationError::InvalidRho(1.0))
        );
        assert_eq!(
            SimulationConfig { replications: 0, ..small() }.validate(),
            Err(SimulationError::NoReplications)
        );
        assert_eq!(
            SimulationConfig { alpha_level: 1.0, ..small() }.validate(),
            Err(SimulationError::InvalidLevel(1.0))
        );
        assert!(matches!(
            SimulationConfig { clusters: 1, ..small() }.validate(),
            Err(SimulationError::InvalidDimensions { .. })
        ));
    }

    #[test]
    fn single_replication_gives_degenerate_rates() {
        let r = run_monte_carlo(&SimulationConfig { replications: 1, ..small() }, 1).unwrap();
        for m in &r.methods {
            assert!(m.rate == 0.0 || m.rate == 1.0);
            assert_eq!(m.mc_se, 0.0);
        }
    }

    #[test]
    fn counts_are_consistent() {
        let r = run_monte_carlo(&small(), 2).unwrap();
        for m in &r.methods {
            assert_eq!(m.rate * r.replications as f64, m.rejections as f64);
            assert!(m.rejections + m.failures <= r.replications);
            assert_relative_eq!(m.mc_se, (m.rate * (1.0 - m.rate) / 20.0).sqrt());
        }
        assert!(r.mean_bandwidth.unwrap() >= 1.0);
        assert!(r.oracle_score_variance.unwrap() > 0.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let c = small();
        assert_eq!(run_monte_carlo(&c, 1).unwrap(), run_monte_carlo(&c, 4).unwrap());
    }

    #[test]
    fn hm_variance_exceeds_ehw() {
        let c = SimulationConfig {
            methods: vec![EstimatorChoice::new(Method::Ehw), EstimatorChoice::new(Method::Hm)],
            ..small()
        };
        let r = run_monte_carlo(&c, 2).unwrap();
        assert!(r.methods[1].mean_beta_variance > r.methods[0].mean_beta_variance);
    }

    #[test]
    fn oracle_score_variance_without_dependence() {
        // iid X, U with variance w_e^2: sum_i w_e^4 (1 + 2 h_i^2)
        let c = SimulationConfig {
            w_alpha: 0.0,
            w_gamma: 0.0,
            w_eps: 1.0,
            ..small()
        };
        assert_relative_eq!(oracle_score_variance(&c), 48.0 * (1.0 + 2.0 * 0.01), max_relative = 1e-12);
    }

    #[test]
    fn ks_distance_examples() {
        assert_relative_eq!(ks_distance(&[0.0]), 0.5);
        let grid: Vec<f64> = (1..1000)
            .map(|i| {
                NormalDist::new(0.0, 1.0).unwrap().inverse_cdf(i as f64 / 1000.0)
            })
            .collect();
        assert!(ks_distance(&grid) < 0.0011);
    }

    #[test]
    fn clt_on_iid_scores() {
        let c = SimulationConfig {
            clusters: 4,
            periods: 5,
            w_alpha: 0.0,
            w_gamma: 0.0,
            w_eps: 1.0,
            ..SimulationConfig::default()
        };
        let r = clt_check(&c, 2000, 0).unwrap();
        assert!(r.ks_distance < 0.04, "{}", r.ks_distance);
        assert_relative_eq!(r.sigma_n, 20f64.sqrt(), max_relative = 1e-12);
    }
}
