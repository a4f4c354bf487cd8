//! Finite-sample values of the regularity expressions behind the central
//! limit theorem and the variance-estimator convergence results.
//!
//! Dependence is modeled through coefficients `theta_s` at panel distance
//! `s`. With moment order `p > 4`, scale `lambda` and `m`, `M` as given:
//!
//! ```text
//! clt_a(k)   n / lambda^(1+k/2) * sum_{s=0}^{m} c(s,m;k) theta_s^(1-(2+k)/p)      k = 1, 2
//! clt_b      n^2 theta_m^(1-1/p) / lambda^(1/2)
//! con        n / lambda^2 * sum_{s=0}^{M} c(s,M;2) theta_s^(1-4/p)
//! adj_a      n / lambda * sum_{m=1}^{M} |w(m) - 1| delta(m;1) theta_m^(1-2/p)
//! adj_b      1 / lambda * sum_{m>=1} sum_{t,g} |N_{t,g}| |N_{t+m,g}| theta_m^(1-2/p)
//! adj_c      1 / lambda * sum_{m=M+1}^{T-1} sum_t |N_t| |N_{t+m}| theta_m^(1-2/p)
//! ```
//!
//! `c(s,m;k)` vanishes for `s > m`, so the sums over `s` stop at the window
//! end. The arbitrary constants in front of the last three are set to 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::KernelSpec;
use crate::numerics::{compensated_sum, NumericsError};
use crate::oracle::{v_true, ComponentDgp, EstimandStrategy, OracleError};
use crate::panel::{PanelError, PanelIndex};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("moment order p must exceed 4, got {0}")]
    InvalidMomentOrder(f64),
    #[error("dependence decay must lie in [0, 1), got {0}")]
    InvalidDecay(f64),
    #[error("scale lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("bandwidth {bandwidth} must be below the number of periods {periods}")]
    BandwidthTooLarge { bandwidth: usize, periods: usize },
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Dependence coefficients `theta_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DependenceProfile {
    /// `theta_s = 0` for every `s`.
    Independent,
    /// `theta_s = rho^s` (so `theta_0 = 1`).
    Geometric { rho: f64 },
}

impl DependenceProfile {
    /// `Independent` for `rho = 0`, geometric otherwise.
    pub fn from_decay(rho: f64) -> Result<Self, DiagnosticsError> {
        if !(0.0..1.0).contains(&rho) {
            return Err(DiagnosticsError::InvalidDecay(rho));
        }
        Ok(if rho == 0.0 {
            DependenceProfile::Independent
        } else {
            DependenceProfile::Geometric { rho }
        })
    }

    pub fn theta(&self, s: usize) -> f64 {
        match *self {
            DependenceProfile::Independent => 0.0,
            DependenceProfile::Geometric { rho } => rho.powi(s as i32),
        }
    }

    fn powered(&self, s: usize, exponent: f64) -> f64 {
        let th = self.theta(s);
        if th == 0.0 {
            0.0
        } else {
            th.powf(exponent)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionInputs {
    pub profile: DependenceProfile,
    /// Moment order.
    pub p: f64,
    pub lambda: f64,
    /// Window end for the CLT expressions.
    pub m: usize,
    /// Kernel for the variance expressions.
    pub kernel: KernelSpec,
    pub alpha_grid: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionValues {
    pub clt_a_k1: f64,
    pub clt_a_k2: f64,
    pub clt_b: f64,
    pub con: f64,
    pub adj_a: f64,
    pub adj_b: f64,
    pub adj_c: f64,
}

/// Default scale: smallest eigenvalue of the exact variance of the sum under
/// unit-variance cluster, time and idiosyncratic components with AR
/// coefficient `rho` on `panel`.
pub fn default_lambda(panel: &PanelIndex, rho: f64) -> Result<f64, DiagnosticsError> {
    let d = ComponentDgp::unit(panel.clone(), rho)?;
    Ok(crate::numerics::sym_eigen_min(&v_true(&d, EstimandStrategy::Factorized)?)?)
}

pub fn assumption_values(p: &PanelIndex, inputs: &AssumptionInputs) -> Result<AssumptionValues, DiagnosticsError> {
    let AssumptionInputs {
        profile,
        p: order,
        lambda,
        m,
        kernel,
        alpha_grid,
    } = inputs;
    if !(*order > 4.0 && order.is_finite()) {
        return Err(DiagnosticsError::InvalidMomentOrder(*order));
    }
    if !(*lambda > 0.0 && lambda.is_finite()) {
        return Err(DiagnosticsError::InvalidLambda(*lambda));
    }
    let periods = p.num_periods();
    if kernel.bandwidth > 0 && kernel.bandwidth >= periods {
        return Err(DiagnosticsError::BandwidthTooLarge {
            bandwidth: kernel.bandwidth,
            periods,
        });
    }
    let n = p.n() as f64;
    let big_m = kernel.bandwidth;

    let clt_a = |k: f64| -> Result<f64, DiagnosticsError> {
        let e = 1.0 - (2.0 + k) / order;
        let mut terms = Vec::with_capacity(m + 1);
        for s in 0..=*m {
            let th = profile.powered(s, e);
            if th != 0.0 {
                terms.push(p.neighborhood_cost(s, *m, k, alpha_grid)? * th);
            }
        }
        Ok(n / lambda.powf(1.0 + k / 2.0) * compensated_sum(terms))
    };
    let clt_a_k1 = clt_a(1.0)?;
    let clt_a_k2 = clt_a(2.0)?;
    let clt_b = n * n * profile.powered(*m, 1.0 - 1.0 / order) / lambda.sqrt();

    let mut con_terms = Vec::with_capacity(big_m + 1);
    for s in 0..=big_m {
        let th = profile.powered(s, 1.0 - 4.0 / order);
        if th != 0.0 {
            con_terms.push(p.neighborhood_cost(s, big_m, 2.0, alpha_grid)? * th);
        }
    }
    let con = n / (lambda * lambda) * compensated_sum(con_terms);

    let e2 = 1.0 - 2.0 / order;
    let mut adj_a_terms = Vec::with_capacity(big_m);
    for lag in 1..=big_m {
        let th = profile.powered(lag, e2);
        if th != 0.0 {
            let w = kernel.weight(lag).expect("lag >= 1");
            adj_a_terms.push((w - 1.0).abs() * p.delta_boundary(lag, 1.0)? * th);
        }
    }
    let adj_a = n / lambda * compensated_sum(adj_a_terms);

    let time_n: Vec<f64> = p.periods().map(|o| o.len() as f64).collect();
    let cell = |t: usize, g: usize| p.cell(t, g).len() as f64;
    let mut adj_b_terms = Vec::new();
    let mut adj_c_terms = Vec::new();
    for lag in 1..periods {
        let th = profile.powered(lag, e2);
        if th == 0.0 {
            continue;
        }
        for t in 0..periods - lag {
            for g in 0..p.num_clusters() {
                let prod = cell(t, g) * cell(t + lag, g);
                if prod != 0.0 {
                    adj_b_terms.push(prod * th);
                }
            }
            if lag > big_m {
                adj_c_terms.push(time_n[t] * time_n[t + lag] * th);
            }
        }
    }
    Ok(AssumptionValues {
        clt_a_k1,
        clt_a_k2,
        clt_b,
        con,
        adj_a,
        adj_b: compensated_sum(adj_b_terms) / lambda,
        adj_c: compensated_sum(adj_c_terms) / lambda,
    })
}
