//! Pair-sum forms of the estimators.
//!
//! Every estimator is `sum_{i,j} w(i, j) Y_i Y_j'` for a pair weight that
//! depends only on cluster equality and the period gap:
//!
//! ```text
//! EHW   1{i = j}
//! CRg   1{g_i = g_j}
//! CRt   1{t_i = t_j}
//! CGM   1{g=} + 1{t=} - 1{g=, t=}
//! CHS   CGM + w(|dt|) 1{1 <= |dt| <= M} (1 - 1{g=})      [adjusted]
//! HM    1{g=} + 1{t=} + w(|dt|) 1{1 <= |dt| <= M} + 2 (sum_m w(m)) 1{t=}
//! ```
//!
//! The quadratic loop is slow and only meant for validation.

use super::{EstimatorChoice, EstimatorError, Method, ScoreMatrix};
use crate::kernel::KernelSpec;
use crate::numerics::{OuterAccumulator, SymMatrix};
use crate::panel::PanelIndex;

/// Largest panel accepted by [`brute_force`].
pub const BRUTE_FORCE_LIMIT: usize = 10_000;

/// Pair weight of observations `i` and `j` under `choice`.
pub fn pair_weight(
    p: &PanelIndex,
    i: usize,
    j: usize,
    choice: EstimatorChoice,
    kernel: Option<&KernelSpec>,
) -> f64 {
    let same_g = p.cluster(i) == p.cluster(j);
    let gap = p.period(i).abs_diff(p.period(j));
    let same_t = gap == 0;
    let lag_w = match kernel {
        Some(k) if gap >= 1 && gap <= k.bandwidth => k.weight_unchecked(gap),
        _ => 0.0,
    };
    let ind = |b: bool| if b { 1.0 } else { 0.0 };
    match choice.method {
        Method::Ehw => ind(i == j),
        Method::CrCluster => ind(same_g),
        Method::CrTime => ind(same_t),
        Method::Cgm => ind(same_g) + ind(same_t) - ind(same_g && same_t),
        Method::Chs => {
            let base = ind(same_g) + ind(same_t) - ind(same_g && same_t) + lag_w;
            if !choice.chs_drop_adjustment && same_g {
                base - lag_w
            } else {
                base
            }
        }
        Method::Hm => {
            let own = if same_t {
                2.0 * kernel.map_or(0.0, |k| k.weights().iter().sum())
            } else {
                0.0
            };
            ind(same_g) + ind(same_t) + lag_w + own
        }
    }
}

/// `sum_{i,j} w(i, j) Y_i Y_j'` by direct double loop.
pub fn brute_force(
    p: &PanelIndex,
    s: &ScoreMatrix,
    choice: EstimatorChoice,
    kernel: Option<&KernelSpec>,
) -> Result<SymMatrix, EstimatorError> {
    if p.n() != s.n() {
        return Err(EstimatorError::DimensionMismatch {
            panel: p.n(),
            scores: s.n(),
        });
    }
    if p.n() > BRUTE_FORCE_LIMIT {
        return Err(EstimatorError::SizeGuard {
            n: p.n(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if choice.method.uses_kernel() && kernel.is_none() {
        return Err(EstimatorError::KernelRequired(choice.method));
    }
    let mut acc = OuterAccumulator::new(s.dim());
    for i in 0..p.n() {
        for j in 0..p.n() {
            let w = pair_weight(p, i, j, choice, kernel);
            if w != 0.0 {
                acc.add_outer(s.row(i), s.row(j), w);
            }
        }
    }
    Ok(acc.finish())
}
