//! OLS on panel data with sandwich inference.
//!
//! The coefficient variance is `B^{-1} V B^{-1}` with bread `B = sum X_i X_i'`
//! and meat `V` any of the score-sum estimators applied to `X_i u_i`.
//! Inference uses normal critical values.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::estimators::{self, time_aggregate, EstimatorChoice, EstimatorError, ScoreMatrix};
use crate::kernel::{andrews_bandwidth, KernelError, KernelKind, KernelSpec};
use crate::numerics::{
    compensated_sum, sandwich_product, solve_spd, sym_eigen_min, Matrix, NumericsError, OuterAccumulator,
    SymMatrix, VectorAccumulator,
};
use crate::panel::PanelIndex;

/// Two-sided 5% normal critical value.
pub const Z_975: f64 = 1.959964;
/// Convergence threshold of iterative two-way demeaning.
pub const DEMEAN_TOLERANCE: f64 = 1e-10;
pub const DEMEAN_MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegressionError {
    #[error("design contains non-finite values")]
    NonFinite,
    #[error("design has {found} rows but the panel has {expected} observations")]
    RowMismatch { expected: usize, found: usize },
    #[error("regressor rows must have {expected} columns, row {row} has {found}")]
    RaggedRegressors {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("need more observations ({n}) than regressors ({v})")]
    TooFewObservations { n: usize, v: usize },
    #[error("within transformation needs at least 2 clusters and 2 periods")]
    TooFewGroups,
    #[error("two-way demeaning did not converge after {iterations} iterations (last change {delta:e})")]
    NoConvergence { iterations: usize, delta: f64 },
    #[error("X'X is singular (smallest eigenvalue {min_eigenvalue:e})")]
    SingularBread { min_eigenvalue: f64 },
    #[error("variance of coefficient '{name}' is negative (smallest eigenvalue of the covariance {min_eigenvalue:e})")]
    NegativeVariance { name: String, min_eigenvalue: f64 },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Outcome and regressors on a panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    panel: PanelIndex,
    y: Vec<f64>,
    x: Vec<Vec<f64>>,
    names: Vec<String>,
}

impl Design {
    pub fn new(panel: PanelIndex, y: Vec<f64>, x: Vec<Vec<f64>>, names: Vec<String>) -> Result<Self, RegressionError> {
        let n = panel.n();
        if y.len() != n {
            return Err(RegressionError::RowMismatch { expected: n, found: y.len() });
        }
        if x.len() != n {
            return Err(RegressionError::RowMismatch { expected: n, found: x.len() });
        }
        let v = names.len();
        for (row, r) in x.iter().enumerate() {
            if r.len() != v {
                return Err(RegressionError::RaggedRegressors { row, expected: v, found: r.len() });
            }
        }
        if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite);
        }
        if n <= v {
            return Err(RegressionError::TooFewObservations { n, v });
        }
        Ok(Self { panel, y, x, names })
    }

    /// Prepends a constant column named `intercept`.
    pub fn with_intercept(mut self) -> Result<Self, RegressionError> {
        for r in &mut self.x {
            r.insert(0, 1.0);
        }
        self.names.insert(0, "intercept".to_string());
        let n = self.panel.n();
        if n <= self.names.len() {
            return Err(RegressionError::TooFewObservations { n, v: self.names.len() });
        }
        Ok(self)
    }

    pub fn panel(&self) -> &PanelIndex {
        &self.panel
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_regressors(&self) -> usize {
        self.names.len()
    }
}

/// Removes additive cluster and period effects from `y` and every column
/// of `X`.
///
/// Balanced panels use `x - xbar_g - xbar_t + xbar`; otherwise cluster and
/// period means are subtracted alternately until the largest change falls
/// below `1e-10`.
pub fn within_transform(d: &Design) -> Result<Design, RegressionError> {
    let p = &d.panel;
    if p.num_clusters() < 2 || p.num_periods() < 2 {
        return Err(RegressionError::TooFewGroups);
    }
    let balanced = p.is_balanced();
    let transform = |col: Vec<f64>| -> Result<Vec<f64>, RegressionError> {
        if balanced {
            Ok(demean_balanced(p, &col))
        } else {
            demean_iterative(p, col)
        }
    };
    let y = transform(d.y.clone())?;
    let mut x = vec![Vec::with_capacity(d.names.len()); p.n()];
    for c in 0..d.names.len() {
        let col = transform(d.x.iter().map(|r| r[c]).collect())?;
        for (row, v) in x.iter_mut().zip(col) {
            row.push(v);
        }
    }
    Ok(Design {
        panel: p.clone(),
        y,
        x,
        names: d.names.clone(),
    })
}

fn bucket_means<'a>(values: &[f64], buckets: impl Iterator<Item = &'a [usize]>) -> Vec<f64> {
    buckets
        .map(|obs| {
            if obs.is_empty() {
                0.0
            } else {
                compensated_sum(obs.iter().map(|&i| values[i])) / obs.len() as f64
            }
        })
        .collect()
}

fn demean_balanced(p: &PanelIndex, col: &[f64]) -> Vec<f64> {
    let gm = bucket_means(col, p.clusters());
    let tm = bucket_means(col, p.periods());
    let all = compensated_sum(col.iter().copied()) / col.len() as f64;
    (0..p.n())
        .map(|i| col[i] - gm[p.cluster(i)] - tm[p.period(i)] + all)
        .collect()
}

fn demean_iterative(p: &PanelIndex, mut col: Vec<f64>) -> Result<Vec<f64>, RegressionError> {
    let mut delta = f64::INFINITY;
    for _ in 0..DEMEAN_MAX_ITER {
        delta = 0.0;
        let gm = bucket_means(&col, p.clusters());
        for (i, v) in col.iter_mut().enumerate() {
            let m = gm[p.cluster(i)];
            *v -= m;
            delta = delta.max(m.abs());
        }
        let tm = bucket_means(&col, p.periods());
        for (i, v) in col.iter_mut().enumerate() {
            let m = tm[p.period(i)];
            *v -= m;
            delta = delta.max(m.abs());
        }
        if delta < DEMEAN_TOLERANCE {
            return Ok(col);
        }
    }
    Err(RegressionError::NoConvergence {
        iterations: DEMEAN_MAX_ITER,
        delta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `sum X_i X_i'`
    pub bread: SymMatrix,
    /// Rows `X_i u_i`.
    pub scores: ScoreMatrix,
    pub names: Vec<String>,
    pub panel: PanelIndex,
}

pub fn ols_fit(d: &Design) -> Result<FitResult, RegressionError> {
    let v = d.num_regressors();
    let mut xx = OuterAccumulator::new(v);
    let mut xy = VectorAccumulator::new(v);
    for (row, &y) in d.x.iter().zip(&d.y) {
        xx.add_outer(row, row, 1.0);
        let scaled: Vec<f64> = row.iter().map(|x| x * y).collect();
        xy.add(&scaled);
    }
    let bread = xx.finish();
    let beta_hat = match solve_spd(&bread, &Matrix::column(&xy.finish())) {
        Ok(b) => b.col(0),
        Err(NumericsError::NotPositiveDefinite { min_eigenvalue }) => {
            return Err(RegressionError::SingularBread { min_eigenvalue })
        }
        Err(e) => return Err(e.into()),
    };
    let residuals: Vec<f64> = d
        .x
        .iter()
        .zip(&d.y)
        .map(|(row, y)| y - compensated_sum(row.iter().zip(&beta_hat).map(|(x, b)| x * b)))
        .collect();
    let scores: Vec<f64> = d
        .x
        .iter()
        .zip(&residuals)
        .flat_map(|(row, u)| row.iter().map(move |x| x * u))
        .collect();
    Ok(FitResult {
        beta_hat,
        residuals,
        bread,
        scores: ScoreMatrix::new(v, scores)?,
        names: d.names.clone(),
        panel: d.panel.clone(),
    })
}

/// How kernel methods pick their bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Fixed(KernelSpec),
    /// AR(1) plug-in on the period aggregates of the scores.
    Auto(KernelKind),
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Auto(KernelKind::Triangular)
    }
}

/// Resolves `rule` against the scores; `None` when `choice` has no kernel.
pub fn resolve_kernel(
    panel: &PanelIndex,
    scores: &ScoreMatrix,
    choice: EstimatorChoice,
    rule: BandwidthRule,
) -> Result<Option<KernelSpec>, RegressionError> {
    if !choice.method.uses_kernel() {
        return Ok(None);
    }
    Ok(Some(match rule {
        BandwidthRule::Fixed(k) => k,
        BandwidthRule::Auto(kind) => {
            let y = time_aggregate(panel, scores)?;
            KernelSpec::new(kind, andrews_bandwidth(&y.y)?.bandwidth)
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInference {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    /// Absent when the standard error is zero.
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl CoefficientInference {
    /// Two-sided 5% test of `estimate = null`; `None` when `se = 0`.
    pub fn rejects(&self, null: f64) -> Option<bool> {
        if self.se > 0.0 {
            Some(((self.estimate - null) / self.se).abs() > Z_975)
        } else {
            None
        }
    }

    pub fn degenerate(&self) -> bool {
        self.se <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub method: EstimatorChoice,
    pub kernel: Option<KernelSpec>,
    pub coefficients: Vec<CoefficientInference>,
    pub vcov: SymMatrix,
    /// Smallest eigenvalue of the meat matrix.
    pub meat_min_eigenvalue: f64,
}

impl InferenceResult {
    pub fn bandwidth(&self) -> Option<usize> {
        self.kernel.map(|k| k.bandwidth)
    }

    pub fn coefficient(&self, name: &str) -> Option<&CoefficientInference> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `B^{-1} V B^{-1}` with `V` the chosen estimator applied to the scores.
pub fn sandwich(fit: &FitResult, choice: EstimatorChoice, rule: BandwidthRule) -> Result<InferenceResult, RegressionError> {
    let kernel = resolve_kernel(&fit.panel, &fit.scores, choice, rule)?;
    let meat = estimators::estimate(&fit.panel, &fit.scores, choice, kernel.as_ref())?;
    let vcov = match sandwich_product(&fit.bread, &meat.matrix) {
        Ok(m) => m,
        Err(NumericsError::NotPositiveDefinite { min_eigenvalue }) => {
            return Err(RegressionError::SingularBread { min_eigenvalue })
        }
        Err(e) => return Err(e.into()),
    };
    let diag = vcov.diag();
    if let Some(c) = diag.iter().position(|&v| v < 0.0) {
        return Err(RegressionError::NegativeVariance {
            name: fit.names[c].clone(),
            min_eigenvalue: sym_eigen_min(&vcov)?,
        });
    }
    let normal = standard_normal();
    let coefficients = fit
        .names
        .iter()
        .zip(&fit.beta_hat)
        .zip(&diag)
        .map(|((name, &estimate), &var)| {
            let se = var.sqrt();
            let t_stat = (se > 0.0).then(|| estimate / se);
            CoefficientInference {
                name: name.clone(),
                estimate,
                se,
                t_stat,
                p_value: t_stat.map(|t| 2.0 * normal.cdf(-t.abs())),
                ci_low: estimate - Z_975 * se,
                ci_high: estimate + Z_975 * se,
            }
        })
        .collect();
    Ok(InferenceResult {
        method: choice,
        kernel,
        coefficients,
        vcov,
        meat_min_eigenvalue: meat.diagnostics.min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn design(p: PanelIndex, y: Vec<f64>, x: Vec<Vec<f64>>) -> Design {
        let v = x.first().map_or(0, Vec::len);
        Design::new(p, y, x, (0..v).map(|c| format!("x{c}")).collect()).unwrap()
    }

    #[test]
    fn within_kills_additive_structure() {
        let p = PanelIndex::balanced(2, 2);
        let d = design(p, vec![1.0, 2.0, 3.0, 4.0], vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]]);
        let w = within_transform(&d).unwrap();
        assert!(w.y().iter().all(|v| v.abs() < 1e-15));
        assert!(w.x().iter().all(|r| r[0].abs() < 1e-15));
    }

    #[test]
    fn within_unbalanced_kills_additive_structure() {
        let recs = [(1, 1), (1, 2), (1, 3), (2, 1), (2, 3), (3, 2), (3, 3), (3, 1), (1, 1)];
        let p = PanelIndex::new(&recs).unwrap();
        assert!(!p.is_balanced());
        let y: Vec<f64> = recs.iter().map(|&(g, t)| 0.7 * g as f64 - 1.3 * (t * t) as f64).collect();
        let d = design(p, y.clone(), y.iter().map(|v| vec![*v]).collect());
        let w = within_transform(&d).unwrap();
        assert!(w.y().iter().all(|v| v.abs() < 1e-9), "{:?}", w.y());
    }

    #[test]
    fn within_needs_two_way_variation() {
        let p = PanelIndex::balanced(1, 4);
        let d = design(p, vec![1.0; 4], vec![vec![0.0]; 4]);
        assert_eq!(within_transform(&d), Err(RegressionError::TooFewGroups));
    }

    #[test]
    fn noiseless_fit_is_exact() {
        let p = PanelIndex::balanced(4, 5);
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, (i as f64).sin(), (i * i) as f64 / 50.0]).collect();
        let beta = [0.5, -2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|r| r.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
        let fit = ols_fit(&design(p, y, x)).unwrap();
        for (b, t) in fit.beta_hat.iter().zip(beta) {
            assert_relative_eq!(*b, t, epsilon = 1e-10);
        }
    }

    #[test]
    fn intercept_only_gives_mean() {
        let p = PanelIndex::balanced(2, 3);
        let y = vec![1.0, 4.0, -2.0, 0.5, 3.0, 7.0];
        let d = Design::new(p, y.clone(), vec![vec![]; 6], vec![]).unwrap().with_intercept().unwrap();
        let fit = ols_fit(&d).unwrap();
        assert_relative_eq!(fit.beta_hat[0], y.iter().sum::<f64>() / 6.0, epsilon = 1e-14);
        assert!(fit.scores.total()[0].abs() < 1e-12);
    }

    #[test]
    fn singular_bread() {
        let p = PanelIndex::balanced(2, 2);
        let d = design(p, vec![1.0, 2.0, 3.0, 4.0], vec![vec![1.0, 2.0]; 4]);
        assert!(matches!(ols_fit(&d), Err(RegressionError::SingularBread { .. })));
    }

    #[test]
    fn design_validation() {
        let p = PanelIndex::balanced(1, 2);
        assert_eq!(
            Design::new(p.clone(), vec![1.0, 2.0], vec![vec![1.0], vec![1.0]], vec!["a".into(), "b".into()]),
            Err(RegressionError::RaggedRegressors { row: 0, expected: 2, found: 1 })
        );
        assert_eq!(
            Design::new(p.clone(), vec![1.0, f64::NAN], vec![vec![1.0], vec![1.0]], vec!["a".into()]),
            Err(RegressionError::NonFinite)
        );
        assert_eq!(
            Design::new(p, vec![1.0, 2.0], vec![vec![1.0, 0.0], vec![1.0, 1.0]], vec!["a".into(), "b".into()]),
            Err(RegressionError::TooFewObservations { n: 2, v: 2 })
        );
    }

    fn iid_design(n_g: usize, n_t: usize, seed: u64) -> Design {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = PanelIndex::balanced(n_g, n_t);
        let n = p.n();
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 0.1 + 0.1 * r[0] + { let z: f64 = StandardNormal.sample(&mut rng); z })
            .collect();
        Design::new(p, y, x, vec!["x".into()]).unwrap().with_intercept().unwrap()
    }

    #[test]
    fn ehw_matches_iid_asymptotic_se() {
        // Var(beta_1) ~ sigma_u^2 / (n Var(x)) = 1 / n
        let d = iid_design(100, 100, 7);
        let fit = ols_fit(&d).unwrap();
        let inf = sandwich(&fit, EstimatorChoice::new(Method::Ehw), BandwidthRule::default()).unwrap();
        let se = inf.coefficient("x").unwrap().se;
        assert!((se / 0.01 - 1.0).abs() < 0.1, "se = {se}");
        assert_eq!(inf.kernel, None);
    }

    #[test]
    fn ehw_equals_textbook_hc0() {
        let d = iid_design(6, 7, 3);
        let fit = ols_fit(&d).unwrap();
        let inf = sandwich(&fit, EstimatorChoice::new(Method::Ehw), BandwidthRule::default()).unwrap();
        // closed-form 2x2 inverse and explicit meat
        let (a, b, c) = (fit.bread.get(0, 0), fit.bread.get(0, 1), fit.bread.get(1, 1));
        let det = a * c - b * b;
        let inv = [[c / det, -b / det], [-b / det, a / det]];
        let mut meat = [[0.0; 2]; 2];
        for (row, u) in d.x().iter().zip(&fit.residuals) {
            for r in 0..2 {
                for s in 0..2 {
                    meat[r][s] += row[r] * row[s] * u * u;
                }
            }
        }
        for r in 0..2 {
            for s in 0..2 {
                let mut v = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        v += inv[r][k] * meat[k][l] * inv[l][s];
                    }
                }
                assert_relative_eq!(inf.vcov.get(r, s), v, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn scaling_outcome_doubles_standard_errors() {
        let d = iid_design(8, 9, 11);
        let d2 = Design::new(
            d.panel().clone(),
            d.y().iter().map(|v| 2.0 * v).collect(),
            d.x().to_vec(),
            d.names().to_vec(),
        )
        .unwrap();
        let f1 = ols_fit(&d).unwrap();
        let f2 = ols_fit(&d2).unwrap();
        for choice in EstimatorChoice::standard_set() {
            let rule = BandwidthRule::Fixed(KernelSpec::triangular(2));
            let (a, b) = match (sandwich(&f1, choice, rule), sandwich(&f2, choice, rule)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(_), Err(_)) => continue,
                _ => panic!("inconsistent outcome for {choice}"),
            };
            for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
                assert_relative_eq!(y.se, 2.0 * x.se, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn auto_bandwidth_is_recorded() {
        let d = iid_design(10, 12, 5);
        let fit = ols_fit(&d).unwrap();
        let inf = sandwich(&fit, EstimatorChoice::new(Method::Hm), BandwidthRule::Auto(KernelKind::Triangular)).unwrap();
        let m = inf.bandwidth().unwrap();
        assert!((1..12).contains(&m));
        assert!(inf.coefficients.iter().all(|c| c.se > 0.0));
        let c = &inf.coefficients[1];
        assert_relative_eq!(c.ci_high - c.estimate, Z_975 * c.se, max_relative = 1e-14);
        assert!(c.p_value.unwrap() > 0.0 && c.p_value.unwrap() <= 1.0);
    }

    proptest! {
        #[test]
        fn within_is_idempotent(vals in prop::collection::vec(-5.0f64..5.0, 12), drop in 0usize..13) {
            let mut recs: Vec<(i64, i64)> = (1..=3).flat_map(|g| (1..=4).map(move |t| (g, t))).collect();
            let mut y = vals.clone();
            if drop < 12 {
                recs.remove(drop);
                y.remove(drop);
            }
            let p = PanelIndex::new(&recs).unwrap();
            let d = design(p, y.clone(), y.iter().map(|v| vec![*v]).collect());
            let once = within_transform(&d).unwrap();
            let twice = within_transform(&once).unwrap();
            for (a, b) in once.y().iter().zip(twice.y()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn permutation_leaves_inference_unchanged(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let d = iid_design(5, 6, seed);
            let mut order: Vec<usize> = (0..d.panel().n()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
            let recs: Vec<(i64, i64)> = order.iter().map(|&i| d.panel().record(i)).collect();
            let d2 = Design::new(
                PanelIndex::new(&recs).unwrap(),
                order.iter().map(|&i| d.y()[i]).collect(),
                order.iter().map(|&i| d.x()[i].clone()).collect(),
                d.names().to_vec(),
            ).unwrap();
            let (f1, f2) = (ols_fit(&d).unwrap(), ols_fit(&d2).unwrap());
            for (a, b) in f1.beta_hat.iter().zip(&f2.beta_hat) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let rule = BandwidthRule::Fixed(KernelSpec::triangular(2));
            let i1 = sandwich(&f1, EstimatorChoice::new(Method::Hm), rule).unwrap();
            let i2 = sandwich(&f2, EstimatorChoice::new(Method::Hm), rule).unwrap();
            for (a, b) in i1.coefficients.iter().zip(&i2.coefficients) {
                prop_assert!((a.se - b.se).abs() <= 1e-10 * a.se);
            }
        }
    }
}
