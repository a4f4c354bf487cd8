//! Observation index space of a (possibly unbalanced) panel.
//!
//! Every observation carries a cross-sectional cluster `g` and a time period
//! `t`. The index keeps the three partitions the estimators need (by period,
//! by cluster, by cell) and the neighbourhood-concentration measures built on
//! the panel distance: observations sharing a cluster or a period are at
//! distance zero, all others are `|t(i) - t(j)|` apart.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::CompensatedSum;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PanelError {
    #[error("panel has no observations")]
    Empty,
    #[error("record {row}: {field} id must be a positive integer, got {value}")]
    NonPositiveId {
        row: usize,
        field: &'static str,
        value: i64,
    },
    #[error("observation index {index} out of range for panel with {n} observations")]
    ObservationOutOfRange { index: usize, n: usize },
    #[error("exponent k must be positive and finite, got {0}")]
    InvalidExponent(f64),
    #[error("alpha grid is empty")]
    EmptyAlphaGrid,
    #[error("alpha grid points must exceed 1, got {0}")]
    InvalidAlpha(f64),
}

/// Cluster/time bookkeeping for `n` observations.
///
/// Clusters are re-labelled densely `0..G` in increasing order of their
/// external ids; periods are re-labelled `0..T` as offsets from the smallest
/// observed period, so gaps inside the range stay as empty periods.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelIndex {
    g_of: Vec<usize>,
    t_of: Vec<usize>,
    cluster_ids: Vec<i64>,
    first_period: i64,
    by_time: Vec<Vec<usize>>,
    by_cluster: Vec<Vec<usize>>,
    by_cell: BTreeMap<(usize, usize), Vec<usize>>,
}

/// Builds a panel from `(g, t)` records; observation order is preserved.
pub fn build_panel(records: &[(i64, i64)]) -> Result<PanelIndex, PanelError> {
    PanelIndex::new(records)
}

impl PanelIndex {
    pub fn new(records: &[(i64, i64)]) -> Result<Self, PanelError> {
        if records.is_empty() {
            return Err(PanelError::Empty);
        }
        for (row, &(g, t)) in records.iter().enumerate() {
            if g <= 0 {
                return Err(PanelError::NonPositiveId {
                    row,
                    field: "cluster",
                    value: g,
                });
            }
            if t <= 0 {
                return Err(PanelError::NonPositiveId {
                    row,
                    field: "time",
                    value: t,
                });
            }
        }

        let mut cluster_ids: Vec<i64> = records.iter().map(|&(g, _)| g).collect();
        cluster_ids.sort_unstable();
        cluster_ids.dedup();
        let first_period = records.iter().map(|&(_, t)| t).min().unwrap_or(1);
        let last_period = records.iter().map(|&(_, t)| t).max().unwrap_or(1);
        let periods = (last_period - first_period + 1) as usize;

        let n = records.len();
        let mut g_of = Vec::with_capacity(n);
        let mut t_of = Vec::with_capacity(n);
        let mut by_time = vec![Vec::new(); periods];
        let mut by_cluster = vec![Vec::new(); cluster_ids.len()];
        let mut by_cell: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, &(g, t)) in records.iter().enumerate() {
            let gi = cluster_ids.binary_search(&g).expect("id collected above");
            let ti = (t - first_period) as usize;
            g_of.push(gi);
            t_of.push(ti);
            by_time[ti].push(i);
            by_cluster[gi].push(i);
            by_cell.entry((ti, gi)).or_default().push(i);
        }

        Ok(Self {
            g_of,
            t_of,
            cluster_ids,
            first_period,
            by_time,
            by_cluster,
            by_cell,
        })
    }

    /// Balanced `g_count x t_count` panel in cluster-major order
    /// (observation `g * t_count + t`).
    pub fn balanced(g_count: usize, t_count: usize) -> Self {
        let records: Vec<(i64, i64)> = (1..=g_count as i64)
            .flat_map(|g| (1..=t_count as i64).map(move |t| (g, t)))
            .collect();
        Self::new(&records).expect("balanced panel with positive dimensions")
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.g_of.len()
    }

    #[inline]
    pub fn num_clusters(&self) -> usize {
        self.by_cluster.len()
    }

    #[inline]
    pub fn num_periods(&self) -> usize {
        self.by_time.len()
    }

    /// Dense 0-based cluster of observation `i`.
    #[inline]
    pub fn cluster(&self, i: usize) -> usize {
        self.g_of[i]
    }

    /// Dense 0-based period of observation `i`.
    #[inline]
    pub fn period(&self, i: usize) -> usize {
        self.t_of[i]
    }

    pub fn cluster_id(&self, g: usize) -> i64 {
        self.cluster_ids[g]
    }

    pub fn period_label(&self, t: usize) -> i64 {
        self.first_period + t as i64
    }

    /// External `(g, t)` record of observation `i`.
    pub fn record(&self, i: usize) -> (i64, i64) {
        (self.cluster_id(self.g_of[i]), self.period_label(self.t_of[i]))
    }

    pub fn records(&self) -> Vec<(i64, i64)> {
        (0..self.n()).map(|i| self.record(i)).collect()
    }

    pub fn by_time(&self, t: usize) -> &[usize] {
        &self.by_time[t]
    }

    pub fn by_cluster(&self, g: usize) -> &[usize] {
        &self.by_cluster[g]
    }

    pub fn periods(&self) -> impl Iterator<Item = &[usize]> {
        self.by_time.iter().map(Vec::as_slice)
    }

    pub fn clusters(&self) -> impl Iterator<Item = &[usize]> {
        self.by_cluster.iter().map(Vec::as_slice)
    }

    /// Observations in cell `(t, g)`; empty when the cell is unobserved.
    pub fn cell(&self, t: usize, g: usize) -> &[usize] {
        self.by_cell.get(&(t, g)).map_or(&[], Vec::as_slice)
    }

    /// Nonempty cells keyed by `(t, g)`, in increasing `(t, g)` order.
    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), &[usize])> {
        self.by_cell.iter().map(|(&k, v)| (k, v.as_slice()))
    }

    pub fn num_cells(&self) -> usize {
        self.by_cell.len()
    }

    /// `true` when every (t, g) cell holds the same positive number of
    /// observations.
    pub fn is_balanced(&self) -> bool {
        if self.by_cell.len() != self.num_clusters() * self.num_periods() {
            return false;
        }
        let first = self.by_cell.values().next().map_or(0, Vec::len);
        self.by_cell.values().all(|c| c.len() == first)
    }

    /// `|N_t|` with zero extension outside `0..T`.
    #[inline]
    pub fn time_count(&self, t: i64) -> usize {
        if t < 0 || t >= self.num_periods() as i64 {
            0
        } else {
            self.by_time[t as usize].len()
        }
    }

    #[inline]
    pub fn cluster_count(&self, g: usize) -> usize {
        self.by_cluster[g].len()
    }

    fn check_index(&self, i: usize) -> Result<(), PanelError> {
        if i >= self.n() {
            Err(PanelError::ObservationOutOfRange {
                index: i,
                n: self.n(),
            })
        } else {
            Ok(())
        }
    }

    /// Panel distance: 0 when `i` and `j` share a cluster or a period,
    /// otherwise the absolute difference of their periods.
    pub fn distance(&self, i: usize, j: usize) -> Result<usize, PanelError> {
        self.check_index(i)?;
        self.check_index(j)?;
        if self.g_of[i] == self.g_of[j] || self.t_of[i] == self.t_of[j] {
            Ok(0)
        } else {
            Ok(self.t_of[i].abs_diff(self.t_of[j]))
        }
    }

    /// Number of observations counted at lag `h` around a period, excluding
    /// the cluster correction that only applies at `h = 0`.
    #[inline]
    fn lag_count(&self, t: usize, h: usize) -> usize {
        let t = t as i64;
        let h = h as i64;
        self.time_count(t + h) + self.time_count(t - h)
    }

    /// The boundary count of observation `i` at lag `h`, including the
    /// `|N_g| - |N_t|` correction when `h = 0`.
    #[inline]
    fn boundary_term(&self, i: usize, h: usize) -> f64 {
        let t = self.t_of[i];
        let base = self.lag_count(t, h) as f64;
        if h == 0 {
            base + self.cluster_count(self.g_of[i]) as f64 - self.by_time[t].len() as f64
        } else {
            base
        }
    }

    /// Average `k`-th power of the number of observations `s` periods away.
    pub fn delta_boundary(&self, s: usize, k: f64) -> Result<f64, PanelError> {
        check_exponent(k)?;
        let mut acc = CompensatedSum::new();
        for i in 0..self.n() {
            acc.add(self.boundary_term(i, s).powf(k));
        }
        Ok(acc.value() / self.n() as f64)
    }

    /// Average `k`-th power of the number of observations between `s` and `m`
    /// periods away (inclusive). Zero when `s > m`.
    pub fn delta_window(&self, s: usize, m: usize, k: f64) -> Result<f64, PanelError> {
        check_exponent(k)?;
        if s > m {
            return Ok(0.0);
        }
        // Lags h >= 1 depend on the period only.
        let first_lag = s.max(1);
        let window: Vec<f64> = (0..self.num_periods())
            .map(|t| (first_lag..=m).map(|h| self.lag_count(t, h) as f64).sum())
            .collect();
        let mut acc = CompensatedSum::new();
        for i in 0..self.n() {
            let mut total = window[self.t_of[i]];
            if s == 0 {
                total += self.boundary_term(i, 0);
            }
            acc.add(total.powf(k));
        }
        Ok(acc.value() / self.n() as f64)
    }

    /// Grid minimum over `alpha` of
    /// `delta_window(s, m; k alpha)^(1/alpha) * delta_boundary(s; alpha/(alpha-1))^(1 - 1/alpha)`.
    pub fn neighborhood_cost(
        &self,
        s: usize,
        m: usize,
        k: f64,
        alpha_grid: &[f64],
    ) -> Result<f64, PanelError> {
        check_exponent(k)?;
        check_alpha_grid(alpha_grid)?;
        let mut best = f64::INFINITY;
        for &alpha in alpha_grid {
            let window = self.delta_window(s, m, k * alpha)?;
            if window == 0.0 {
                return Ok(0.0);
            }
            let boundary = self.delta_boundary(s, alpha / (alpha - 1.0))?;
            let value = window.powf(1.0 / alpha) * boundary.powf(1.0 - 1.0 / alpha);
            best = best.min(value);
        }
        Ok(best)
    }

    /// Tabulates the concentration measures over `s in 0..=s_max`, the given
    /// window ends and exponents.
    pub fn concentration_report(
        &self,
        s_max: usize,
        window_ends: &[usize],
        exponents: &[f64],
        alpha_grid: &[f64],
    ) -> Result<ConcentrationReport, PanelError> {
        check_alpha_grid(alpha_grid)?;
        let mut report = ConcentrationReport {
            delta_boundary: Vec::new(),
            delta_window: Vec::new(),
            cost: Vec::new(),
            alpha_grid: alpha_grid.to_vec(),
        };
        for &k in exponents {
            for s in 0..=s_max {
                report.delta_boundary.push(BoundaryValue {
                    s,
                    k,
                    value: self.delta_boundary(s, k)?,
                });
                for &m in window_ends {
                    report.delta_window.push(WindowValue {
                        s,
                        m,
                        k,
                        value: self.delta_window(s, m, k)?,
                    });
                    report.cost.push(WindowValue {
                        s,
                        m,
                        k,
                        value: self.neighborhood_cost(s, m, k, alpha_grid)?,
                    });
                }
            }
        }
        Ok(report)
    }
}

fn check_exponent(k: f64) -> Result<(), PanelError> {
    if k > 0.0 && k.is_finite() {
        Ok(())
    } else {
        Err(PanelError::InvalidExponent(k))
    }
}

fn check_alpha_grid(grid: &[f64]) -> Result<(), PanelError> {
    if grid.is_empty() {
        return Err(PanelError::EmptyAlphaGrid);
    }
    match grid.iter().find(|&&a| !(a > 1.0 && a.is_finite())) {
        Some(&bad) => Err(PanelError::InvalidAlpha(bad)),
        None => Ok(()),
    }
}

/// 25 log-spaced points on `(1.02, 16]`.
pub fn default_alpha_grid() -> Vec<f64> {
    const LOW: f64 = 1.02;
    const HIGH: f64 = 16.0;
    const POINTS: usize = 25;
    let ratio = (HIGH / LOW).ln();
    (1..=POINTS)
        .map(|j| {
            if j == POINTS {
                HIGH
            } else {
                LOW * (ratio * j as f64 / POINTS as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryValue {
    pub s: usize,
    pub k: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowValue {
    pub s: usize,
    pub m: usize,
    pub k: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub delta_boundary: Vec<BoundaryValue>,
    pub delta_window: Vec<WindowValue>,
    pub cost: Vec<WindowValue>,
    pub alpha_grid: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn random_records() -> impl Strategy<Value = Vec<(i64, i64)>> {
        prop::collection::vec((1i64..6, 1i64..8), 1..60)
    }

    // Literal count of the observations that enter the boundary measure of
    // `i` at lag `s`.
    fn brute_boundary(p: &PanelIndex, s: usize, k: f64) -> f64 {
        let n = p.n();
        let mut total = 0.0;
        for i in 0..n {
            let (gi, ti) = (p.cluster(i) as i64, p.period(i) as i64);
            let mut count = 0usize;
            for j in 0..n {
                let (gj, tj) = (p.cluster(j) as i64, p.period(j) as i64);
                if s == 0 {
                    count += usize::from(tj == ti) + usize::from(gj == gi);
                } else {
                    count += usize::from(tj == ti + s as i64) + usize::from(tj == ti - s as i64);
                }
            }
            total += (count as f64).powf(k);
        }
        total / n as f64
    }

    #[test]
    fn balanced_two_by_two() {
        let p = build_panel(&[(1, 1), (1, 2), (2, 1), (2, 2)]).unwrap();
        assert_eq!((p.n(), p.num_clusters(), p.num_periods()), (4, 2, 2));
        for t in 0..2 {
            for g in 0..2 {
                assert_eq!(p.cell(t, g).len(), 1);
            }
        }
        assert!(p.is_balanced());
    }

    #[test]
    fn repeated_cell() {
        let p = build_panel(&[(1, 1), (1, 1)]).unwrap();
        assert_eq!(p.cell(0, 0), &[0, 1]);
        assert_eq!(p.num_periods(), 1);
    }

    #[test]
    fn balanced_counts() {
        let p = PanelIndex::balanced(2, 3);
        assert!(p.periods().all(|b| b.len() == 2));
        assert!(p.clusters().all(|b| b.len() == 3));
        assert_eq!(p.periods().map(<[usize]>::len).sum::<usize>(), 6);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(build_panel(&[]), Err(PanelError::Empty));
        assert!(matches!(
            build_panel(&[(1, 1), (0, 2)]),
            Err(PanelError::NonPositiveId { row: 1, field: "cluster", .. })
        ));
        assert!(matches!(
            build_panel(&[(1, -3)]),
            Err(PanelError::NonPositiveId { field: "time", .. })
        ));
    }

    #[test]
    fn external_ids_round_trip_and_gaps_stay_empty() {
        let recs = vec![(30, 5), (7, 7), (30, 7)];
        let p = build_panel(&recs).unwrap();
        assert_eq!(p.records(), recs);
        assert_eq!(p.num_periods(), 3);
        assert!(p.by_time(1).is_empty());
        assert_eq!(p.cluster_id(0), 7);
    }

    #[test]
    fn distance_examples() {
        // obs: (g1,t1) (g1,t5) (g2,t2) (g3,t2) (g2,t4)
        let p = build_panel(&[(1, 1), (1, 5), (2, 2), (3, 2), (2, 4)]).unwrap();
        assert_eq!(p.distance(0, 1).unwrap(), 0);
        assert_eq!(p.distance(2, 3).unwrap(), 0);
        assert_eq!(p.distance(0, 4).unwrap(), 3);
        assert_eq!(p.distance(3, 3).unwrap(), 0);
        assert!(matches!(
            p.distance(0, 5),
            Err(PanelError::ObservationOutOfRange { index: 5, n: 5 })
        ));
    }

    #[test]
    fn boundary_counts_on_two_by_three() {
        let p = PanelIndex::balanced(2, 3);
        assert_relative_eq!(p.delta_boundary(0, 1.0).unwrap(), 5.0, epsilon = 1e-15);
        assert_relative_eq!(p.delta_boundary(1, 1.0).unwrap(), 8.0 / 3.0, epsilon = 1e-15);
        assert_eq!(p.delta_boundary(3, 1.0).unwrap(), 0.0);
        assert_eq!(p.delta_boundary(7, 2.5).unwrap(), 0.0);
    }

    #[test]
    fn window_counts_on_two_by_three() {
        let p = PanelIndex::balanced(2, 3);
        for k in [0.5, 1.0, 2.0, 3.5] {
            assert_eq!(
                p.delta_window(0, 0, k).unwrap(),
                p.delta_boundary(0, k).unwrap()
            );
        }
        assert_relative_eq!(p.delta_window(1, 2, 1.0).unwrap(), 4.0, epsilon = 1e-15);
        assert_eq!(p.delta_window(3, 2, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cost_single_alpha_matches_factors() {
        let p = PanelIndex::balanced(2, 3);
        // Delta(1,1;2): every obs counts 2,4,2 -> (4+16+4)*2/6 = 8
        // delta(1;2): same counts -> 8
        let expected = 8f64.sqrt() * 8f64.sqrt();
        assert_relative_eq!(
            p.neighborhood_cost(1, 1, 1.0, &[2.0]).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cost_zero_when_window_empty() {
        let p = PanelIndex::balanced(3, 4);
        assert_eq!(p.neighborhood_cost(3, 2, 1.0, &default_alpha_grid()).unwrap(), 0.0);
        assert_eq!(p.neighborhood_cost(5, 9, 1.0, &default_alpha_grid()).unwrap(), 0.0);
    }

    #[test]
    fn cost_grid_errors() {
        let p = PanelIndex::balanced(2, 2);
        assert_eq!(p.neighborhood_cost(0, 1, 1.0, &[]), Err(PanelError::EmptyAlphaGrid));
        assert_eq!(
            p.neighborhood_cost(0, 1, 1.0, &[2.0, 1.0]),
            Err(PanelError::InvalidAlpha(1.0))
        );
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_alpha_grid();
        assert_eq!(grid.len(), 25);
        assert!(grid[0] > 1.02);
        assert_eq!(*grid.last().unwrap(), 16.0);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn report_respects_invariants() {
        let p = build_panel(&[(1, 1), (1, 2), (2, 2), (3, 4), (3, 1), (2, 3)]).unwrap();
        let grid = default_alpha_grid();
        let r = p.concentration_report(4, &[0, 1, 3], &[1.0, 2.0], &grid).unwrap();
        assert!(r.delta_boundary.iter().all(|e| e.value >= 0.0));
        for (w, c) in r.delta_window.iter().zip(&r.cost) {
            assert!(w.value >= 0.0 && c.value >= 0.0);
            if w.s > w.m {
                assert_eq!(w.value, 0.0);
            }
            for &alpha in &grid {
                let bound = p.delta_window(c.s, c.m, c.k * alpha).unwrap().powf(1.0 / alpha)
                    * p.delta_boundary(c.s, alpha / (alpha - 1.0)).unwrap().powf(1.0 - 1.0 / alpha);
                assert!(c.value <= bound * (1.0 + 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_reflexive(recs in random_records()) {
            let p = build_panel(&recs).unwrap();
            for i in 0..p.n() {
                prop_assert_eq!(p.distance(i, i).unwrap(), 0);
                for j in 0..p.n() {
                    prop_assert_eq!(p.distance(i, j).unwrap(), p.distance(j, i).unwrap());
                }
            }
        }

        #[test]
        fn index_partitions_are_consistent(recs in random_records()) {
            let p = build_panel(&recs).unwrap();
            let cell_total: usize = p.cells().map(|(_, c)| c.len()).sum();
            prop_assert_eq!(cell_total, p.n());
            prop_assert_eq!(p.periods().map(<[usize]>::len).sum::<usize>(), p.n());
            prop_assert_eq!(p.clusters().map(<[usize]>::len).sum::<usize>(), p.n());
            for ((t, g), obs) in p.cells() {
                for &i in obs {
                    prop_assert_eq!((p.period(i), p.cluster(i)), (t, g));
                    prop_assert!(p.by_time(t).contains(&i));
                    prop_assert!(p.by_cluster(g).contains(&i));
                }
            }
        }

        #[test]
        fn boundary_matches_brute_force(recs in random_records(), s in 0usize..8, k in 0.5f64..3.0) {
            let p = build_panel(&recs).unwrap();
            let fast = p.delta_boundary(s, k).unwrap();
            let slow = brute_boundary(&p, s, k);
            prop_assert!((fast - slow).abs() <= 1e-12 * slow.max(1.0));
        }

        #[test]
        fn window_monotone(recs in random_records(), s in 0usize..5, m in 0usize..7, k in 1.0f64..3.0) {
            let p = build_panel(&recs).unwrap();
            let here = p.delta_window(s, m, k).unwrap();
            let tol = 1e-12 * here.max(1.0);
            prop_assert!(p.delta_window(s, m + 1, k).unwrap() >= here - tol);
            prop_assert!(p.delta_window(s + 1, m, k).unwrap() <= here + tol);
        }

        #[test]
        fn larger_grid_never_increases_cost(recs in random_records(), s in 0usize..3, m in 0usize..4) {
            let p = build_panel(&recs).unwrap();
            let small = [1.5, 3.0];
            let large = [1.5, 2.0, 3.0, 6.0];
            prop_assert!(
                p.neighborhood_cost(s, m, 1.0, &large).unwrap()
                    <= p.neighborhood_cost(s, m, 1.0, &small).unwrap()
            );
        }
    }
}
