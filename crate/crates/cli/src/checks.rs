//! Analytic checks run by `hetvar check`.
//!
//! Groups are selected by number:
//!
//! * `1` three-period series with lag-one dependence: mean-driven gaps.
//! * `3` two-cluster, four-period mean table under the uniform kernel, `M = 1`.
//! * `4` unit-variance, `rho = 0`, `G = T` component model: closed form of
//!   the variance of the sum.
//!
//! `--props` adds randomized trials of `v_con - v_adj` being PSD.

use hetvar::estimators::ScoreMatrix;
use hetvar::kernel::{KernelKind, KernelSpec};
use hetvar::oracle::{
    chs_mean_gap, series_mean_gap, mean_decomposition, psd_gap_report, v_true, ComponentDgp, EstimandStrategy,
    MeanDecomposition, ALTERNATING_MEANS, COUNTEREXAMPLE_MEANS,
};
use hetvar::panel::PanelIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;

/// Seed for the randomized parts of the checks.
pub const CHECK_SEED: u64 = 0x5eed_c0de;
pub const GAP_DRAWS: usize = 10_000;
pub const PSD_TRIALS: usize = 200;

/// Claimed value of the series gap at means (0.5, -1, 0.5).
pub const STATED_D1: f64 = -0.5;
/// Claimed gap and decomposition (cluster, time, cell, serial,
/// within-cluster serial) for the two-cluster mean table.
pub const STATED_TABLE_GAP: f64 = -4.0;
pub const STATED_TABLE_TERMS: [f64; 5] = [0.0, 4.0, 8.0, -3.0, -3.0];

/// Claimed closed form of the variance of the sum for `G = T`.
pub fn stated_closed_form(t: usize) -> f64 {
    let t = t as f64;
    2.0 * t.powi(3) - 3.0 * t.powi(2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub group: String,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(group: &str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            group: group.to_string(),
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{} [{}] {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.group,
            self.name,
            self.detail
        )
    }
}

fn oracle_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

pub fn series_gap_checks(seed: u64) -> Result<Vec<CheckLine>, CliError> {
    let (d1, _) = series_mean_gap(&[0.5, -1.0, 0.5]).map_err(oracle_err)?;
    let mut out = vec![CheckLine::new(
        "1",
        "D1 at means (0.5, -1, 0.5)",
        d1 == STATED_D1,
        format!("D1={d1} expected {STATED_D1}"),
    )];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..GAP_DRAWS {
        let m: [f64; 3] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        let (_, d2) = series_mean_gap(&m).map_err(oracle_err)?;
        worst = worst.min(d2);
    }
    out.push(CheckLine::new(
        "1",
        format!("D2 >= 0 over {GAP_DRAWS} random mean triples"),
        worst >= 0.0,
        format!("min D2={worst:.6}"),
    ));
    Ok(out)
}

fn terms(d: &MeanDecomposition) -> [f64; 5] {
    [d.cluster, d.time, d.cell, d.serial, d.within_cluster_serial]
}

fn fmt_terms(t: &[f64; 5]) -> String {
    let parts: Vec<String> = t.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(", "))
}

pub fn mean_table_checks() -> Result<Vec<CheckLine>, CliError> {
    let gap = chs_mean_gap(&COUNTEREXAMPLE_MEANS, EstimandStrategy::DoubleSum).map_err(oracle_err)?;
    let dec = terms(&mean_decomposition(&COUNTEREXAMPLE_MEANS, 1));
    let alt_gap = chs_mean_gap(&ALTERNATING_MEANS, EstimandStrategy::DoubleSum).map_err(oracle_err)?;
    let alt_dec = mean_decomposition(&ALTERNATING_MEANS, 1);
    Ok(vec![
        CheckLine::new(
            "3",
            "v_chs - v_true on the two-cluster mean table",
            gap == STATED_TABLE_GAP,
            format!("got {gap}, expected {STATED_TABLE_GAP}"),
        ),
        CheckLine::new(
            "3",
            "mean-term decomposition (cluster, time, cell, serial, within-cluster serial)",
            dec == STATED_TABLE_TERMS,
            format!("got {}, expected {}", fmt_terms(&dec), fmt_terms(&STATED_TABLE_TERMS)),
        ),
        CheckLine::new(
            "3",
            "v_chs - v_true on the alternating mean table",
            alt_gap == STATED_TABLE_GAP && alt_dec.aggregate() == STATED_TABLE_GAP,
            format!(
                "got {alt_gap}, terms {}, expected {STATED_TABLE_GAP}",
                fmt_terms(&terms(&alt_dec))
            ),
        ),
    ])
}

pub fn closed_form_checks() -> Result<Vec<CheckLine>, CliError> {
    (2..=10)
        .map(|t| {
            let d = ComponentDgp::unit(PanelIndex::balanced(t, t), 0.0).map_err(oracle_err)?;
            let v = v_true(&d, EstimandStrategy::DoubleSum).map_err(oracle_err)?.get(0, 0);
            let stated = stated_closed_form(t);
            Ok(CheckLine::new(
                "4",
                format!("variance of the sum, G=T={t}"),
                v == stated,
                format!("got {v}, expected 2T^3-3T^2={stated}"),
            ))
        })
        .collect()
}

/// Random component model: balanced panel with random cell dropout,
/// `G, T <= 12`, scalar or bivariate means, `rho in (-0.9, 0.9)`, either
/// kernel and `M <= T - 1`.
pub fn random_trial(rng: &mut ChaCha8Rng) -> Result<(ComponentDgp, KernelSpec), CliError> {
    let g = rng.random_range(1..=12usize);
    let t = rng.random_range(1..=12usize);
    let mut records = Vec::new();
    for gi in 1..=g as i64 {
        for ti in 1..=t as i64 {
            if records.is_empty() || rng.random_bool(0.85) {
                records.push((gi, ti));
            }
        }
    }
    let panel = PanelIndex::new(&records).map_err(oracle_err)?;
    let dim = rng.random_range(1..=2usize);
    let mu: Vec<f64> = (0..panel.n() * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mu = ScoreMatrix::new(dim, mu).map_err(oracle_err)?;
    let d = ComponentDgp::new(
        panel.clone(),
        mu,
        rng.random_range(0.0..2.0),
        rng.random_range(0.0..2.0),
        rng.random_range(-0.9..0.9),
        rng.random_range(0.0..2.0),
    )
    .map_err(oracle_err)?;
    let kind = if rng.random_bool(0.5) {
        KernelKind::Triangular
    } else {
        KernelKind::Uniform
    };
    let m = rng.random_range(0..panel.num_periods());
    Ok((d, KernelSpec::new(kind, m)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdTrials {
    pub trials: usize,
    pub passed: usize,
    /// Most negative `min_eig(v_con - v_adj) / ||v_con||` seen.
    pub worst_relative_eig: f64,
}

pub fn psd_trials(count: usize, seed: u64) -> Result<PsdTrials, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PsdTrials {
        trials: count,
        passed: 0,
        worst_relative_eig: f64::INFINITY,
    };
    for _ in 0..count {
        let (d, k) = random_trial(&mut rng)?;
        let r = psd_gap_report(&d, &k, EstimandStrategy::DoubleSum).map_err(oracle_err)?;
        if r.con_dominates_adj() {
            out.passed += 1;
        }
        let norm = r.v_con.spectral_norm().map_err(oracle_err)?;
        let rel = if norm > 0.0 { r.psd_gap_min_eig / norm } else { r.psd_gap_min_eig };
        out.worst_relative_eig = out.worst_relative_eig.min(rel);
    }
    Ok(out)
}

pub fn psd_check(count: usize, seed: u64) -> Result<CheckLine, CliError> {
    let t = psd_trials(count, seed)?;
    Ok(CheckLine::new(
        "props",
        "v_con - v_adj is PSD",
        t.passed == t.trials,
        format!(
            "{}/{} PSD, worst min_eig/||v_con|| = {:.3e}",
            t.passed, t.trials, t.worst_relative_eig
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_gap_passes() {
        assert!(series_gap_checks(1).unwrap().iter().all(|c| c.passed));
    }

    #[test]
    fn closed_form_reports_actual_values() {
        let lines = closed_form_checks().unwrap();
        assert_eq!(lines.len(), 9);
        // The variance of the sum is 2T^3 + T^2.
        assert!(lines[0].detail.starts_with("got 20,"), "{}", lines[0].detail);
    }

    #[test]
    fn random_trials_respect_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (d, k) = random_trial(&mut rng).unwrap();
            assert!(d.panel().num_clusters() <= 12 && d.panel().num_periods() <= 12);
            assert!(k.bandwidth < d.panel().num_periods());
            assert!(d.rho.abs() < 0.9);
        }
    }

    #[test]
    fn psd_trials_pass() {
        let t = psd_trials(20, 7).unwrap();
        assert_eq!(t.passed, 20);
    }
}
