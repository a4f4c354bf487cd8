//! Acceptance suite for the library and the command-line front end: one
//! PASS/FAIL line per criterion with its runtime.
//!
//! Runs as a plain binary (no libtest harness) so every line is printed.
//! Exits nonzero when any criterion fails. Set `HETVAR_PORTFOLIO_CSV` to a
//! long-format portfolio panel to enable the conditional HM-vs-CHS standard
//! error ordering check.

use std::path::Path;
use std::time::{Duration, Instant};

use hetvar::estimators::reference::brute_force;
use hetvar::estimators::{estimate, EstimatorChoice, Method, ScoreMatrix};
use hetvar::kernel::{KernelKind, KernelSpec};
use hetvar::numerics::sym_eigen_min;
use hetvar::oracle::{
    chs_mean_gap, series_mean_gap, mean_decomposition, psd_gap_report, v_true, ComponentDgp, EstimandStrategy,
    COUNTEREXAMPLE_MEANS,
};
use hetvar::panel::PanelIndex;
use hetvar::simulation::{clt_check, empirical_sum_variance, run_monte_carlo, HetPattern, SimulationConfig};
use hetvar_cli::checks::{psd_trials, stated_closed_form, STATED_TABLE_GAP, STATED_TABLE_TERMS};
use hetvar_cli::commands::{cmd_simulate, run_estimate, EstimateOptions, SimulateOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("series gap exactness", Duration::from_secs(1), series_gap),
        ("mean table exactness", Duration::from_secs(1), mean_table),
        ("unit-variance closed form", Duration::from_secs(1), closed_form),
        ("v_con - v_adj PSD over random models", Duration::from_secs(30), psd_suite),
        ("v_true^-1 v_adj -> I trend", Duration::from_secs(60), ratio_trend),
        ("brute-force equivalence", Duration::from_secs(120), brute_force_equivalence),
        ("in-sample PSD of HM", Duration::from_secs(60), in_sample_psd),
        ("oracle vs empirical variance", Duration::from_secs(60), oracle_vs_empirical),
        ("rejection-rate band, G=50 T=100 rho=0.25", Duration::from_secs(1200), row_one_band),
        ("null calibration", Duration::from_secs(300), null_calibration),
        ("CLT check", Duration::from_secs(300), clt),
        ("simulate determinism across threads", Duration::from_secs(300), determinism),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let o = run();
        let took = start.elapsed();
        let over = if took > budget { " OVER BUDGET" } else { "" };
        if !o.passed {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.2}s / {}s{over}]",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("{} criteria, {failed} failed", criteria.len());
    if let Some(line) = portfolio_ordering() {
        println!("{line}");
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn series_gap() -> Outcome {
    let (d1, _) = series_mean_gap(&[0.5, -1.0, 0.5]).unwrap();
    let exact = (d1 + 0.5).abs() <= f64::EPSILON;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut min_d2 = f64::INFINITY;
    for _ in 0..10_000 {
        let m: [f64; 3] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
        min_d2 = min_d2.min(series_mean_gap(&m).unwrap().1);
    }
    outcome(exact && min_d2 >= 0.0, format!("D1 = {d1}, min D2 over 10^4 triples = {min_d2:.4}"))
}

fn mean_table() -> Outcome {
    let gap = chs_mean_gap(&COUNTEREXAMPLE_MEANS, EstimandStrategy::DoubleSum).unwrap();
    let d = mean_decomposition(&COUNTEREXAMPLE_MEANS, 1);
    let terms = [d.cluster, d.time, d.cell, d.serial, d.within_cluster_serial];
    outcome(
        gap == STATED_TABLE_GAP && terms == STATED_TABLE_TERMS,
        format!("gap {gap} (want {STATED_TABLE_GAP}), terms {terms:?} (want {STATED_TABLE_TERMS:?})"),
    )
}

fn closed_form() -> Outcome {
    let mut bad = Vec::new();
    for t in 2..=10 {
        let d = ComponentDgp::unit(PanelIndex::balanced(t, t), 0.0).unwrap();
        let v = v_true(&d, EstimandStrategy::DoubleSum).unwrap().get(0, 0);
        if v != stated_closed_form(t) {
            bad.push(format!("T={t}: {v} vs {}", stated_closed_form(t)));
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            "T = 2..10 all equal 2T^3-3T^2".to_string()
        } else {
            format!("{} of 9 differ from 2T^3-3T^2 ({})", bad.len(), bad.join("; "))
        },
    )
}

fn psd_suite() -> Outcome {
    let t = psd_trials(200, 2024).unwrap();
    outcome(
        t.passed == t.trials,
        format!("{}/{} PSD, worst min_eig/||v_con|| = {:.3e}", t.passed, t.trials, t.worst_relative_eig),
    )
}

fn ratio_trend() -> Outcome {
    let mut dist = Vec::new();
    for t in [5usize, 10, 20, 40] {
        let d = ComponentDgp::unit(PanelIndex::balanced(t, t), 0.5).unwrap();
        let m = (t as f64).cbrt().ceil() as usize;
        let r = psd_gap_report(&d, &KernelSpec::uniform(m), EstimandStrategy::Factorized).unwrap();
        dist.push(r.ratio_distance.expect("v_true nonsingular"));
    }
    let decreasing = dist.windows(2).all(|w| w[1] < w[0]);
    let last = *dist.last().unwrap();
    outcome(
        decreasing && last < 0.15,
        format!("distances {:?} at T = 5, 10, 20, 40", dist.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>()),
    )
}

fn random_panel(rng: &mut ChaCha8Rng, max_n: usize) -> (PanelIndex, ScoreMatrix) {
    let g = rng.random_range(1..=25i64);
    let t = rng.random_range(1..=25i64);
    let n = rng.random_range(1..=max_n);
    let records: Vec<(i64, i64)> = (0..n)
        .map(|_| (rng.random_range(1..=g), rng.random_range(1..=t)))
        .collect();
    let p = PanelIndex::new(&records).unwrap();
    let dim = rng.random_range(1..=3usize);
    let data = (0..n * dim).map(|_| rng.random_range(-2.0..2.0) + 0.5).collect();
    (p, ScoreMatrix::new(dim, data).unwrap())
}

fn random_kernel(rng: &mut ChaCha8Rng, p: &PanelIndex) -> KernelSpec {
    let kind = if rng.random_bool(0.5) {
        KernelKind::Triangular
    } else {
        KernelKind::Uniform
    };
    KernelSpec::new(kind, rng.random_range(0..p.num_periods()))
}

fn brute_force_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut choices: Vec<EstimatorChoice> = Method::ALL.iter().copied().map(EstimatorChoice::new).collect();
    choices.push(EstimatorChoice::chs_dropped());
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p, s) = random_panel(&mut rng, 500);
        let k = random_kernel(&mut rng, &p);
        for &c in &choices {
            let fast = estimate(&p, &s, c, Some(&k)).unwrap().matrix;
            let slow = brute_force(&p, &s, c, Some(&k)).unwrap();
            let scale = slow.max_abs().max(f64::MIN_POSITIVE);
            worst = worst.max(fast.sub(&slow).max_abs() / scale);
        }
    }
    outcome(worst <= 1e-10, format!("100 panels x 7 estimators, worst relative gap {worst:.2e}"))
}

fn in_sample_psd() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let mut worst = f64::INFINITY;
    let mut bad = 0;
    for _ in 0..10_000 {
        let (p, s) = random_panel(&mut rng, 60);
        let k = random_kernel(&mut rng, &p);
        let v = estimate(&p, &s, EstimatorChoice::new(Method::Hm), Some(&k)).unwrap().matrix;
        let norm = v.spectral_norm().unwrap();
        let eig = sym_eigen_min(&v).unwrap();
        let rel = if norm > 0.0 { eig / norm } else { eig };
        worst = worst.min(rel);
        if eig < -1e-10 * norm {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad}/10000 violations, worst min_eig/norm = {worst:.3e}"))
}

fn oracle_vs_empirical() -> Outcome {
    let d = ComponentDgp::unit(PanelIndex::balanced(5, 5), 0.5).unwrap();
    let c = empirical_sum_variance(&d, 100_000, 4242, 0).unwrap();
    let z = c.z_score();
    outcome(
        z.abs() <= 3.0,
        format!("oracle {:.4}, empirical {:.4} (se {:.4}, z = {z:.2})", c.oracle, c.empirical, c.standard_error),
    )
}

fn row_one_band() -> Outcome {
    let r = run_monte_carlo(&SimulationConfig::default(), 0).unwrap();
    let rate = |m| r.method(EstimatorChoice::new(m)).unwrap().rate;
    let (hm, chs, cgm, ehw) = (rate(Method::Hm), rate(Method::Chs), rate(Method::Cgm), rate(Method::Ehw));
    let ok = hm <= 0.03 && (0.04..=0.09).contains(&chs) && (0.04..=0.10).contains(&cgm) && (0.62..=0.73).contains(&ehw);
    outcome(
        ok,
        format!("R=1000: HM {hm:.3} (<= 0.03), CHS {chs:.3} [0.04, 0.09], CGM {cgm:.3} [0.04, 0.10], EHW {ehw:.3} [0.62, 0.73]"),
    )
}

fn null_calibration() -> Outcome {
    let c = SimulationConfig {
        clusters: 40,
        periods: 40,
        rho: 0.0,
        w_alpha: 0.0,
        w_gamma: 0.0,
        het_pattern: HetPattern::None,
        replications: 5000,
        ..Default::default()
    };
    let r = run_monte_carlo(&c, 0).unwrap();
    let se = (c.alpha_level * (1.0 - c.alpha_level) / c.replications as f64).sqrt();
    let mut parts = Vec::new();
    let mut ok = true;
    for m in &r.methods {
        let inside = (m.rate - c.alpha_level).abs() <= 3.0 * se;
        ok &= inside;
        parts.push(format!("{} {:.4}{}", m.method, m.rate, if inside { "" } else { "*" }));
    }
    outcome(
        ok,
        format!("G=T=40, R=5000, band 0.05 +- {:.4}: {}", 3.0 * se, parts.join(", ")),
    )
}

fn clt() -> Outcome {
    let c = SimulationConfig {
        clusters: 30,
        periods: 30,
        rho: 0.5,
        ..Default::default()
    };
    let r = clt_check(&c, 2000, 0).unwrap();
    outcome(r.ks_distance < 0.06, format!("KS = {:.4} with R = 2000", r.ks_distance))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"defaults": {"clusters": 20, "periods": 30, "replications": 60},
            "rows": [{"label": "a"}, {"label": "b", "rho": 0.75}]}"#,
    )
    .unwrap();
    let run = |threads: usize, tag: &str| -> (String, Vec<u8>, Vec<u8>) {
        let json = dir.path().join(format!("{tag}.json"));
        let csv = dir.path().join(format!("{tag}.csv"));
        let o = cmd_simulate(&SimulateOptions {
            seed: Some(31337),
            threads,
            out: Some(json.clone()),
            csv: Some(csv.clone()),
            ..SimulateOptions::new(&cfg)
        })
        .unwrap();
        (o.stdout, std::fs::read(json).unwrap(), std::fs::read(csv).unwrap())
    };
    let one = run(1, "one");
    let eight = run(8, "eight");
    outcome(one == eight, format!("1 vs 8 threads, {} report bytes", one.1.len()))
}

fn portfolio_ordering() -> Option<String> {
    let Ok(path) = std::env::var("HETVAR_PORTFOLIO_CSV") else {
        return Some("SKIP portfolio SE ordering: HETVAR_PORTFOLIO_CSV not set".into());
    };
    let opts = EstimateOptions {
        within: true,
        ..EstimateOptions::new(Path::new(&path))
    };
    let r = match run_estimate(&opts) {
        Ok(r) => r,
        Err(e) => return Some(format!("FAIL portfolio SE ordering: {e}")),
    };
    let hm = r.method(EstimatorChoice::new(Method::Hm));
    let chs = r.method(EstimatorChoice::new(Method::Chs));
    Some(match (hm, chs) {
        (Some(hm), Some(chs)) => {
            let ok = hm.coefficients.iter().zip(&chs.coefficients).all(|(a, b)| a.se >= b.se);
            format!("{} portfolio SE ordering: HM >= CHS for every coefficient", if ok { "PASS" } else { "FAIL" })
        }
        _ => "FAIL portfolio SE ordering: HM or CHS failed".into(),
    })
}
