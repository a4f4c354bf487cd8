//! The four subcommands. Each returns the text for standard output and an
//! exit code; `--out` reports are written atomically.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use hetvar::diagnostics::{assumption_values, default_lambda, AssumptionInputs, AssumptionValues, DependenceProfile};
use hetvar::estimators::{time_aggregate, EstimatorChoice, Method};
use hetvar::kernel::{andrews_bandwidth, KernelKind, KernelSpec};
use hetvar::panel::{default_alpha_grid, ConcentrationReport};
use hetvar::regression::{ols_fit, sandwich, BandwidthRule, InferenceResult};
use hetvar::simulation::{run_monte_carlo, RejectionReport};
use serde::Serialize;

use crate::checks::{self, CheckLine};
use crate::config::{ResolvedRow, RunConfig};
use crate::error::CliError;
use crate::panel_csv::read_panel_csv;
use crate::report::{atomic_write, Envelope, TextTable};

/// Text for standard output plus the process exit code.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub stdout: String,
    pub code: i32,
}

impl Outcome {
    fn ok(stdout: String) -> Self {
        Self { stdout, code: 0 }
    }
}

/// `auto` or a fixed bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthArg {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for BandwidthArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(BandwidthArg::Auto);
        }
        s.parse()
            .map(BandwidthArg::Fixed)
            .map_err(|_| format!("expected 'auto' or a non-negative integer, got '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InterceptMode {
    /// On unless the within transformation is requested.
    #[default]
    Auto,
    On,
    Off,
}

impl FromStr for InterceptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(InterceptMode::Auto),
            "on" | "yes" | "true" => Ok(InterceptMode::On),
            "off" | "no" | "false" => Ok(InterceptMode::Off),
            _ => Err(format!("expected auto, on or off, got '{s}'")),
        }
    }
}

impl InterceptMode {
    pub fn resolve(self, within: bool) -> bool {
        match self {
            InterceptMode::Auto => !within,
            InterceptMode::On => true,
            InterceptMode::Off => false,
        }
    }
}

fn write_out(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => atomic_write(p, contents.as_bytes()),
        None => Ok(()),
    }
}

fn fmt_num(v: f64) -> String {
    if v == 0.0 || (1e-4..1e6).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.4e}")
    }
}

// ---------------------------------------------------------------- estimate

#[derive(Debug, Clone, Serialize)]
pub struct EstimateOptions {
    pub csv: PathBuf,
    /// `None` selects EHW, CRg, CRt, CGM, CHS, CHS-drop and HM.
    pub methods: Option<Vec<EstimatorChoice>>,
    pub kernel: KernelKind,
    pub bandwidth: BandwidthArg,
    pub within: bool,
    pub intercept: InterceptMode,
    /// Use CHS without the within-cluster lag adjustment only.
    pub chs_drop_adjustment: bool,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl EstimateOptions {
    pub fn new(csv: impl Into<PathBuf>) -> Self {
        Self {
            csv: csv.into(),
            methods: None,
            kernel: KernelKind::Triangular,
            bandwidth: BandwidthArg::Auto,
            within: false,
            intercept: InterceptMode::Auto,
            chs_drop_adjustment: false,
            out: None,
        }
    }

    pub fn resolved_methods(&self) -> Vec<EstimatorChoice> {
        let base = self.methods.clone().unwrap_or_else(|| {
            let mut m = EstimatorChoice::standard_set();
            let at = m.iter().position(|c| c.method == Method::Chs).map_or(m.len(), |p| p + 1);
            m.insert(at, EstimatorChoice::chs_dropped());
            m
        });
        let mut out: Vec<EstimatorChoice> = Vec::new();
        for mut c in base {
            if self.chs_drop_adjustment && c.method == Method::Chs {
                c = EstimatorChoice::chs_dropped();
            }
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodOutcome {
    pub method: EstimatorChoice,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<InferenceResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub observations: usize,
    pub clusters: usize,
    pub periods: usize,
    pub intercept: bool,
    pub names: Vec<String>,
    pub beta_hat: Vec<f64>,
    /// Kernel used by the kernel methods; `None` when none was requested.
    pub kernel: Option<KernelSpec>,
    pub bandwidth_rule: &'static str,
    pub methods: Vec<MethodOutcome>,
}

impl EstimateReport {
    pub fn method(&self, choice: EstimatorChoice) -> Option<&InferenceResult> {
        self.methods.iter().find(|m| m.method == choice).and_then(|m| m.result.as_ref())
    }
}

pub fn run_estimate(opts: &EstimateOptions) -> Result<EstimateReport, CliError> {
    let methods = opts.resolved_methods();
    if methods.is_empty() {
        return Err(CliError::usage("no methods selected"));
    }
    let data = read_panel_csv(&opts.csv)?;
    let intercept = opts.intercept.resolve(opts.within);
    let design = data.design(opts.within, intercept)?;
    if design.num_regressors() == 0 {
        return Err(CliError::Data("no regressors: add x columns or an intercept".into()));
    }
    let fit = ols_fit(&design).map_err(CliError::data)?;
    let periods = fit.panel.num_periods();

    let kernel = if methods.iter().any(|m| m.method.uses_kernel()) {
        Some(match opts.bandwidth {
            BandwidthArg::Fixed(m) => {
                if m >= periods.max(1) && m > 0 {
                    return Err(CliError::Usage(format!(
                        "bandwidth {m} must be below the number of periods {periods}"
                    )));
                }
                KernelSpec::new(opts.kernel, m)
            }
            BandwidthArg::Auto => {
                let y = time_aggregate(&fit.panel, &fit.scores).map_err(CliError::data)?;
                let choice = andrews_bandwidth(&y.y).map_err(CliError::data)?;
                KernelSpec::new(opts.kernel, choice.bandwidth)
            }
        })
    } else {
        None
    };

    let outcomes = methods
        .iter()
        .map(|&m| {
            let rule = BandwidthRule::Fixed(kernel.unwrap_or(KernelSpec::new(opts.kernel, 0)));
            match sandwich(&fit, m, rule) {
                Ok(r) => MethodOutcome {
                    method: m,
                    status: "ok",
                    error: None,
                    result: Some(r),
                },
                Err(e) => MethodOutcome {
                    method: m,
                    status: "failed",
                    error: Some(e.to_string()),
                    result: None,
                },
            }
        })
        .collect();

    Ok(EstimateReport {
        observations: fit.panel.n(),
        clusters: fit.panel.num_clusters(),
        periods,
        intercept,
        names: fit.names.clone(),
        beta_hat: fit.beta_hat.clone(),
        kernel,
        bandwidth_rule: match opts.bandwidth {
            BandwidthArg::Auto => "auto",
            BandwidthArg::Fixed(_) => "fixed",
        },
        methods: outcomes,
    })
}

pub fn render_estimate(r: &EstimateReport) -> String {
    let mut header = vec!["coefficient".to_string(), "estimate".to_string()];
    header.extend(r.methods.iter().map(|m| format!("SE({})", m.method)));
    let mut t = TextTable::new(header);
    for (c, name) in r.names.iter().enumerate() {
        let mut row = vec![name.clone(), fmt_num(r.beta_hat[c])];
        for m in &r.methods {
            row.push(match &m.result {
                Some(res) => fmt_num(res.coefficients[c].se),
                None => "failed".into(),
            });
        }
        t.push(row);
    }
    let mut s = format!(
        "observations {}  clusters {}  periods {}\n",
        r.observations, r.clusters, r.periods
    );
    if let Some(k) = r.kernel {
        s.push_str(&format!("kernel {}  M = {} ({})\n", k.kind, k.bandwidth, r.bandwidth_rule));
    }
    s.push('\n');
    s.push_str(&t.render());
    for m in &r.methods {
        if let Some(e) = &m.error {
            s.push_str(&format!("{}: failed: {e}\n", m.method));
        }
    }
    s
}

pub fn cmd_estimate(opts: &EstimateOptions) -> Result<Outcome, CliError> {
    let report = run_estimate(opts)?;
    if let Some(out) = &opts.out {
        write_out(Some(out), &Envelope::new("estimate", opts, &report).to_json()?)?;
    }
    let code = if report.methods.iter().any(|m| m.result.is_some()) {
        0
    } else {
        CliError::DATA
    };
    Ok(Outcome {
        stdout: render_estimate(&report),
        code,
    })
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub config: PathBuf,
    pub reps: Option<usize>,
    /// Already merged with the environment override.
    pub seed: Option<u64>,
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl SimulateOptions {
    pub fn new(config: impl Into<PathBuf>) -> Self {
        Self {
            config: config.into(),
            reps: None,
            seed: None,
            threads: 0,
            out: None,
            csv: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RowReport {
    pub label: String,
    pub report: RejectionReport,
}

#[derive(Debug, Serialize)]
struct SimulateEcho<'a> {
    config_path: &'a Path,
    name: Option<&'a str>,
    replications_override: Option<usize>,
    seed_override: Option<u64>,
    rows: &'a [ResolvedRow],
}

/// Column order: methods in order of first appearance across rows.
fn method_columns(rows: &[RowReport]) -> Vec<EstimatorChoice> {
    let mut cols = Vec::new();
    for r in rows {
        for m in &r.report.methods {
            if !cols.contains(&m.method) {
                cols.push(m.method);
            }
        }
    }
    cols
}

pub fn rejection_table(rows: &[RowReport]) -> TextTable {
    let cols = method_columns(rows);
    let mut header: Vec<String> = ["row", "N", "T", "rho"].map(String::from).to_vec();
    header.extend(cols.iter().map(|c| c.label()));
    header.push("mean M".into());
    let mut t = TextTable::new(header);
    for r in rows {
        let c = &r.report.config;
        let mut row = vec![
            r.label.clone(),
            c.clusters.to_string(),
            c.periods.to_string(),
            format!("{}", c.rho),
        ];
        for col in &cols {
            row.push(r.report.method(*col).map_or("-".into(), |m| format!("{:.3}", m.rate)));
        }
        row.push(r.report.mean_bandwidth.map_or("-".into(), |m| format!("{m:.2}")));
        t.push(row);
    }
    t
}

pub fn run_simulate(opts: &SimulateOptions) -> Result<(RunConfig, Vec<ResolvedRow>, Vec<RowReport>), CliError> {
    let cfg = RunConfig::load(&opts.config)?;
    let rows = cfg.resolve(&opts.config, opts.reps, opts.seed)?;
    let reports = rows
        .iter()
        .map(|row| {
            let report = run_monte_carlo(&row.config, opts.threads).map_err(CliError::data)?;
            Ok(RowReport {
                label: row.label.clone(),
                report,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok((cfg, rows, reports))
}

pub fn cmd_simulate(opts: &SimulateOptions) -> Result<Outcome, CliError> {
    let (cfg, rows, reports) = run_simulate(opts)?;
    let table = rejection_table(&reports);
    let base = opts.config.parent().unwrap_or(Path::new(""));
    let json_path = opts.out.clone().or_else(|| cfg.output.json.as_ref().map(|p| base.join(p)));
    let csv_path = opts.csv.clone().or_else(|| cfg.output.csv.as_ref().map(|p| base.join(p)));
    if let Some(p) = json_path {
        let echo = SimulateEcho {
            config_path: &opts.config,
            name: cfg.name.as_deref(),
            replications_override: opts.reps,
            seed_override: opts.seed,
            rows: &rows,
        };
        write_out(Some(&p), &Envelope::new("simulate", &echo, &reports).to_json()?)?;
    }
    if let Some(p) = csv_path {
        write_out(Some(&p), &table.to_csv()?)?;
    }
    let mut s = String::new();
    if let Some(name) = &cfg.name {
        s.push_str(&format!("{name}\n"));
    }
    let seeds: Vec<String> = rows.iter().map(|r| r.config.master_seed.to_string()).collect();
    s.push_str(&format!(
        "rejection rates at nominal level {}, seed {}\n\n",
        rows[0].config.alpha_level,
        if seeds.iter().all(|x| *x == seeds[0]) {
            seeds[0].clone()
        } else {
            seeds.join(",")
        }
    ));
    s.push_str(&table.render());
    Ok(Outcome::ok(s))
}

// ---------------------------------------------------------------- check

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExampleSet {
    #[default]
    All,
    One,
    Three,
    Four,
    None,
}

impl FromStr for ExampleSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(ExampleSet::All),
            "1" => Ok(ExampleSet::One),
            "3" => Ok(ExampleSet::Three),
            "4" => Ok(ExampleSet::Four),
            "none" => Ok(ExampleSet::None),
            _ => Err(format!("expected all, 1, 3, 4 or none, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub examples: ExampleSet,
    pub props: bool,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            examples: ExampleSet::All,
            props: false,
            seed: checks::CHECK_SEED,
            out: None,
        }
    }
}

pub fn run_checks(opts: &CheckOptions) -> Result<Vec<CheckLine>, CliError> {
    let mut lines = Vec::new();
    let e = opts.examples;
    if matches!(e, ExampleSet::All | ExampleSet::One) {
        lines.extend(checks::series_gap_checks(opts.seed)?);
    }
    if matches!(e, ExampleSet::All | ExampleSet::Three) {
        lines.extend(checks::mean_table_checks()?);
    }
    if matches!(e, ExampleSet::All | ExampleSet::Four) {
        lines.extend(checks::closed_form_checks()?);
    }
    if opts.props {
        lines.push(checks::psd_check(checks::PSD_TRIALS, opts.seed)?);
    }
    Ok(lines)
}

pub fn cmd_check(opts: &CheckOptions) -> Result<Outcome, CliError> {
    let lines = run_checks(opts)?;
    if lines.is_empty() {
        return Err(CliError::usage("nothing to check: select examples or --props"));
    }
    if let Some(out) = &opts.out {
        #[derive(Serialize)]
        struct Echo {
            seed: u64,
            props: bool,
        }
        let echo = Echo {
            seed: opts.seed,
            props: opts.props,
        };
        write_out(Some(out), &Envelope::new("check", &echo, &lines).to_json()?)?;
    }
    let failed = lines.iter().filter(|l| !l.passed).count();
    let mut s: String = lines.iter().map(|l| l.render() + "\n").collect();
    s.push_str(&format!("{} passed, {failed} failed\n", lines.len() - failed));
    Ok(Outcome {
        stdout: s,
        code: if failed == 0 { 0 } else { CliError::CHECK },
    })
}

// ---------------------------------------------------------------- diagnose

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseOptions {
    pub csv: PathBuf,
    pub s_max: usize,
    pub m: Vec<usize>,
    pub k: Vec<f64>,
    pub alpha_grid: Option<Vec<f64>>,
    /// Decay of the dependence coefficients; enables the assumption values.
    pub theta_rho: Option<f64>,
    pub p: f64,
    pub lambda: Option<f64>,
    pub kernel: KernelKind,
    /// Kernel bandwidth for the variance expressions; defaults to the
    /// largest window end.
    pub bandwidth: Option<usize>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl DiagnoseOptions {
    pub fn new(csv: impl Into<PathBuf>) -> Self {
        Self {
            csv: csv.into(),
            s_max: 2,
            m: vec![2],
            k: vec![1.0, 2.0],
            alpha_grid: None,
            theta_rho: None,
            p: 8.0,
            lambda: None,
            kernel: KernelKind::Triangular,
            bandwidth: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub window_end: usize,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub lambda_source: &'static str,
    pub values: AssumptionValues,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnoseReport {
    pub observations: usize,
    pub clusters: usize,
    pub periods: usize,
    pub concentration: ConcentrationReport,
    pub assumptions: Vec<AssumptionReport>,
}

pub fn run_diagnose(opts: &DiagnoseOptions) -> Result<DiagnoseReport, CliError> {
    if opts.m.is_empty() || opts.k.is_empty() {
        return Err(CliError::usage("--m and --k need at least one value"));
    }
    if let Some(&k) = opts.k.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
        return Err(CliError::Usage(format!("--k values must be positive, got {k}")));
    }
    let grid = opts.alpha_grid.clone().unwrap_or_else(default_alpha_grid);
    if grid.is_empty() || grid.iter().any(|&a| !(a > 1.0 && a.is_finite())) {
        return Err(CliError::usage("--alpha-grid values must exceed 1"));
    }
    if let Some(rho) = opts.theta_rho {
        if !(0.0..1.0).contains(&rho) {
            return Err(CliError::Usage(format!("--theta-rho must lie in [0, 1), got {rho}")));
        }
        if !(opts.p > 4.0 && opts.p.is_finite()) {
            return Err(CliError::Usage(format!("--p must exceed 4, got {}", opts.p)));
        }
        if let Some(l) = opts.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(CliError::Usage(format!("--lambda must be positive, got {l}")));
            }
        }
    }
    let data = read_panel_csv(&opts.csv)?;
    let panel = data.panel()?;
    let periods = panel.num_periods();
    if opts.s_max >= periods.max(1) && opts.s_max > 0 {
        return Err(CliError::Usage(format!(
            "--s-max {} must be below the number of periods {periods}",
            opts.s_max
        )));
    }
    if let Some(&m) = opts.m.iter().find(|&&m| m >= periods && m > 0) {
        return Err(CliError::Usage(format!(
            "--m {m} must be below the number of periods {periods}"
        )));
    }
    let concentration = panel
        .concentration_report(opts.s_max, &opts.m, &opts.k, &grid)
        .map_err(CliError::usage)?;

    let mut assumptions = Vec::new();
    if let Some(rho) = opts.theta_rho {
        let profile = DependenceProfile::from_decay(rho).map_err(CliError::usage)?;
        let big_m = opts.bandwidth.unwrap_or_else(|| *opts.m.iter().max().expect("non-empty"));
        if big_m > 0 && big_m >= periods {
            return Err(CliError::Usage(format!(
                "--bandwidth {big_m} must be below the number of periods {periods}"
            )));
        }
        let (lambda, lambda_source) = match opts.lambda {
            Some(l) => (l, "user"),
            None => (default_lambda(&panel, rho).map_err(CliError::data)?, "unit-component"),
        };
        if !(lambda > 0.0) {
            return Err(CliError::Data(format!(
                "default lambda is {lambda}; supply --lambda"
            )));
        }
        let kernel = KernelSpec::new(opts.kernel, big_m);
        for &m in &opts.m {
            let inputs = AssumptionInputs {
                profile,
                p: opts.p,
                lambda,
                m,
                kernel,
                alpha_grid: grid.clone(),
            };
            let values = assumption_values(&panel, &inputs).map_err(CliError::usage)?;
            assumptions.push(AssumptionReport {
                window_end: m,
                kernel,
                lambda,
                lambda_source,
                values,
            });
        }
    }
    Ok(DiagnoseReport {
        observations: panel.n(),
        clusters: panel.num_clusters(),
        periods,
        concentration,
        assumptions,
    })
}

pub fn render_diagnose(r: &DiagnoseReport) -> String {
    let mut s = format!(
        "observations {}  clusters {}  periods {}\n\nboundary counts delta(s;k)\n",
        r.observations, r.clusters, r.periods
    );
    let mut t = TextTable::new(["s", "k", "delta"]);
    for v in &r.concentration.delta_boundary {
        t.push([v.s.to_string(), format!("{}", v.k), fmt_num(v.value)]);
    }
    s.push_str(&t.render());
    s.push_str("\nwindow counts Delta(s,m;k) and neighborhood cost c(s,m;k)\n");
    let mut t = TextTable::new(["s", "m", "k", "Delta", "c"]);
    for (w, c) in r.concentration.delta_window.iter().zip(&r.concentration.cost) {
        t.push([
            w.s.to_string(),
            w.m.to_string(),
            format!("{}", w.k),
            fmt_num(w.value),
            fmt_num(c.value),
        ]);
    }
    s.push_str(&t.render());
    if let Some(first) = r.assumptions.first() {
        s.push_str(&format!(
            "\nregularity expressions (kernel {}, M = {}, lambda = {} [{}])\n",
            first.kernel.kind,
            first.kernel.bandwidth,
            fmt_num(first.lambda),
            first.lambda_source
        ));
        let mut t = TextTable::new(["m", "clt_a(k=1)", "clt_a(k=2)", "clt_b", "con", "adj_a", "adj_b", "adj_c"]);
        for a in &r.assumptions {
            let v = a.values;
            t.push([
                a.window_end.to_string(),
                fmt_num(v.clt_a_k1),
                fmt_num(v.clt_a_k2),
                fmt_num(v.clt_b),
                fmt_num(v.con),
                fmt_num(v.adj_a),
                fmt_num(v.adj_b),
                fmt_num(v.adj_c),
            ]);
        }
        s.push_str(&t.render());
    }
    s
}

pub fn cmd_diagnose(opts: &DiagnoseOptions) -> Result<Outcome, CliError> {
    let report = run_diagnose(opts)?;
    if let Some(out) = &opts.out {
        write_out(Some(out), &Envelope::new("diagnose", opts, &report).to_json()?)?;
    }
    Ok(Outcome::ok(render_diagnose(&report)))
}
