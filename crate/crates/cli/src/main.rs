use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hetvar::estimators::EstimatorChoice;
use hetvar::kernel::KernelKind;
use hetvar_cli::commands::{
    cmd_check, cmd_diagnose, cmd_estimate, cmd_simulate, BandwidthArg, CheckOptions, DiagnoseOptions,
    EstimateOptions, ExampleSet, InterceptMode, Outcome, SimulateOptions,
};
use hetvar_cli::{checks, seed_override, CliError, SEED_ENV};

#[derive(Parser)]
#[command(name = "hetvar", version, about = "Variance estimation for two-way clustered panels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// OLS with standard errors from each variance estimator.
    Estimate {
        /// Panel CSV with columns g, t, y and regressors.
        csv: PathBuf,
        /// Comma-separated methods (EHW, CRg, CRt, CGM, CHS, CHS-drop, HM).
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<EstimatorChoice>>,
        #[arg(long, default_value = "triangular")]
        kernel: KernelKind,
        /// `auto` or a fixed bandwidth M.
        #[arg(long, default_value = "auto")]
        bandwidth: BandwidthArg,
        /// Remove cluster and period fixed effects first.
        #[arg(long)]
        within: bool,
        /// auto (on unless --within), on or off.
        #[arg(long, default_value = "auto")]
        intercept: InterceptMode,
        /// Report CHS without the within-cluster lag adjustment only.
        #[arg(long)]
        chs_drop_adjustment: bool,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo rejection rates for each row of a campaign config.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        /// Master seed; overrides HETVAR_SEED and the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 for all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV rejection table path.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Analytic checks of the population estimands.
    Check {
        /// all, 1, 3, 4 or none.
        #[arg(long, default_value = "all")]
        examples: ExampleSet,
        /// Add the randomized PSD trials.
        #[arg(long)]
        props: bool,
        #[arg(long, default_value_t = checks::CHECK_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Concentration measures of a panel layout and regularity expressions.
    Diagnose {
        /// Panel CSV; only g and t are needed.
        csv: PathBuf,
        #[arg(long, default_value_t = 2)]
        s_max: usize,
        /// Comma-separated window ends.
        #[arg(long, value_delimiter = ',', default_value = "2")]
        m: Vec<usize>,
        /// Comma-separated exponents.
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        k: Vec<f64>,
        /// Comma-separated Hoelder exponents (each > 1).
        #[arg(long, value_delimiter = ',')]
        alpha_grid: Option<Vec<f64>>,
        /// Dependence decay: theta_s = rho^s.
        #[arg(long)]
        theta_rho: Option<f64>,
        /// Moment order (> 4).
        #[arg(long, default_value_t = 8.0)]
        p: f64,
        /// Variance scale; defaults to the unit-component value.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value = "triangular")]
        kernel: KernelKind,
        /// Bandwidth for the variance expressions (default: largest --m).
        #[arg(long)]
        bandwidth: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Estimate {
            csv,
            methods,
            kernel,
            bandwidth,
            within,
            intercept,
            chs_drop_adjustment,
            out,
        } => cmd_estimate(&EstimateOptions {
            csv,
            methods,
            kernel,
            bandwidth,
            within,
            intercept,
            chs_drop_adjustment,
            out,
        }),
        Command::Simulate {
            config,
            reps,
            seed,
            threads,
            out,
            csv,
        } => {
            let env = std::env::var(SEED_ENV).ok();
            cmd_simulate(&SimulateOptions {
                config,
                reps,
                seed: seed_override(seed, env.as_deref())?,
                threads,
                out,
                csv,
            })
        }
        Command::Check {
            examples,
            props,
            seed,
            out,
        } => cmd_check(&CheckOptions {
            examples,
            props,
            seed,
            out,
        }),
        Command::Diagnose {
            csv,
            s_max,
            m,
            k,
            alpha_grid,
            theta_rho,
            p,
            lambda,
            kernel,
            bandwidth,
            out,
        } => cmd_diagnose(&DiagnoseOptions {
            csv,
            s_max,
            m,
            k,
            alpha_grid,
            theta_rho,
            p,
            lambda,
            kernel,
            bandwidth,
            out,
        }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { CliError::USAGE as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(o) => {
            print!("{}", o.stdout);
            ExitCode::from(o.code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
