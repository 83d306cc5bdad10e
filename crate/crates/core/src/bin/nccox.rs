use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nccox::bounds::{
    breslow_covariance_omega, effective_information, effective_information_limit,
    survival_bound_kstar, BoundsInput,
};
use nccox::estimators::{breslow, fit_mple, mple_asymptotic_variance, MpleOptions};
use nccox::experiment::{emit_report, run_mc_experiment, ExperimentSpec};
use nccox::io::{format_float, parse_grid, read_config, read_dataset, serialize_dataset, write_text};
use nccox::model::{validate_config, ModelConfig};
use nccox::operators::{identity_suite, QuadratureScheme, SchemeOptions, SuiteOptions};
use nccox::sampler::simulate_dataset;
use nccox::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_VERIFY: u8 = 3;
const WORKERS_ENV: &str = "NCCOX_WORKERS";

#[derive(Parser)]
#[command(name = "nccox", version, about = "Nested case-control Cox model: simulation, estimation and efficiency bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Proceed even if the configuration raises validation warnings.
    #[arg(long)]
    allow_warnings: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset of independent groups.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of groups.
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Fit the partial likelihood and the Breslow estimator to a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Tabulate the efficiency bounds.
    Bounds {
        #[command(flatten)]
        common: Common,
        /// Covariance grid as `s:t,s:t,...`.
        #[arg(long, default_value = "")]
        grid: String,
    },
    /// Run the operator identity suite.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        directions: usize,
    },
    /// Monte Carlo calibration of the estimators against the bounds.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 400)]
        replications: usize,
        /// Covariance grid as `s:t,s:t,...`.
        #[arg(long, default_value = "1:1")]
        grid: String,
    },
}

enum Failure {
    Error(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Parse { .. } | Error::Degenerate(_) => {
            EXIT_VALIDATION
        }
        _ => EXIT_FAILURE,
    }
}

fn configure_workers() -> Result<(), Error> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let workers: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&w| w > 0)
        .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn load_config(common: &Common) -> Result<ModelConfig, Error> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let config = read_config(path)?;
    let report = validate_config(&config)?;
    eprint!("{report}");
    if !report.is_clean() && !common.allow_warnings {
        return Err(Error::Config(
            "configuration raises warnings; rerun with --allow-warnings to proceed".into(),
        ));
    }
    Ok(config)
}

fn prepare_out(dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_out(dir: &Path, name: &str, text: &str) -> Result<(), Error> {
    let path = dir.join(name);
    write_text(&path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn simulate(common: &Common, n: usize) -> Outcome {
    let config = load_config(common)?;
    let dataset = simulate_dataset(&config, n, common.seed)?;
    prepare_out(&common.out)?;
    write_out(&common.out, "dataset.csv", &serialize_dataset(&dataset))?;
    Ok(())
}

fn fit(common: &Common, data: &Path) -> Outcome {
    let dataset = read_dataset(data)?;
    if common.config.is_some() {
        let config = load_config(common)?;
        if config.fingerprint() != dataset.fingerprint() {
            return Err(Error::Config("dataset was not simulated from this configuration".into()).into());
        }
    }
    let fit = fit_mple(&dataset, &MpleOptions::default())?;
    let estimate = breslow(&dataset, fit.theta_hat)?;

    let f = format_float;
    let mut summary = String::from("statistic,value\n");
    let _ = writeln!(summary, "theta_hat,{}", f(fit.theta_hat));
    let _ = writeln!(summary, "standard_error,{}", f(fit.standard_error));
    let _ = writeln!(summary, "iterations,{}", fit.iterations);
    let _ = writeln!(summary, "score,{}", f(fit.score));
    let _ = writeln!(summary, "information,{}", f(fit.information));
    let _ = writeln!(summary, "ties,{}", estimate.ties);

    let mut steps = String::from("t,cumhaz,survival\n");
    let _ = writeln!(steps, "{},{},{}", f(0.0), f(0.0), f(1.0));
    let jumps = estimate.cumulative_hazard.jump_times();
    let values = estimate.cumulative_hazard.values();
    for ((t, h), s) in jumps.iter().zip(values).zip(estimate.survival.values()) {
        let _ = writeln!(steps, "{},{},{}", f(*t), f(*h), f(*s));
    }
    prepare_out(&common.out)?;
    write_out(&common.out, "fit.csv", &summary)?;
    write_out(&common.out, "breslow.csv", &steps)?;
    println!("theta_hat = {:.6} (se {:.6}, {} iterations)", fit.theta_hat, fit.standard_error, fit.iterations);
    Ok(())
}

fn bounds(common: &Common, grid: &str) -> Outcome {
    let config = load_config(common)?;
    let grid = parse_grid(grid)?;
    let input = BoundsInput::from_config(&config);
    let info = effective_information(&input);
    let limit = effective_information_limit(config.m, input.var_z);
    let sigma2 = mple_asymptotic_variance(config.m, input.var_z)?;

    let f = format_float;
    let mut out = String::from("statistic,value\n");
    let _ = writeln!(out, "effective_information,{}", f(info));
    let _ = writeln!(out, "effective_information_limit,{}", f(limit));
    let _ = writeln!(out, "inv_information,{}", f(1.0 / info));
    let _ = writeln!(out, "sigma2_mple,{}", f(sigma2));
    let _ = writeln!(out, "efficiency_ratio,{}", f(1.0 / (info * sigma2)));
    if !grid.is_empty() {
        out.push_str("\ns,t,kstar,omega\n");
        for (s, t) in grid {
            let kstar = survival_bound_kstar(s, t, &input)?;
            let omega = breslow_covariance_omega(s, t, &input)?;
            let _ = writeln!(out, "{},{},{},{}", f(s), f(t), f(kstar), f(omega));
        }
    }
    prepare_out(&common.out)?;
    write_out(&common.out, "bounds.csv", &out)?;
    print!("{out}");
    Ok(())
}

fn verify(common: &Common, directions: usize) -> Outcome {
    let config = load_config(common)?;
    let scheme = QuadratureScheme::new(&config, &SchemeOptions::default())?;
    let options = SuiteOptions { directions, seed: common.seed, ..SuiteOptions::default() };
    let checks = identity_suite(&scheme, &options)?;

    let mut csv = String::from("check,residual,tolerance,status\n");
    let mut text = format!("identity suite: {directions} directions, seed {}\n", common.seed);
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &checks {
        let status = if c.passed() { "PASS" } else { "FAIL" };
        let _ = writeln!(csv, "{},{},{},{status}", c.name, format_float(c.residual), format_float(c.tolerance));
        let _ = writeln!(text, "{status}  {:<width$}  {:>10.3e}  (tol {:.0e})", c.name, c.residual, c.tolerance);
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    let _ = writeln!(text, "{} of {} checks passed", checks.len() - failed, checks.len());
    prepare_out(&common.out)?;
    write_out(&common.out, "verify.csv", &csv)?;
    write_out(&common.out, "verify.txt", &text)?;
    print!("{text}");
    if failed > 0 {
        return Err(Failure::Verify(format!("{failed} identity checks failed")));
    }
    Ok(())
}

fn mc(common: &Common, n: usize, replications: usize, grid: &str) -> Outcome {
    let config = load_config(common)?;
    let spec = ExperimentSpec {
        config,
        n,
        replications,
        seed: common.seed,
        grid: parse_grid(grid)?,
        allow_warnings: common.allow_warnings,
        options: MpleOptions::default(),
    };
    let report = run_mc_experiment(&spec)?;
    let (csv, text) = emit_report(&report, &common.out)?;
    eprintln!("wrote {}", csv.display());
    eprintln!("wrote {}", text.display());
    if report.summary.separation_flagged {
        eprintln!(
            "warning: {} of {} replications hit a monotone likelihood",
            report.summary.rows.separations, report.replications
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_workers().map_err(Failure::from).and_then(|()| match &cli.command {
        Command::Simulate { common, n } => simulate(common, *n),
        Command::Fit { common, data } => fit(common, data),
        Command::Bounds { common, grid } => bounds(common, grid),
        Command::Verify { common, directions } => verify(common, *directions),
        Command::Mc { common, n, replications, grid } => mc(common, *n, *replications, grid),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
