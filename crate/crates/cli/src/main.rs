//! `jcir`: batch experiments for the anisotropic stable JCIR toolkit.
//!
//! Every run writes `resolved_config.toml`, CSV tables, `report.json`,
//! `summary.txt` and `manifest.json` into its artifact directory. Exit codes:
//! 0 success, 1 invalid input, 2 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod error;
mod experiments;
mod output;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jcir::Exec;

use config::{LoadedConfig, Overrides, OUT_ENV};
use error::CliError;
use output::{unix_now, write_manifest, ErrorInfo, Manifest, RngInfo, RunDir};

#[derive(Parser, Debug)]
#[command(
    name = "jcir",
    version,
    about = "Simulation, density and ergodicity experiments for stable JCIR models"
)]
struct Cli {
    /// Experiment config (TOML), a stored manifest.json, or an artifact directory.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads (default: available parallelism). Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Artifact directory; defaults to `$JCIR_OUT/<experiment>-<seed>`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override one experiment knob, e.g. `--set n_paths=1000` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment named by `experiment = "..."` in the config.
    Run,
    /// Euler ensemble: per-time summaries, mean check, optional characteristic-function probes.
    Simulate,
    /// Riccati trajectory, compared with the closed form when one exists.
    #[command(name = "riccati-check")]
    RiccatiCheck,
    /// 1D heat kernel (or a derivative) by Fourier inversion.
    #[command(name = "density1d")]
    Density1d,
    /// 1D invariant density by Fourier inversion.
    #[command(name = "invariant1d")]
    Invariant1d,
    /// Fit of the immigration lower bound.
    #[command(name = "condition-a")]
    ConditionA,
    /// Euler one-step error rates.
    Rates,
    /// Probability of ending near the boundary.
    Boundary,
    /// Lyapunov matrix and drift certificate.
    Lyapunov,
    /// Two-start total-variation decay.
    Ergodicity,
    /// Weighted Besov norm shape check.
    Besov,
    /// Local Dobrushin probe.
    Dobrushin,
    /// Tidy (series, x, y, lo, hi) CSV from a result file or artifact directory.
    #[command(name = "plot-data")]
    PlotData {
        artifact: PathBuf,
        /// Output file (default: stdout).
        #[arg(short = 'o', long = "output")]
        output: Option<PathBuf>,
    },
}

impl Command {
    fn experiment(&self) -> Option<&'static str> {
        Some(match self {
            Command::Run | Command::PlotData { .. } => return None,
            Command::Simulate => "simulate",
            Command::RiccatiCheck => "riccati-check",
            Command::Density1d => "density1d",
            Command::Invariant1d => "invariant1d",
            Command::ConditionA => "condition-a",
            Command::Rates => "rates",
            Command::Boundary => "boundary",
            Command::Lyapunov => "lyapunov",
            Command::Ergodicity => "ergodicity",
            Command::Besov => "besov",
            Command::Dobrushin => "dobrushin",
        })
    }
}

fn default_out(cfg: &LoadedConfig) -> PathBuf {
    let root = std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{}-{}", cfg.experiment, cfg.seed))
}

fn setup_threads(threads: Option<usize>) -> Result<(usize, Exec), CliError> {
    let n = match threads {
        Some(0) => return Err(CliError::Config("--threads must be positive".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {n} worker threads: {e}")))?;
    Ok((
        n,
        if n == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel
        },
    ))
}

fn plot_data(artifact: &Path, output: Option<&Path>) -> Result<(), CliError> {
    let points = plot::emit_plot_data(artifact)?;
    match output {
        Some(p) => plot::write_points(std::fs::File::create(p)?, &points),
        None => plot::write_points(std::io::stdout().lock(), &points),
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Command::PlotData { artifact, output } = &cli.command {
        return plot_data(artifact, output.as_deref());
    }
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        set: cli.set.clone(),
    };
    let cfg = config::load(cli.config.as_deref(), cli.command.experiment(), &overrides)?;
    let knobs = experiments::resolve(&cfg)?;
    let resolved = config::resolved_table(&cfg, knobs.clone())?;
    let report = cfg.model.validate();
    report.structural()?;
    for msg in report.messages() {
        log::warn!("model: {msg}");
    }
    let (threads, exec) = setup_threads(cli.threads)?;

    let dir = cfg.out.clone().unwrap_or_else(|| default_out(&cfg));
    let mut out = RunDir::create(&dir)?;
    let config_text = toml::to_string(&resolved)
        .map_err(|e| CliError::Config(format!("resolved config: {e}")))?;
    std::fs::write(out.path("resolved_config.toml"), config_text)?;

    let ctx = experiments::Context {
        params: &cfg.model,
        seed: cfg.seed,
        exec,
    };
    log::info!("running {} into {}", cfg.experiment, dir.display());
    let result = experiments::run(&cfg.experiment, &knobs, &ctx, &mut out);
    let error = result.as_ref().err().map(|e| ErrorInfo {
        kind: e.kind(),
        exit_code: e.exit_code(),
        message: format!("{}: {e}", cfg.experiment),
    });
    if let Some(err) = &error {
        out.note(format!("FAILED ({}): {}", err.kind, err.message));
    }
    out.write_summary(&cfg.experiment)?;
    let manifest = Manifest {
        tool: "jcir",
        version: env!("CARGO_PKG_VERSION"),
        experiment: &cfg.experiment,
        seed: cfg.seed,
        threads,
        created_unix: unix_now(),
        status: if error.is_none() { "ok" } else { "failed" },
        error,
        rng: RngInfo::default(),
        artifacts: out.artifacts(),
        config: &resolved,
    };
    write_manifest(&dir, &manifest)?;
    result.map(|_| ())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
