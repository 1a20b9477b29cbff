use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wnorm::harness::config::ExperimentConfig;
use wnorm::harness::experiment::{
    bounds_report, data_dir_from_env, gen_gap, run_experiment, verify, write_outputs, DATA_DIR_ENV,
};

#[derive(Parser)]
#[command(
    name = "wnorm",
    version,
    about = "WeightNorm bounds, training diagnostics and verification"
)]
struct Cli {
    /// Directory that relative data paths resolve against.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write diagnostics.csv, report.json and params.json.
    Train {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference, dominance, residual and rate checks.
    Verify {
        config: PathBuf,
        #[arg(long)]
        fd_tol: Option<f64>,
        #[arg(long)]
        residual_tol: Option<f64>,
        /// Perturb the analytic gradient; the run must then fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Print the closed-form bounds and measured quantities as JSON.
    Bounds { config: PathBuf },
    /// Measure train/held-out gaps against the generalization bound.
    GenGap { config: PathBuf },
}

fn run(cli: Cli) -> wnorm::Result<bool> {
    let data_dir = cli.data_dir.or_else(data_dir_from_env);
    let data_dir = data_dir.as_deref();
    match cli.command {
        Command::Train { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let output = run_experiment(&cfg, data_dir)?;
            let dir = out.unwrap_or_else(|| relative_to(&config, &cfg.output_dir));
            write_outputs(&output, &dir)?;
            let last = output.records.last().expect("initial row");
            println!(
                "trained {} epochs, {} steps: loss {:.6e}, min row norm {:.6}, bounds_ok {}",
                cfg.train.epochs,
                output.report.steps,
                last.loss,
                last.min_weight_norm,
                last.bounds_ok
            );
            println!("wrote {}", dir.display());
            Ok(true)
        }
        Command::Verify {
            config,
            fd_tol,
            residual_tol,
            corrupt_gradient,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(t) = fd_tol {
                cfg.verify.fd_tol = t;
            }
            if let Some(t) = residual_tol {
                cfg.verify.residual_tol = t;
            }
            cfg.verify.corrupt_gradient |= corrupt_gradient;
            let report = verify(&cfg, data_dir)?;
            for c in &report.checks {
                println!(
                    "{:<28} {:>6} checks {:>4} failed  worst margin {:+.3e}",
                    c.name, c.count, c.failures, c.worst_margin
                );
            }
            if report.passed() {
                println!("all checks passed");
            } else {
                let names: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
                eprintln!("failed: {}", names.join(", "));
            }
            Ok(report.passed())
        }
        Command::Bounds { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = bounds_report(&cfg, data_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(true)
        }
        Command::GenGap { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let summary = gen_gap(&cfg, data_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(summary.within_bound == summary.trials.len())
        }
    }
}

/// Relative output paths are taken relative to the config file.
fn relative_to(config: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    config.parent().unwrap_or(Path::new(".")).join(path)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
