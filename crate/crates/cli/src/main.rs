//! `vir`: run sweeps, estimator-theory experiments and reports.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use vir_core::experiment::{self, RunOptions, TheoryConfig, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(
    name = "vir",
    version,
    about = "Variational imbalanced regression experiments",
    after_help = format!(
        "Relative output directories resolve under ${OUTPUT_ROOT_ENV} when it is set."
    )
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every (variant × seed) cell of a sweep config.
    Run {
        /// Sweep config (JSON).
        config: PathBuf,
        /// Overwrite results already in the output directory.
        #[arg(long)]
        force: bool,
        /// Cells run concurrently (0 = all cores); overrides the config.
        #[arg(long)]
        jobs: Option<usize>,
        /// Added to every configured seed.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare risk estimators and check the bound on configured worlds.
    Theory {
        /// World config (JSON).
        config: PathBuf,
        /// Overwrite results already in the output directory.
        #[arg(long)]
        force: bool,
        /// Worlds checked concurrently (0 = all cores); overrides the config.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the config's output directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write plot-ready CSVs for a finished run directory.
    Report {
        /// Output directory of a finished `vir run`.
        dir: PathBuf,
    },
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            force,
            jobs,
            seed_offset,
            output,
        } => {
            let cfg = experiment::load_config(&config)?;
            let options = RunOptions {
                force,
                jobs,
                seed_offset,
                output_dir: output,
            };
            let summary = experiment::run(&cfg, &options)?;
            println!(
                "{} cells -> {}",
                summary.cells,
                summary.output_dir.display()
            );
            println!("config hash {}", summary.config_hash);
            for g in &summary.groups {
                let m = |k: &str| g.metrics.get(k).map(|s| s.median);
                println!(
                    "{:<6} {:<20} λ={:<6} bins={:<3} MAE all {} few {}  NLL all {}",
                    g.sweep.as_str(),
                    g.variant,
                    g.lambda,
                    g.bins,
                    fmt(m("mae_all")),
                    fmt(m("mae_few")),
                    fmt(m("nll_all")),
                );
            }
            if !summary.failed.is_empty() {
                for (id, err) in &summary.failed {
                    eprintln!("cell {id} failed: {err}");
                }
                bail!("{} of {} cells failed", summary.failed.len(), summary.cells);
            }
        }
        Command::Theory {
            config,
            force,
            jobs,
            output,
        } => {
            let cfg = TheoryConfig::load(&config)?;
            let summary = experiment::run_theory(&cfg, output.as_deref(), force, jobs)?;
            for w in &summary.worlds {
                let tail = w.tail.map_or("-".to_string(), |t| {
                    format!(
                        "{:.4} (limit {:.4})",
                        t.violation_rate,
                        summary.eta + 3.0 * t.mc_sigma
                    )
                });
                println!(
                    "{:<16} R {:.4}  E[VIR] {:.4}  bias bound {:.4} {}  tail {tail}",
                    w.world_id,
                    w.true_risk,
                    w.vir_expectation,
                    w.bias_bound,
                    if w.bias_within_bound {
                        "ok"
                    } else {
                        "VIOLATED"
                    },
                );
            }
        }
        Command::Report { dir } => {
            let files = experiment::report(&dir)
                .with_context(|| format!("report for {}", dir.display()))?;
            for f in [Some(&files.region_bars), Some(&files.sparsification)]
                .into_iter()
                .chain([files.lambda_sweep.as_ref(), files.bins_sweep.as_ref()])
                .flatten()
            {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
