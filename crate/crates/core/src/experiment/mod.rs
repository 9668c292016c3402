//! Experiment driver: (variant × seed) sweeps with λ and bin-count axes,
//! estimator-theory runs, and plot-ready reports.
//!
//! Every artifact carries the hash of the configuration that produced it.
//! Output never depends on the degree of parallelism: cells are computed
//! independently, written to their own directories and merged in cell-key
//! order by a single thread.

mod config;
mod plots;
mod sweep;
mod theory;

pub use config::{
    derive_seed, load_config, resolve_output_dir, DatasetConfig, ExperimentConfig, VariantSpec,
    OUTPUT_ROOT_ENV,
};
pub use plots::{report, ReportFiles};
pub use sweep::{
    prepare_data, run, CellKey, CellRecord, PreparedData, RunOptions, RunSummary, Sweep,
};
pub use theory::{run_theory, TheoryConfig, TheorySummary, WorldCheck, WorldConfig};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::DataError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::risk::RiskError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} already holds results; pass --force to overwrite")]
    Refused(PathBuf),
    #[error("missing inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Pretty JSON with a trailing newline.
fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

/// Refuses to reuse a directory holding any of `artifacts` unless `force`,
/// in which case those artifacts are removed first.
fn claim_output_dir(dir: &Path, artifacts: &[&str], force: bool) -> Result<()> {
    let existing: Vec<PathBuf> = artifacts
        .iter()
        .map(|a| dir.join(a))
        .filter(|p| p.exists())
        .collect();
    if !existing.is_empty() {
        if !force {
            return Err(ExperimentError::Refused(dir.to_path_buf()));
        }
        for p in existing {
            if p.is_dir() {
                std::fs::remove_dir_all(&p).map_err(io_err(&p))?;
            } else {
                std::fs::remove_file(&p).map_err(io_err(&p))?;
            }
        }
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Shortest round-trip decimal, empty for absent values.
fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Linear-interpolation quantile of sorted, non-empty `xs`.
fn quantile(xs: &[f64], q: f64) -> f64 {
    let pos = q * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub n: usize,
}

/// Median and interquartile range of the finite values; `None` if there are
/// none.
pub fn spread(values: impl IntoIterator<Item = f64>) -> Option<Spread> {
    let mut xs: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let (q25, q75) = (quantile(&xs, 0.25), quantile(&xs, 0.75));
    Some(Spread {
        median: quantile(&xs, 0.5),
        q25,
        q75,
        iqr: q75 - q25,
        n: xs.len(),
    })
}
