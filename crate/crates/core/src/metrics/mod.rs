//! Accuracy and uncertainty metrics with a shot-region breakdown, and
//! scalar-weight calibration of evidential posteriors.

pub mod ause;
pub mod calibration;
pub mod regression;
pub mod report;

pub use ause::{ause, Sparsification};
pub use calibration::{calibrate_scales, Calibration, CalibrationWeights};
pub use regression::{average_ranks, regression_metrics, RegressionMetrics, EPS_GM};
pub use report::{MetricReport, MetricRow, RegionMetrics, RegionReport, ReportRegion};

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::evidential::{nig_nll, NigPosterior};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no samples")]
    Empty,
    #[error("need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("label outside the label space: {0}")]
    Label(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Model outputs for a set of samples, in label units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub mean: Vec<f64>,
    /// Predictive variance; absent for point-estimate models.
    pub variance: Option<Vec<f64>>,
    /// Full posteriors for evidential models.
    pub posterior: Option<Vec<NigPosterior>>,
}

impl Predictions {
    pub fn point(mean: Vec<f64>) -> Self {
        Self {
            mean,
            variance: None,
            posterior: None,
        }
    }
}

/// Mean of ½ln(2πŝ) + (y−ŷ)²/(2ŝ).
pub fn gaussian_nll(mean: &[f64], variance: &[f64], labels: &[f64]) -> f64 {
    let n = labels.len() as f64;
    mean.iter()
        .zip(variance)
        .zip(labels)
        .map(|((&m, &s), &y)| 0.5 * (2.0 * PI * s).ln() + (y - m).powi(2) / (2.0 * s))
        .sum::<f64>()
        / n
}

/// Mean Student-t negative log-likelihood over evidential posteriors.
pub fn evidential_nll(posteriors: &[NigPosterior], labels: &[f64]) -> f64 {
    posteriors
        .iter()
        .zip(labels)
        .map(|(p, &y)| nig_nll(p, y))
        .sum::<f64>()
        / labels.len() as f64
}
