//! Equal-interval label bins, kernel smoothing of the label histogram,
//! inverse-square-root importance weights and shot regions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelSpaceError {
    #[error("label {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("invalid label range [{lo}, {hi}] with {num_bins} bins")]
    InvalidRange { lo: f64, hi: f64, num_bins: usize },
    #[error("no labels given")]
    Empty,
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error(
        "bin {bin} holds training data but its smoothed density is zero; use a wider kernel window"
    )]
    ZeroSmoothedDensity { bin: usize },
    #[error("shot thresholds need few ({few}) <= many ({many})")]
    InvalidThresholds { many: usize, few: usize },
}

pub type Result<T> = std::result::Result<T, LabelSpaceError>;

/// `num_bins` equal-width bins over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    lo: f64,
    hi: f64,
    num_bins: usize,
}

impl Binning {
    pub fn new(lo: f64, hi: f64, num_bins: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) || num_bins == 0 {
            return Err(LabelSpaceError::InvalidRange { lo, hi, num_bins });
        }
        Ok(Self { lo, hi, num_bins })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.num_bins as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        if i == self.num_bins {
            self.hi
        } else {
            self.lo + i as f64 * self.width()
        }
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.num_bins).map(|i| self.edge(i)).collect()
    }

    pub fn center(&self, b: usize) -> f64 {
        0.5 * (self.edge(b) + self.edge(b + 1))
    }

    /// Bin `b` with `edges[b] <= y < edges[b+1]`; `y == hi` maps to the last bin.
    pub fn assign(&self, y: f64) -> Result<usize> {
        if !(y >= self.lo && y <= self.hi) {
            return Err(LabelSpaceError::OutOfRange {
                value: y,
                lo: self.lo,
                hi: self.hi,
            });
        }
        let last = self.num_bins - 1;
        let mut b = (((y - self.lo) / self.width()).floor() as usize).min(last);
        // reconcile rounding with the edge positions
        while b > 0 && y < self.edge(b) {
            b -= 1;
        }
        while b < last && y >= self.edge(b + 1) {
            b += 1;
        }
        Ok(b)
    }

    /// Clamps `y` into range before assigning; for predictions.
    pub fn assign_clamped(&self, y: f64) -> usize {
        let y = if y.is_nan() {
            self.lo
        } else {
            y.clamp(self.lo, self.hi)
        };
        self.assign(y).expect("clamped into range")
    }

    pub fn counts(&self, labels: &[f64]) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.num_bins];
        for &y in labels {
            counts[self.assign(y)?] += 1;
        }
        Ok(counts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Gaussian,
    Laplacian,
    Triangular,
}

/// Symmetric smoothing kernel over bin-index distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    /// Bandwidth in bin-index units.
    pub bandwidth: f64,
    /// Bins on each side included in the window.
    pub radius: usize,
}

impl Default for Kernel {
    fn default() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth: 2.0,
            radius: 2,
        }
    }
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(LabelSpaceError::InvalidKernel(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        Ok(())
    }

    /// Unnormalized weight at bin distance `d`.
    pub fn eval(&self, d: f64) -> f64 {
        let d = d.abs();
        match self.family {
            KernelFamily::Gaussian => (-d * d / (2.0 * self.bandwidth * self.bandwidth)).exp(),
            KernelFamily::Laplacian => (-d / self.bandwidth).exp(),
            KernelFamily::Triangular => (1.0 - d / self.bandwidth).max(0.0),
        }
    }
}

/// Symmetric smoothing matrix. Off-diagonal entries are `k(b'−b)/Z` with `Z`
/// the kernel mass over a full `2·radius+1` window; the diagonal takes what is
/// left, so each row and column sums to one even where the window is cut by
/// the label range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights {
    rows: Vec<Vec<(usize, f64)>>,
}

impl KernelWeights {
    pub fn new(kernel: &Kernel, num_bins: usize) -> Result<Self> {
        kernel.validate()?;
        let r = kernel.radius as i64;
        let z: f64 = (-r..=r).map(|d| kernel.eval(d as f64)).sum();
        let rows = (0..num_bins)
            .map(|b| {
                let lo = b.saturating_sub(kernel.radius);
                let hi = (b + kernel.radius).min(num_bins - 1);
                let off: f64 = (lo..=hi)
                    .filter(|&j| j != b)
                    .map(|j| kernel.eval(j as f64 - b as f64) / z)
                    .sum();
                (lo..=hi)
                    .map(|j| {
                        let k = if j == b {
                            1.0 - off
                        } else {
                            kernel.eval(j as f64 - b as f64) / z
                        };
                        (j, k)
                    })
                    .filter(|&(_, k)| k > 0.0)
                    .collect()
            })
            .collect();
        Ok(Self { rows })
    }

    /// Explicit weight rows; each must be non-empty with non-negative weights
    /// summing to one.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        for (b, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().map(|&(_, k)| k).sum();
            if row.is_empty()
                || row.iter().any(|&(j, k)| j >= n || k < 0.0)
                || (total - 1.0).abs() > 1e-12
            {
                return Err(LabelSpaceError::InvalidKernel(format!(
                    "row {b} is not a normalized window"
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn num_bins(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, b: usize) -> &[(usize, f64)] {
        &self.rows[b]
    }

    /// `out[b] = Σ k̂(b,b')·values[b']`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, k)| k * values[j]).sum())
            .collect()
    }

    /// `out[b] = Σ k̂²(b,b')·values[b']`.
    pub fn apply_squared(&self, values: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, k)| k * k * values[j]).sum())
            .collect()
    }
}

/// `P_b = counts_b / N`.
pub fn empirical_density(labels: &[f64], binning: &Binning) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(LabelSpaceError::Empty);
    }
    let counts = binning.counts(labels)?;
    let n = labels.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Kernel-smoothed density; preserves total mass.
pub fn smooth_density(density: &[f64], weights: &KernelWeights) -> Vec<f64> {
    weights.apply(density)
}

/// `w_b ∝ P̃_b^{-1/2}`, rescaled so the mean weight over the training samples
/// (the count-weighted mean) is one.
///
/// Bins without training data still get a weight from their smoothed density;
/// a bin whose smoothed density is zero and holds no data gets the largest
/// weight among the others.
pub fn importance_weights(smoothed: &[f64], counts: &[usize]) -> Result<Vec<f64>> {
    let mut raw = Vec::with_capacity(smoothed.len());
    for (b, (&p, &c)) in smoothed.iter().zip(counts).enumerate() {
        if p > 0.0 {
            raw.push(Some(p.powf(-0.5)));
        } else if c > 0 {
            return Err(LabelSpaceError::ZeroSmoothedDensity { bin: b });
        } else {
            raw.push(None);
        }
    }
    let n: usize = counts.iter().sum();
    let scale = if n > 0 {
        let total: f64 = raw
            .iter()
            .zip(counts)
            .map(|(w, &c)| w.unwrap_or(0.0) * c as f64)
            .sum();
        n as f64 / total
    } else {
        1.0
    };
    let fallback = raw.iter().flatten().copied().fold(1.0_f64, f64::max);
    Ok(raw
        .into_iter()
        .map(|w| w.unwrap_or(fallback) * scale)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Many,
    Medium,
    Few,
    Empty,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Many => "many",
            Region::Medium => "medium",
            Region::Few => "few",
            Region::Empty => "empty",
        }
    }
}

/// Many-shot iff count > `many`; few-shot iff 0 < count < `few`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotThresholds {
    pub many: usize,
    pub few: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self { many: 100, few: 20 }
    }
}

impl ShotThresholds {
    pub fn new(many: usize, few: usize) -> Result<Self> {
        if few > many {
            return Err(LabelSpaceError::InvalidThresholds { many, few });
        }
        Ok(Self { many, few })
    }

    /// (100, 20) for at least 5000 training samples, otherwise scaled down to
    /// (N/50, N/250).
    pub fn for_dataset_size(n: usize) -> Self {
        if n >= 5000 {
            Self::default()
        } else {
            let many = ((n as f64 / 50.0).round() as usize).max(1);
            let few = ((n as f64 / 250.0).round() as usize).clamp(1, many);
            Self { many, few }
        }
    }

    pub fn region(&self, count: usize) -> Region {
        if count == 0 {
            Region::Empty
        } else if count > self.many {
            Region::Many
        } else if count < self.few {
            Region::Few
        } else {
            Region::Medium
        }
    }
}

pub fn partition_shots(counts: &[usize], thresholds: ShotThresholds) -> Vec<Region> {
    counts.iter().map(|&c| thresholds.region(c)).collect()
}

/// Training-label statistics over a binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub binning: Binning,
    pub kernel: Kernel,
    pub thresholds: ShotThresholds,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
    pub smoothed: Vec<f64>,
    pub weights: Vec<f64>,
    pub regions: Vec<Region>,
}

impl LabelSpace {
    pub fn fit(
        binning: Binning,
        labels: &[f64],
        kernel: Kernel,
        thresholds: ShotThresholds,
    ) -> Result<Self> {
        let counts = binning.counts(labels)?;
        let density = empirical_density(labels, &binning)?;
        let kw = KernelWeights::new(&kernel, binning.num_bins())?;
        let smoothed = smooth_density(&density, &kw);
        let weights = importance_weights(&smoothed, &counts)?;
        let regions = partition_shots(&counts, thresholds);
        Ok(Self {
            edges: binning.edges(),
            binning,
            kernel,
            thresholds,
            counts,
            density,
            smoothed,
            weights,
            regions,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.binning.num_bins()
    }

    pub fn kernel_weights(&self) -> KernelWeights {
        KernelWeights::new(&self.kernel, self.num_bins()).expect("kernel validated at fit")
    }

    pub fn weight_of(&self, y: f64) -> Result<f64> {
        Ok(self.weights[self.binning.assign(y)?])
    }

    pub fn region_of_bin(&self, b: usize) -> Region {
        self.regions[b]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("label space serializes")
    }
}
