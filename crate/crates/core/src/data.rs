//! Synthetic imbalanced datasets, CSV ingestion and seeded splits.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::label_space::Binning;
use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    Fractions([f64; 3]),
    #[error("balanced test split is empty: the rarest non-empty bin has {count} samples, too few for test fraction {fraction}")]
    BalancedTestEmpty { count: usize, fraction: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: CSV error: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: empty file")]
    EmptyFile { path: PathBuf },
    #[error("{path}: no column named `{column}` in header {header:?}")]
    MissingLabelColumn {
        path: PathBuf,
        column: String,
        header: Vec<String>,
    },
    #[error("{path}: no usable rows ({rejected} rejected)")]
    EmptyDataset { path: PathBuf, rejected: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// Label density on `[lo, hi]`, with an analytic CDF and inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Density {
    /// `∝ exp(−rate·(y − lo))`.
    ExponentialDecay { rate: f64 },
    /// `∝ (1 + (y − lo)/scale)^(−shape)`, shape > 1.
    ParetoLike { scale: f64, shape: f64 },
    /// Exponential decays from both ends; `weight_hi` is the mass of the
    /// upper mode.
    BimodalSkew {
        rate_lo: f64,
        rate_hi: f64,
        weight_hi: f64,
    },
}

/// CDF on `[0, len]` of an exponential decay with the given rate.
fn exp_cdf(t: f64, rate: f64, len: f64) -> f64 {
    if rate.abs() < 1e-12 {
        return t / len;
    }
    (-(-rate * t).exp_m1()) / (-(-rate * len).exp_m1())
}

fn exp_inverse(u: f64, rate: f64, len: f64) -> f64 {
    if rate.abs() < 1e-12 {
        return u * len;
    }
    -(u * (-rate * len).exp_m1()).ln_1p() / rate
}

impl Density {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let ok = match *self {
            Density::ExponentialDecay { rate } => rate.is_finite() && rate >= 0.0,
            Density::ParetoLike { scale, shape } => scale > 0.0 && shape > 1.0,
            Density::BimodalSkew {
                rate_lo,
                rate_hi,
                weight_hi,
            } => rate_lo >= 0.0 && rate_hi >= 0.0 && (0.0..=1.0).contains(&weight_hi),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid density parameters {self:?}"))
        }
    }

    pub fn cdf(&self, y: f64, lo: f64, hi: f64) -> f64 {
        let len = hi - lo;
        let t = (y - lo).clamp(0.0, len);
        match *self {
            Density::ExponentialDecay { rate } => exp_cdf(t, rate, len),
            Density::ParetoLike { scale, shape } => {
                let mass = |t: f64| 1.0 - (1.0 + t / scale).powf(1.0 - shape);
                mass(t) / mass(len)
            }
            Density::BimodalSkew {
                rate_lo,
                rate_hi,
                weight_hi,
            } => {
                (1.0 - weight_hi) * exp_cdf(t, rate_lo, len)
                    + weight_hi * (1.0 - exp_cdf(len - t, rate_hi, len))
            }
        }
    }

    /// Inverse CDF; bisection for the mixture.
    pub fn quantile(&self, u: f64, lo: f64, hi: f64) -> f64 {
        let len = hi - lo;
        let t = match *self {
            Density::ExponentialDecay { rate } => exp_inverse(u, rate, len),
            Density::ParetoLike { scale, shape } => {
                let total = 1.0 - (1.0 + len / scale).powf(1.0 - shape);
                scale * ((1.0 - u * total).powf(1.0 / (1.0 - shape)) - 1.0)
            }
            Density::BimodalSkew { .. } => {
                let (mut a, mut b) = (0.0, len);
                for _ in 0..100 {
                    let mid = 0.5 * (a + b);
                    if self.cdf(lo + mid, lo, hi) < u {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                0.5 * (a + b)
            }
        };
        (lo + t).clamp(lo, hi)
    }

    /// Probability mass of every bin.
    pub fn bin_masses(&self, binning: &Binning) -> Vec<f64> {
        let (lo, hi) = (binning.lo(), binning.hi());
        (0..binning.num_bins())
            .map(|b| self.cdf(binning.edge(b + 1), lo, hi) - self.cdf(binning.edge(b), lo, hi))
            .collect()
    }

    /// Exponential-decay rate whose last bin expects `target` of `n` samples.
    pub fn decay_for_last_bin(n: usize, target: f64, binning: &Binning) -> f64 {
        let last = |rate: f64| {
            let d = Density::ExponentialDecay { rate };
            n as f64 * d.bin_masses(binning)[binning.num_bins() - 1]
        };
        let (mut a, mut b) = (0.0, 10.0 / binning.width());
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if last(mid) > target {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Monotone map from the normalized label `u ∈ [0, 1]` to a signal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Link {
    Linear,
    /// `u + amplitude·sin(2π·cycles·u + φ_j)/(2π·cycles)`, monotone for
    /// amplitude < 1; the phase differs per signal dimension.
    Sinusoid {
        amplitude: f64,
        cycles: f64,
    },
    /// Slopes 2, 0.5, 1.5, 1 over the four quarters, rescaled to end at 1.
    Piecewise,
}

pub const SIGNAL_SCALE: f64 = 2.0;

impl Link {
    pub fn eval(&self, u: f64, dim: usize) -> f64 {
        let v = match *self {
            Link::Linear => u,
            Link::Sinusoid { amplitude, cycles } => {
                let w = 2.0 * PI * cycles;
                let phase = dim as f64 * 2.0 * PI / 5.0;
                u + amplitude * ((w * u + phase).sin() - phase.sin()) / w
            }
            Link::Piecewise => {
                const SLOPES: [f64; 4] = [2.0, 0.5, 1.5, 1.0];
                let total: f64 = SLOPES.iter().sum::<f64>() * 0.25;
                let mut acc = 0.0;
                for (q, slope) in SLOPES.iter().enumerate() {
                    let start = q as f64 * 0.25;
                    let span = (u - start).clamp(0.0, 0.25);
                    acc += slope * span;
                }
                acc / total
            }
        };
        SIGNAL_SCALE * v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    /// Leading dimensions that carry the label; the rest are distractors.
    pub signal_dims: usize,
    pub lo: f64,
    pub hi: f64,
    pub num_bins: usize,
    pub density: Density,
    pub link: Link,
    pub noise: f64,
    pub heteroscedastic: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 4000 samples, 8 features (4 informative), 50 bins on [0, 100],
    /// exponential decay leaving about 5 expected samples in the last bin.
    pub fn agedb_mini(seed: u64) -> Self {
        let n = 4000;
        let binning = Binning::new(0.0, 100.0, 50).expect("static range");
        Self {
            n,
            d: 8,
            signal_dims: 4,
            lo: 0.0,
            hi: 100.0,
            num_bins: 50,
            density: Density::ExponentialDecay {
                rate: Density::decay_for_last_bin(n, 5.0, &binning),
            },
            link: Link::Sinusoid {
                amplitude: 0.5,
                cycles: 3.0,
            },
            noise: 0.5,
            heteroscedastic: false,
            seed,
        }
    }

    pub fn binning(&self) -> Result<Binning> {
        Binning::new(self.lo, self.hi, self.num_bins).map_err(|e| DataError::Spec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DataError::Spec(m));
        if self.n < 10 {
            return err(format!("n must be at least 10, got {}", self.n));
        }
        if self.d == 0 || self.signal_dims == 0 || self.signal_dims > self.d {
            return err(format!(
                "need 1 <= signal_dims <= d, got {} and {}",
                self.signal_dims, self.d
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return err(format!("noise must be non-negative, got {}", self.noise));
        }
        self.density.validate().map_err(DataError::Spec)?;
        self.binning()?;
        Ok(())
    }

    fn noise_scale(&self, y: f64, binning: &Binning, masses: &[f64], max_mass: f64) -> f64 {
        if !self.heteroscedastic {
            return self.noise;
        }
        let p = masses[binning.assign_clamped(y)];
        let factor = if p > 0.0 {
            (p / max_mass).powf(-0.25)
        } else {
            3.0
        };
        self.noise * factor.min(3.0)
    }

    fn features_for(&self, labels: &[f64], rng: &mut ChaCha8Rng) -> Result<Tensor> {
        let binning = self.binning()?;
        let masses = self.density.bin_masses(&binning);
        let max_mass = masses.iter().cloned().fold(0.0, f64::max);
        let mut data = Vec::with_capacity(labels.len() * self.d);
        for &y in labels {
            let u = (y - self.lo) / (self.hi - self.lo);
            let sigma = self.noise_scale(y, &binning, &masses, max_mass);
            for j in 0..self.d {
                let eps: f64 = rng.sample(StandardNormal);
                if j < self.signal_dims {
                    data.push(self.link.eval(u, j) + sigma * eps);
                } else {
                    let distractor: f64 = rng.sample(StandardNormal);
                    data.push(SIGNAL_SCALE * 0.5 + 3.0 * distractor + sigma * eps);
                }
            }
        }
        Ok(Tensor::matrix(labels.len(), self.d, data).expect("rows of width d"))
    }

    fn feature_names(&self) -> Vec<String> {
        (0..self.d).map(|j| format!("x{j}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic { spec: SyntheticSpec },
    File { path: String, sha256: String },
}

/// Feature rows with labels; the split tags partition the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<f64>,
    pub tags: Vec<SplitTag>,
    pub feature_names: Vec<String>,
    pub lo: f64,
    pub hi: f64,
    pub provenance: Provenance,
}

/// A feature matrix with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub x: Tensor,
    pub y: Vec<f64>,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self, tag: SplitTag) -> Samples {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.tags[i] == tag).collect();
        self.all().select(&idx)
    }

    pub fn all(&self) -> Samples {
        Samples {
            x: self.features.clone(),
            y: self.labels.clone(),
        }
    }

    pub fn binning(&self, num_bins: usize) -> Result<Binning> {
        Binning::new(self.lo, self.hi, num_bins).map_err(|e| DataError::Spec(e.to_string()))
    }
}

/// Draws `spec.n` samples; all rows are tagged `Train` until split.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<f64> = (0..spec.n)
        .map(|_| spec.density.quantile(rng.random::<f64>(), spec.lo, spec.hi))
        .collect();
    let features = spec.features_for(&labels, &mut rng)?;
    Ok(Dataset {
        features,
        labels,
        tags: vec![SplitTag::Train; spec.n],
        feature_names: spec.feature_names(),
        lo: spec.lo,
        hi: spec.hi,
        provenance: Provenance::Synthetic { spec: spec.clone() },
    })
}

/// `per_bin` samples drawn uniformly inside every bin, from a stream
/// independent of [`generate_synthetic`]'s.
pub fn generate_balanced_test(spec: &SyntheticSpec, per_bin: usize) -> Result<Samples> {
    generate_balanced(spec, per_bin, 1)
}

/// Like [`generate_balanced_test`] on a third, independent stream.
pub fn generate_balanced_val(spec: &SyntheticSpec, per_bin: usize) -> Result<Samples> {
    generate_balanced(spec, per_bin, 2)
}

fn generate_balanced(spec: &SyntheticSpec, per_bin: usize, stream: u64) -> Result<Samples> {
    spec.validate()?;
    let binning = spec.binning()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let mut labels = Vec::with_capacity(per_bin * spec.num_bins);
    for b in 0..spec.num_bins {
        let (a, c) = (binning.edge(b), binning.edge(b + 1));
        for _ in 0..per_bin {
            let y = a + (c - a) * rng.random::<f64>();
            labels.push(y.min(spec.hi));
        }
    }
    let x = spec.features_for(&labels, &mut rng)?;
    Ok(Samples { x, y: labels })
}

/// Seeded shuffle then proportional assignment. With `balanced_test`, every
/// non-empty bin contributes the same number of test rows: the smallest
/// `⌊count·f_test⌋` over non-empty bins.
pub fn split(
    dataset: &Dataset,
    fractions: [f64; 3],
    seed: u64,
    balanced_test: Option<&Binning>,
) -> Result<Dataset> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| !(f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(DataError::Fractions(fractions));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut tags = vec![SplitTag::Train; n];

    let rest: Vec<usize> = match balanced_test {
        None => {
            let n_train = (fractions[0] * n as f64).round() as usize;
            let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
            for (k, &i) in order.iter().enumerate() {
                tags[i] = if k < n_train {
                    SplitTag::Train
                } else if k < n_train + n_val {
                    SplitTag::Val
                } else {
                    SplitTag::Test
                };
            }
            Vec::new()
        }
        Some(binning) => {
            let bins: Vec<usize> = dataset
                .labels
                .iter()
                .map(|&y| binning.assign_clamped(y))
                .collect();
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); binning.num_bins()];
            for &i in &order {
                members[bins[i]].push(i);
            }
            let rarest = members
                .iter()
                .map(|m| m.len())
                .filter(|&c| c > 0)
                .min()
                .unwrap_or(0);
            let k = (rarest as f64 * fractions[2]).floor() as usize;
            if k == 0 {
                return Err(DataError::BalancedTestEmpty {
                    count: rarest,
                    fraction: fractions[2],
                });
            }
            let mut test = HashSet::new();
            for m in &members {
                test.extend(m.iter().take(k).copied());
            }
            for &i in &test {
                tags[i] = SplitTag::Test;
            }
            order.into_iter().filter(|i| !test.contains(i)).collect()
        }
    };
    if !rest.is_empty() {
        let share = fractions[0] / (fractions[0] + fractions[1]).max(f64::MIN_POSITIVE);
        let n_train = (share * rest.len() as f64).round() as usize;
        for (k, &i) in rest.iter().enumerate() {
            tags[i] = if k < n_train {
                SplitTag::Train
            } else {
                SplitTag::Val
            };
        }
    }
    Ok(Dataset {
        tags,
        ..dataset.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub label_column: String,
    /// Label range; defaults to the observed minimum and maximum.
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRejection {
    /// 1-based line number in the file, header included.
    pub line: u64,
    pub reason: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses a headered numeric CSV. Rows with missing, non-numeric, non-finite
/// or out-of-range cells are rejected individually and reported.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<(Dataset, Vec<RowRejection>)> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(DataError::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == &schema.label_column)
        .ok_or_else(|| DataError::MissingLabelColumn {
            path: path.to_path_buf(),
            column: schema.label_column.clone(),
            header: header.clone(),
        })?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut rejected = Vec::new();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            rejected.push(RowRejection {
                line,
                reason: format!("expected {} cells, found {}", header.len(), record.len()),
            });
            continue;
        }
        let mut values = Vec::with_capacity(header.len());
        let mut problem = None;
        for (i, cell) in record.iter().enumerate() {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(_) => {
                    problem = Some(format!("non-finite value in column `{}`", header[i]));
                    break;
                }
                Err(_) => {
                    problem = Some(format!(
                        "non-numeric cell {:?} in column `{}`",
                        cell, header[i]
                    ));
                    break;
                }
            }
        }
        if let Some(reason) = problem {
            rejected.push(RowRejection { line, reason });
            continue;
        }
        let y = values.remove(label_idx);
        if schema.lo.is_some_and(|lo| y < lo) || schema.hi.is_some_and(|hi| y > hi) {
            rejected.push(RowRejection {
                line,
                reason: format!("label {y} outside the declared range"),
            });
            continue;
        }
        rows.push((values, y));
    }
    if rows.is_empty() {
        return Err(DataError::EmptyDataset {
            path: path.to_path_buf(),
            rejected: rejected.len(),
        });
    }
    let d = feature_names.len();
    let labels: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let data: Vec<f64> = rows.into_iter().flat_map(|r| r.0).collect();
    let lo = schema
        .lo
        .unwrap_or_else(|| labels.iter().cloned().fold(f64::INFINITY, f64::min));
    let mut hi = schema
        .hi
        .unwrap_or_else(|| labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    if hi <= lo {
        hi = lo + 1.0;
    }
    let n = labels.len();
    Ok((
        Dataset {
            features: Tensor::matrix(n, d, data).expect("rows of width d"),
            labels,
            tags: vec![SplitTag::Train; n],
            feature_names,
            lo,
            hi,
            provenance: Provenance::File {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            },
        },
        rejected,
    ))
}

/// Writes features then the label column; floats use the shortest
/// representation that parses back to the same value.
pub fn save_csv(dataset: &Dataset, label_column: &str, path: &Path) -> Result<()> {
    let csv_err = |source| DataError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = dataset.feature_names.clone();
    header.push(label_column.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (r, y) in dataset.labels.iter().enumerate() {
        let mut record: Vec<String> = dataset
            .features
            .row(r)
            .iter()
            .map(|v| v.to_string())
            .collect();
        record.push(y.to_string());
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(link: Link, noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            n: 2000,
            d: 3,
            signal_dims: 1,
            lo: 0.0,
            hi: 100.0,
            num_bins: 50,
            density: Density::ExponentialDecay { rate: 0.05 },
            link,
            noise,
            heteroscedastic: false,
            seed: 7,
        }
    }

    #[test]
    fn cdfs_are_monotone_and_invert() {
        for density in [
            Density::ExponentialDecay { rate: 0.043 },
            Density::ParetoLike {
                scale: 10.0,
                shape: 2.5,
            },
            Density::BimodalSkew {
                rate_lo: 0.08,
                rate_hi: 0.15,
                weight_hi: 0.2,
            },
        ] {
            assert!(density.cdf(0.0, 0.0, 100.0).abs() < 1e-15);
            assert!((density.cdf(100.0, 0.0, 100.0) - 1.0).abs() < 1e-12);
            let mut prev = 0.0;
            for k in 1..=100 {
                let c = density.cdf(k as f64, 0.0, 100.0);
                assert!(c >= prev);
                prev = c;
            }
            for &u in &[0.01, 0.3, 0.5, 0.9, 0.999] {
                let y = density.quantile(u, 0.0, 100.0);
                assert!(
                    (density.cdf(y, 0.0, 100.0) - u).abs() < 1e-9,
                    "{density:?} u={u}"
                );
            }
        }
    }

    #[test]
    fn agedb_mini_last_bin_expectation() {
        let spec = SyntheticSpec::agedb_mini(0);
        let masses = spec.density.bin_masses(&spec.binning().unwrap());
        assert!((masses[49] * 4000.0 - 5.0).abs() < 1e-6);
        let Density::ExponentialDecay { rate } = spec.density else {
            unreachable!()
        };
        assert!((rate - 0.043).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn exponential_counts_are_skewed() {
        let spec = small_spec(Link::Linear, 0.5);
        let ds = generate_synthetic(&spec).unwrap();
        let counts = spec.binning().unwrap().counts(&ds.labels).unwrap();
        let masses = spec.density.bin_masses(&spec.binning().unwrap());
        for w in masses.windows(2) {
            assert!(w[1] < w[0]);
        }
        let max = *counts.iter().max().unwrap() as f64;
        let min = *counts.iter().filter(|&&c| c > 0).min().unwrap() as f64;
        assert!(max / min > 20.0, "ratio {}", max / min);
    }

    #[test]
    fn noiseless_linear_is_recoverable() {
        let ds = generate_synthetic(&small_spec(Link::Linear, 0.0)).unwrap();
        // least squares y ≈ a·x0 + b
        let n = ds.len() as f64;
        let x: Vec<f64> = (0..ds.len()).map(|i| ds.features.row(i)[0]).collect();
        let mx = x.iter().sum::<f64>() / n;
        let my = ds.labels.iter().sum::<f64>() / n;
        let sxy: f64 = x
            .iter()
            .zip(&ds.labels)
            .map(|(a, b)| (a - mx) * (b - my))
            .sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let icpt = my - slope * mx;
        for (xi, yi) in x.iter().zip(&ds.labels) {
            assert!((slope * xi + icpt - yi).abs() < 1e-9);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec::agedb_mini(3);
        assert_eq!(
            generate_synthetic(&spec).unwrap(),
            generate_synthetic(&spec).unwrap()
        );
        assert_eq!(
            generate_balanced_test(&spec, 4).unwrap(),
            generate_balanced_test(&spec, 4).unwrap()
        );
        assert_ne!(
            generate_balanced_test(&spec, 4).unwrap(),
            generate_balanced_val(&spec, 4).unwrap()
        );
    }

    #[test]
    fn link_functions_are_monotone() {
        for link in [
            Link::Linear,
            Link::Piecewise,
            Link::Sinusoid {
                amplitude: 0.5,
                cycles: 3.0,
            },
        ] {
            for dim in 0..4 {
                let mut prev = f64::NEG_INFINITY;
                for k in 0..=1000 {
                    let v = link.eval(k as f64 / 1000.0, dim);
                    assert!(v > prev, "{link:?}");
                    prev = v;
                }
                assert!(link.eval(0.0, dim).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_sizes_and_partition() {
        let mut spec = small_spec(Link::Linear, 0.5);
        spec.n = 100;
        let ds = generate_synthetic(&spec).unwrap();
        let s = split(&ds, [0.7, 0.15, 0.15], 1, None).unwrap();
        let count = |t| s.tags.iter().filter(|&&x| x == t).count();
        assert_eq!(
            (
                count(SplitTag::Train),
                count(SplitTag::Val),
                count(SplitTag::Test)
            ),
            (70, 15, 15)
        );
        assert_eq!(s, split(&ds, [0.7, 0.15, 0.15], 1, None).unwrap());
        assert!(matches!(
            split(&ds, [0.7, 0.2, 0.2], 1, None),
            Err(DataError::Fractions(_))
        ));
    }

    #[test]
    fn balanced_test_caps_per_bin() {
        let mut spec = small_spec(Link::Linear, 0.5);
        spec.num_bins = 10;
        spec.density = Density::ExponentialDecay { rate: 0.03 };
        let ds = generate_synthetic(&spec).unwrap();
        let binning = spec.binning().unwrap();
        let s = split(&ds, [0.6, 0.2, 0.2], 5, Some(&binning)).unwrap();
        let mut per_bin = [0; 10];
        for (i, &t) in s.tags.iter().enumerate() {
            if t == SplitTag::Test {
                per_bin[binning.assign(ds.labels[i]).unwrap()] += 1;
            }
        }
        let counts = binning.counts(&ds.labels).unwrap();
        let nonempty: Vec<usize> = (0..10)
            .filter(|&b| counts[b] > 0)
            .map(|b| per_bin[b])
            .collect();
        assert!(nonempty.iter().all(|&c| c == nonempty[0] && c > 0));

        let mut tiny = ds.clone();
        tiny.labels[0] = 99.9;
        tiny.labels.truncate(50);
        tiny.tags.truncate(50);
        tiny.features = tiny.features.select_rows(&(0..50).collect::<Vec<_>>());
        let err = split(&tiny, [0.6, 0.2, 0.2], 5, Some(&binning)).unwrap_err();
        assert!(matches!(err, DataError::BalancedTestEmpty { .. }));
    }
}
