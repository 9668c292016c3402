//! Probabilistic representations and their label-neighborhood calibration:
//! per-bin statistics of statistics, kernel smoothing of those statistics,
//! whitening–recoloring, running statistics, sampling and the KL term.

use serde::{Deserialize, Serialize};

use crate::label_space::KernelWeights;
use crate::numerics::{Graph, NumericsError, Tensor, Var};

/// Floor for every variance channel.
pub const EPS_VAR: f64 = 1e-6;

type Result<T> = std::result::Result<T, NumericsError>;

/// Diagonal Gaussian representation of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbRepr {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Graph handles for a batch of representations, each `[N, D]`.
#[derive(Debug, Clone, Copy)]
pub struct ReprVars {
    pub mean: Var,
    pub var: Var,
}

/// Splits a `[N, 2D]` encoder output: identity on the first half,
/// `softplus + EPS_VAR` on the second.
pub fn encode(g: &mut Graph, raw: Var, dim: usize) -> Result<ReprVars> {
    let mean = g.slice_cols(raw, 0, dim)?;
    let var_raw = g.slice_cols(raw, dim, dim)?;
    let var = g.softplus(var_raw, 1.0)?;
    let var = g.shift(var, EPS_VAR);
    Ok(ReprVars { mean, var })
}

/// Per-bin sufficient statistics; merging two accumulators equals
/// accumulating the union.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAccumulator {
    num_bins: usize,
    dim: usize,
    counts: Vec<usize>,
    sum_mean: Vec<f64>,
    sum_var: Vec<f64>,
    /// Σ (zΣ + (zμ)²)
    sum_second: Vec<f64>,
}

impl BinAccumulator {
    pub fn new(num_bins: usize, dim: usize) -> Self {
        Self {
            num_bins,
            dim,
            counts: vec![0; num_bins],
            sum_mean: vec![0.0; num_bins * dim],
            sum_var: vec![0.0; num_bins * dim],
            sum_second: vec![0.0; num_bins * dim],
        }
    }

    pub fn num_bins(&self) -> usize {
        self.num_bins
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn push(&mut self, bin: usize, mean: &[f64], var: &[f64]) {
        debug_assert_eq!(mean.len(), self.dim);
        self.counts[bin] += 1;
        let base = bin * self.dim;
        for d in 0..self.dim {
            self.sum_mean[base + d] += mean[d];
            self.sum_var[base + d] += var[d];
            self.sum_second[base + d] += var[d] + mean[d] * mean[d];
        }
    }

    /// Adds every row of `[N, D]` mean/variance tensors under its bin.
    pub fn push_rows(&mut self, bins: &[usize], mean: &Tensor, var: &Tensor) {
        for (r, &b) in bins.iter().enumerate() {
            self.push(b, mean.row(r), var.row(r));
        }
    }

    pub fn merge(&mut self, other: &BinAccumulator) {
        assert_eq!((self.num_bins, self.dim), (other.num_bins, other.dim));
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.sum_mean.iter_mut().zip(&other.sum_mean) {
            *a += b;
        }
        for (a, b) in self.sum_var.iter_mut().zip(&other.sum_var) {
            *a += b;
        }
        for (a, b) in self.sum_second.iter_mut().zip(&other.sum_second) {
            *a += b;
        }
    }

    /// Statistics of each non-empty bin; empty bins have count 0 and zero
    /// values.
    pub fn bin_stats(&self) -> BinStats {
        let mut stats = BinStats::zeros(self.num_bins, self.dim);
        for b in 0..self.num_bins {
            if let Some((m, v, s)) = self.finalize(self.counts[b], b * self.dim) {
                stats.set(b, &m, &v, &s);
                stats.counts[b] = self.counts[b];
            }
        }
        stats
    }

    /// Statistics of all samples pooled into one group.
    pub fn pooled(&self) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n: usize = self.counts.iter().sum();
        let dim = self.dim;
        let total = |src: &[f64], d: usize| (0..self.num_bins).map(|b| src[b * dim + d]).sum();
        let mut pooled = BinAccumulator::new(1, dim);
        pooled.counts[0] = n;
        for d in 0..dim {
            pooled.sum_mean[d] = total(&self.sum_mean, d);
            pooled.sum_var[d] = total(&self.sum_var, d);
            pooled.sum_second[d] = total(&self.sum_second, d);
        }
        pooled.finalize(n, 0)
    }

    fn finalize(&self, n: usize, base: usize) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mut mean = vec![0.0; self.dim];
        let mut var = vec![0.0; self.dim];
        let mut sigma = vec![0.0; self.dim];
        for d in 0..self.dim {
            mean[d] = self.sum_mean[base + d] / nf;
            var[d] = self.sum_var[base + d] / (nf * nf);
            let raw = self.sum_second[base + d] / nf - (var[d] + mean[d] * mean[d]);
            sigma[d] = raw.max(EPS_VAR);
        }
        Some((mean, var, sigma))
    }
}

/// Per-bin statistics of statistics, stored as `[B, D]` tensors:
/// `mean` is μ_b^μ, `var` is μ_b^Σ and `sigma` is Σ_b^μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub sigma: Tensor,
    pub counts: Vec<usize>,
}

impl BinStats {
    pub fn zeros(num_bins: usize, dim: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[num_bins, dim]),
            var: Tensor::zeros(&[num_bins, dim]),
            sigma: Tensor::full(&[num_bins, dim], EPS_VAR),
            counts: vec![0; num_bins],
        }
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }

    fn set(&mut self, b: usize, mean: &[f64], var: &[f64], sigma: &[f64]) {
        let dim = self.dim();
        self.mean.data_mut()[b * dim..(b + 1) * dim].copy_from_slice(mean);
        self.var.data_mut()[b * dim..(b + 1) * dim].copy_from_slice(var);
        self.sigma.data_mut()[b * dim..(b + 1) * dim].copy_from_slice(sigma);
    }
}

/// Statistics of the samples in `bins`, grouped by bin.
pub fn bin_statistics(bins: &[usize], mean: &Tensor, var: &Tensor, num_bins: usize) -> BinStats {
    let mut acc = BinAccumulator::new(num_bins, mean.cols());
    acc.push_rows(bins, mean, var);
    acc.bin_stats()
}

/// Kernel-smoothed statistics: μ̃^μ and Σ̃^μ use k̂, μ̃^Σ uses k̂² with no
/// renormalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedBinStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub sigma: Tensor,
}

pub fn smooth_statistics(stats: &BinStats, weights: &KernelWeights) -> SmoothedBinStats {
    let (b, dim) = (stats.num_bins(), stats.dim());
    assert_eq!(
        weights.num_bins(),
        b,
        "kernel and statistics disagree on bin count"
    );
    let by_column = |src: &Tensor, squared: bool| {
        let mut out = Tensor::zeros(&[b, dim]);
        let mut column = vec![0.0; b];
        for d in 0..dim {
            for (i, c) in column.iter_mut().enumerate() {
                *c = src.data()[i * dim + d];
            }
            let smoothed = if squared {
                weights.apply_squared(&column)
            } else {
                weights.apply(&column)
            };
            for (i, v) in smoothed.into_iter().enumerate() {
                out.data_mut()[i * dim + d] = v;
            }
        }
        out
    };
    SmoothedBinStats {
        mean: by_column(&stats.mean, false),
        var: by_column(&stats.var, true),
        sigma: by_column(&stats.sigma, false).map(|s| s.max(EPS_VAR)),
    }
}

/// Per-row constants of the whitening–recoloring map for a batch.
#[derive(Debug, Clone)]
pub struct RecolorTerms {
    pub bin_mean: Tensor,
    pub bin_var: Tensor,
    pub scale: Tensor,
    pub smooth_mean: Tensor,
    pub smooth_var: Tensor,
}

impl RecolorTerms {
    pub fn gather(bins: &[usize], stats: &BinStats, smoothed: &SmoothedBinStats) -> Self {
        let dim = stats.dim();
        let n = bins.len();
        let pick = |src: &Tensor| {
            let mut data = Vec::with_capacity(n * dim);
            for &b in bins {
                data.extend_from_slice(&src.data()[b * dim..(b + 1) * dim]);
            }
            Tensor::matrix(n, dim, data).expect("rows of width dim")
        };
        let sigma = pick(&stats.sigma);
        let smooth_sigma = pick(&smoothed.sigma);
        let scale = smooth_sigma
            .zip_map(&sigma, "recolor", |s, r| (s / r).sqrt())
            .expect("same shape");
        Self {
            bin_mean: pick(&stats.mean),
            bin_var: pick(&stats.var),
            scale,
            smooth_mean: pick(&smoothed.mean),
            smooth_var: pick(&smoothed.var),
        }
    }
}

/// z̃^μ = (z^μ − μ_b^μ)·√(Σ̃_b^μ/Σ_b^μ) + μ̃_b^μ and
/// z̃^Σ = (z^Σ + μ_b^Σ)·√(Σ̃_b^μ/Σ_b^μ) + μ̃_b^Σ; statistics are constants.
pub fn whiten_recolor(g: &mut Graph, repr: ReprVars, terms: &RecolorTerms) -> Result<ReprVars> {
    let bin_mean = g.constant(terms.bin_mean.clone());
    let bin_var = g.constant(terms.bin_var.clone());
    let scale = g.constant(terms.scale.clone());
    let smooth_mean = g.constant(terms.smooth_mean.clone());
    let smooth_var = g.constant(terms.smooth_var.clone());

    let centered = g.sub(repr.mean, bin_mean)?;
    let scaled = g.mul(centered, scale)?;
    let mean = g.add(scaled, smooth_mean)?;

    let shifted = g.add(repr.var, bin_var)?;
    let scaled = g.mul(shifted, scale)?;
    let var = g.add(scaled, smooth_var)?;
    Ok(ReprVars { mean, var })
}

/// Scalar form of [`whiten_recolor`] for one sample in bin `b`.
pub fn whiten_recolor_repr(
    repr: &ProbRepr,
    b: usize,
    stats: &BinStats,
    smoothed: &SmoothedBinStats,
) -> ProbRepr {
    let terms = RecolorTerms::gather(&[b], stats, smoothed);
    let row = |t: &Tensor| t.row(0).to_vec();
    let (bm, bv, s, sm, sv) = (
        row(&terms.bin_mean),
        row(&terms.bin_var),
        row(&terms.scale),
        row(&terms.smooth_mean),
        row(&terms.smooth_var),
    );
    ProbRepr {
        mean: (0..repr.mean.len())
            .map(|d| (repr.mean[d] - bm[d]) * s[d] + sm[d])
            .collect(),
        var: (0..repr.var.len())
            .map(|d| (repr.var[d] + bv[d]) * s[d] + sv[d])
            .collect(),
    }
}

/// Exponential moving averages of the raw per-bin statistics plus their
/// smoothed counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub momentum: f64,
    pub raw: BinStats,
    pub smoothed: SmoothedBinStats,
    /// Bins that have received data at least once.
    pub observed: Vec<bool>,
    /// False until the first update.
    pub ready: bool,
}

impl RunningStats {
    pub fn new(num_bins: usize, dim: usize, momentum: f64) -> Self {
        assert!(
            (0.0..1.0).contains(&momentum),
            "momentum must lie in [0, 1)"
        );
        let raw = BinStats::zeros(num_bins, dim);
        let smoothed = SmoothedBinStats {
            mean: raw.mean.clone(),
            var: raw.var.clone(),
            sigma: raw.sigma.clone(),
        };
        Self {
            momentum,
            raw,
            smoothed,
            observed: vec![false; num_bins],
            ready: false,
        }
    }

    /// Folds one epoch of representations in. Bins seen for the first time
    /// take the epoch value; bins never seen hold the pooled statistics of
    /// the first epoch.
    pub fn update(&mut self, epoch: &BinAccumulator, weights: &KernelWeights) {
        let stats = epoch.bin_stats();
        let dim = stats.dim();
        if !self.ready {
            if let Some((m, v, s)) = epoch.pooled() {
                for b in 0..stats.num_bins() {
                    self.raw.set(b, &m, &v, &s);
                }
            }
        }
        let m = self.momentum;
        for b in 0..stats.num_bins() {
            if stats.counts[b] == 0 {
                continue;
            }
            let range = b * dim..(b + 1) * dim;
            let blend = |old: &mut Tensor, new: &Tensor, first: bool| {
                for (o, &n) in old.data_mut()[range.clone()]
                    .iter_mut()
                    .zip(&new.data()[range.clone()])
                {
                    *o = if first { n } else { m * *o + (1.0 - m) * n };
                }
            };
            let first = !self.observed[b];
            blend(&mut self.raw.mean, &stats.mean, first);
            blend(&mut self.raw.var, &stats.var, first);
            blend(&mut self.raw.sigma, &stats.sigma, first);
            self.raw.counts[b] = stats.counts[b];
            self.observed[b] = true;
        }
        self.ready = true;
        self.smoothed = smooth_statistics(&self.raw, weights);
    }

    pub fn terms(&self, bins: &[usize]) -> RecolorTerms {
        RecolorTerms::gather(bins, &self.raw, &self.smoothed)
    }
}

/// z = z̃^μ + √z̃^Σ ⊙ ε, with `noise` shaped like the mean.
pub fn reparameterize(g: &mut Graph, repr: ReprVars, noise: &Tensor) -> Result<Var> {
    let std = g.sqrt(repr.var)?;
    let eps = g.constant(noise.clone());
    let jitter = g.mul(std, eps)?;
    g.add(repr.mean, jitter)
}

/// Batch mean of ½Σ_d (Σ + μ² − 1 − ln Σ).
pub fn kl_to_standard_normal(g: &mut Graph, repr: ReprVars) -> Result<Var> {
    let rows = g.value(repr.mean).rows() as f64;
    let mean_sq = g.square(repr.mean);
    let log_var = g.ln(repr.var)?;
    let a = g.add(repr.var, mean_sq)?;
    let b = g.sub(a, log_var)?;
    let c = g.shift(b, -1.0);
    let total = g.sum(c);
    Ok(g.scale(total, 0.5 / rows))
}

pub fn kl_repr(repr: &ProbRepr) -> f64 {
    0.5 * repr
        .mean
        .iter()
        .zip(&repr.var)
        .map(|(&m, &v)| v + m * m - 1.0 - v.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_space::Kernel;
    use proptest::prelude::*;

    fn stats_1d(mean: &[f64], var: &[f64], sigma: &[f64]) -> BinStats {
        let b = mean.len();
        BinStats {
            mean: Tensor::matrix(b, 1, mean.to_vec()).unwrap(),
            var: Tensor::matrix(b, 1, var.to_vec()).unwrap(),
            sigma: Tensor::matrix(b, 1, sigma.to_vec()).unwrap(),
            counts: vec![1; b],
        }
    }

    #[test]
    fn encode_zero_backbone() {
        let mut g = Graph::new();
        let raw = g.constant(Tensor::zeros(&[3, 4]));
        let r = encode(&mut g, raw, 2).unwrap();
        assert_eq!(g.value(r.mean).shape(), &[3, 2]);
        assert!(g.value(r.mean).data().iter().all(|&v| v == 0.0));
        for &v in g.value(r.var).data() {
            assert!((v - (2f64.ln() + EPS_VAR)).abs() < 1e-15);
        }
    }

    #[test]
    fn bin_statistics_examples() {
        let one = bin_statistics(
            &[0],
            &Tensor::matrix(1, 1, vec![1.0]).unwrap(),
            &Tensor::matrix(1, 1, vec![0.5]).unwrap(),
            1,
        );
        assert_eq!(one.mean.data(), &[1.0]);
        assert_eq!(one.var.data(), &[0.5]);
        assert_eq!(one.sigma.data(), &[EPS_VAR]);

        let two = bin_statistics(
            &[0, 0],
            &Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap(),
            &Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap(),
            1,
        );
        assert_eq!(two.mean.data(), &[1.0]);
        assert_eq!(two.var.data(), &[0.0]);
        assert_eq!(two.sigma.data(), &[1.0]);

        let same = bin_statistics(
            &[0, 0, 0],
            &Tensor::matrix(3, 1, vec![0.7; 3]).unwrap(),
            &Tensor::matrix(3, 1, vec![0.0; 3]).unwrap(),
            2,
        );
        assert_eq!(same.sigma.data()[0], EPS_VAR);
        assert_eq!(same.counts, vec![3, 0]);
    }

    #[test]
    fn smoothing_examples() {
        let single = stats_1d(&[0.3], &[0.2], &[1.5]);
        let kw = KernelWeights::new(&Kernel::default(), 1).unwrap();
        let s = smooth_statistics(&single, &kw);
        assert_eq!(s.mean.data(), &[0.3]);
        assert_eq!(s.var.data(), &[0.2]);
        assert_eq!(s.sigma.data(), &[1.5]);

        let half =
            KernelWeights::from_rows(vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)]])
                .unwrap();
        let s = smooth_statistics(&stats_1d(&[0.0, 2.0], &[0.4, 0.4], &[1.0, 1.0]), &half);
        assert_eq!(s.mean.data(), &[1.0, 1.0]);
        for &v in s.var.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        assert_eq!(s.sigma.data(), &[1.0, 1.0]);
    }

    #[test]
    fn whiten_recolor_scalar_example() {
        let stats = stats_1d(&[1.0], &[0.5], &[4.0]);
        let smoothed = SmoothedBinStats {
            mean: Tensor::matrix(1, 1, vec![2.0]).unwrap(),
            var: Tensor::matrix(1, 1, vec![0.25]).unwrap(),
            sigma: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
        };
        let out = whiten_recolor_repr(
            &ProbRepr {
                mean: vec![3.0],
                var: vec![0.2],
            },
            0,
            &stats,
            &smoothed,
        );
        assert!((out.mean[0] - 3.0).abs() < 1e-15);
        assert!((out.var[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn running_stats_ema_and_bootstrap() {
        let kw = KernelWeights::new(
            &Kernel {
                radius: 0,
                ..Kernel::default()
            },
            3,
        )
        .unwrap();
        let mut rs = RunningStats::new(3, 1, 0.9);
        let mut acc = BinAccumulator::new(3, 1);
        acc.push(0, &[1.0], &[0.0]);
        acc.push(1, &[3.0], &[0.0]);
        rs.update(&acc, &kw);
        assert_eq!(rs.raw.mean.data(), &[1.0, 3.0, 2.0]);
        assert_eq!(rs.observed, vec![true, true, false]);

        let mut acc = BinAccumulator::new(3, 1);
        acc.push(0, &[2.0], &[0.0]);
        rs.update(&acc, &kw);
        assert!((rs.raw.mean.data()[0] - 1.1).abs() < 1e-15);
        assert_eq!(rs.raw.mean.data()[1], 3.0);
        assert_eq!(rs.raw.mean.data()[2], 2.0);

        let mut zero = RunningStats::new(3, 1, 0.0);
        zero.update(&acc, &kw);
        let mut acc2 = BinAccumulator::new(3, 1);
        acc2.push(0, &[5.0], &[0.1]);
        zero.update(&acc2, &kw);
        assert_eq!(zero.raw, {
            let mut s = acc2.bin_stats();
            // unseen bins keep earlier values
            s.mean.data_mut()[1] = zero.raw.mean.data()[1];
            s.mean.data_mut()[2] = zero.raw.mean.data()[2];
            s.sigma.data_mut()[1] = zero.raw.sigma.data()[1];
            s.sigma.data_mut()[2] = zero.raw.sigma.data()[2];
            s.var.data_mut()[1] = zero.raw.var.data()[1];
            s.var.data_mut()[2] = zero.raw.var.data()[2];
            s.counts = zero.raw.counts.clone();
            s
        });
    }

    #[test]
    fn reparameterize_and_kl() {
        let mut g = Graph::new();
        let mean = g.constant(Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap());
        let var = g.constant(Tensor::matrix(1, 2, vec![1e-6, 4.0]).unwrap());
        let repr = ReprVars { mean, var };
        let z = reparameterize(&mut g, repr, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(g.value(z).data(), &[0.5, -1.0]);
        let z =
            reparameterize(&mut g, repr, &Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap()).unwrap();
        assert!((g.value(z).data()[0] - 0.501).abs() < 1e-12);
        assert!((g.value(z).data()[1] - 1.0).abs() < 1e-12);

        assert_eq!(
            kl_repr(&ProbRepr {
                mean: vec![0.0],
                var: vec![1.0]
            }),
            0.0
        );
        assert_eq!(
            kl_repr(&ProbRepr {
                mean: vec![1.0],
                var: vec![1.0]
            }),
            0.5
        );
        let mut g = Graph::new();
        let mean = g.constant(Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap());
        let var = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let kl = kl_to_standard_normal(&mut g, ReprVars { mean, var }).unwrap();
        assert!((g.value(kl).item() - 0.25).abs() < 1e-15);
    }

    fn batch(n: usize, dim: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-3.0f64..3.0, n * dim),
            prop::collection::vec(0.01f64..2.0, n * dim),
        )
    }

    proptest! {
        #[test]
        fn identity_when_smoothed_equals_raw((m, v) in batch(6, 3)) {
            let mean = Tensor::matrix(6, 3, m.clone()).unwrap();
            let var = Tensor::matrix(6, 3, v.clone()).unwrap();
            let bins = [0, 1, 0, 1, 1, 0];
            let mut stats = bin_statistics(&bins, &mean, &var, 2);
            stats.var = Tensor::zeros(&[2, 3]);
            let smoothed = SmoothedBinStats {
                mean: stats.mean.clone(),
                var: stats.var.clone(),
                sigma: stats.sigma.clone(),
            };
            let mut g = Graph::new();
            let repr = ReprVars { mean: g.constant(mean.clone()), var: g.constant(var.clone()) };
            let out = whiten_recolor(&mut g, repr, &RecolorTerms::gather(&bins, &stats, &smoothed)).unwrap();
            // (z − μ) + μ rounds, so equality is to the last few ulps
            for (a, b) in g.value(out.mean).data().iter().zip(mean.data()) {
                prop_assert!((a - b).abs() <= 1e-14);
            }
            prop_assert_eq!(g.value(out.var), &var);
        }

        #[test]
        fn recolored_bin_moments_match_smoothed(m in prop::collection::vec(-3.0f64..3.0, 8)) {
            // with deterministic inputs Σ_b^μ is exactly the spread of the means
            let bins = [0, 0, 0, 0, 1, 1, 1, 1];
            let mean = Tensor::matrix(8, 1, m).unwrap();
            let var = Tensor::zeros(&[8, 1]);
            let stats = bin_statistics(&bins, &mean, &var, 2);
            prop_assume!(stats.sigma.data().iter().all(|&s| s > 1e-3));
            let kw = KernelWeights::new(&Kernel::default(), 2).unwrap();
            let smoothed = smooth_statistics(&stats, &kw);
            let mut g = Graph::new();
            let repr = ReprVars { mean: g.constant(mean), var: g.constant(var) };
            let out = whiten_recolor(&mut g, repr, &RecolorTerms::gather(&bins, &stats, &smoothed)).unwrap();
            let z = g.value(out.mean).data().to_vec();
            for b in 0..2 {
                let group = &z[b * 4..b * 4 + 4];
                let mu: f64 = group.iter().sum::<f64>() / 4.0;
                let spread: f64 = group.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 4.0;
                prop_assert!((mu - smoothed.mean.data()[b]).abs() < 1e-10);
                prop_assert!((spread - smoothed.sigma.data()[b]).abs() < 1e-8);
            }
        }

        #[test]
        fn merged_accumulators_match_union(
            (m, v) in batch(10, 2),
            split in 1usize..9,
        ) {
            let bins: Vec<usize> = (0..10).map(|i| i % 3).collect();
            let mean = Tensor::matrix(10, 2, m).unwrap();
            let var = Tensor::matrix(10, 2, v).unwrap();
            let mut whole = BinAccumulator::new(3, 2);
            whole.push_rows(&bins, &mean, &var);
            let mut a = BinAccumulator::new(3, 2);
            let mut b = BinAccumulator::new(3, 2);
            for (r, &bin) in bins.iter().enumerate() {
                let target = if r < split { &mut a } else { &mut b };
                target.push(bin, mean.row(r), var.row(r));
            }
            a.merge(&b);
            let (x, y) = (whole.bin_stats(), a.bin_stats());
            prop_assert_eq!(x.counts, y.counts);
            for (p, q) in x.mean.data().iter().zip(y.mean.data()) {
                prop_assert!((p - q).abs() < 1e-10);
            }
            for (p, q) in x.sigma.data().iter().zip(y.sigma.data()) {
                prop_assert!((p - q).abs() < 1e-10);
            }
            for (p, q) in x.var.data().iter().zip(y.var.data()) {
                prop_assert!((p - q).abs() < 1e-10);
            }
        }

        #[test]
        fn kl_nonnegative(m in prop::collection::vec(-5.0f64..5.0, 4), v in prop::collection::vec(1e-3f64..10.0, 4)) {
            let repr = ProbRepr { mean: m, var: v };
            prop_assert!(kl_repr(&repr) >= 0.0);
        }

        #[test]
        fn recolored_variance_positive((m, v) in batch(5, 2)) {
            let bins = [0, 1, 2, 1, 0];
            let mean = Tensor::matrix(5, 2, m).unwrap();
            let var = Tensor::matrix(5, 2, v).unwrap();
            let stats = bin_statistics(&bins, &mean, &var, 3);
            let smoothed = smooth_statistics(&stats, &KernelWeights::new(&Kernel::default(), 3).unwrap());
            let mut g = Graph::new();
            let repr = ReprVars { mean: g.constant(mean), var: g.constant(var) };
            let out = whiten_recolor(&mut g, repr, &RecolorTerms::gather(&bins, &stats, &smoothed)).unwrap();
            prop_assert!(g.value(out.var).data().iter().all(|&x| x > 0.0));
        }
    }
}
