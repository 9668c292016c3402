//! Estimators of a bin-balanced risk from partially observed data, their
//! exact moments by enumeration, the generalization bound's bias and
//! variance terms, and Monte Carlo checks of the tail bound.
//!
//! A world holds, per bin, the losses of every population member together
//! with the bin's observation propensity `P` and smoothed propensity `P̃`.
//! Each member is observed independently with probability `P` of its bin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::label_space::{smooth_density, Kernel, KernelWeights};
use crate::par::{self, Execution};

/// Largest world enumerated exhaustively (2¹² patterns).
pub const MAX_EXHAUSTIVE_SAMPLES: usize = 12;

/// Draws per independently seeded Monte Carlo chunk.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("invalid world: {0}")]
    World(String),
    #[error("{samples} samples exceed the enumeration cap of {max}")]
    TooLarge { samples: usize, max: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
}

pub type Result<T> = std::result::Result<T, RiskError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskWorld {
    /// Per-bin losses of every population member; no bin is empty.
    pub losses: Vec<Vec<f64>>,
    pub propensity: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// Upper bound on every loss.
    pub delta: f64,
}

impl RiskWorld {
    pub fn new(
        losses: Vec<Vec<f64>>,
        propensity: Vec<f64>,
        smoothed: Vec<f64>,
        delta: f64,
    ) -> Result<Self> {
        let w = Self {
            losses,
            propensity,
            smoothed,
            delta,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(RiskError::World(m));
        let b = self.losses.len();
        if b == 0 {
            return fail("no bins".into());
        }
        if self.propensity.len() != b || self.smoothed.len() != b {
            return fail(format!(
                "{b} bins but {} propensities and {} smoothed propensities",
                self.propensity.len(),
                self.smoothed.len()
            ));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return fail(format!(
                "loss bound must be finite and non-negative, got {}",
                self.delta
            ));
        }
        for (i, bin) in self.losses.iter().enumerate() {
            if bin.is_empty() {
                return fail(format!("bin {i} has no population"));
            }
            if let Some(d) = bin.iter().find(|&&d| !(0.0..=self.delta).contains(&d)) {
                return fail(format!(
                    "loss {d} in bin {i} is outside [0, {}]",
                    self.delta
                ));
            }
        }
        for (name, ps) in [
            ("propensity", &self.propensity),
            ("smoothed propensity", &self.smoothed),
        ] {
            if let Some((i, p)) = ps.iter().enumerate().find(|(_, &p)| !(p > 0.0 && p <= 1.0)) {
                return fail(format!("{name} {p} of bin {i} is outside (0, 1]"));
            }
        }
        Ok(())
    }

    /// Two bins with losses {0.2, 0.4} and {0.6}, P = (0.8, 0.2),
    /// P̃ = (0.6, 0.4), Δ = 0.6.
    pub fn canonical() -> Self {
        Self::new(
            vec![vec![0.2, 0.4], vec![0.6]],
            vec![0.8, 0.2],
            vec![0.6, 0.4],
            0.6,
        )
        .expect("valid world")
    }

    pub fn num_bins(&self) -> usize {
        self.losses.len()
    }

    pub fn num_samples(&self) -> usize {
        self.losses.iter().map(Vec::len).sum()
    }

    /// Replaces `P̃` by the kernel-smoothed propensities.
    pub fn smoothed_by(mut self, kernel: &Kernel) -> Result<Self> {
        let kw = KernelWeights::new(kernel, self.num_bins())
            .map_err(|e| RiskError::Parameter(e.to_string()))?;
        self.smoothed = smooth_density(&self.propensity, &kw);
        self.validate()?;
        Ok(self)
    }

    /// `(bin, loss)` for every member, bins in order.
    fn members(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.losses
            .iter()
            .enumerate()
            .flat_map(|(i, bin)| bin.iter().map(move |&d| (i, d)))
    }
}

/// Observation indicators for every member, in [`RiskWorld`] member order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation(pub Vec<bool>);

impl Observation {
    /// Bit `k` of `mask` observes member `k`.
    pub fn from_mask(mask: u64, samples: usize) -> Self {
        Self((0..samples).map(|k| mask >> k & 1 == 1).collect())
    }
}

fn check(world: &RiskWorld, obs: &Observation) {
    assert_eq!(obs.0.len(), world.num_samples(), "one indicator per member");
}

pub fn true_risk(world: &RiskWorld) -> f64 {
    world
        .losses
        .iter()
        .map(|bin| bin.iter().sum::<f64>() / bin.len() as f64)
        .sum::<f64>()
        / world.num_bins() as f64
}

/// Mean observed loss; `None` when nothing is observed.
pub fn naive_estimator(world: &RiskWorld, obs: &Observation) -> Option<f64> {
    check(world, obs);
    let (sum, count) = world
        .members()
        .zip(&obs.0)
        .filter(|(_, &o)| o)
        .fold((0.0, 0usize), |(s, c), ((_, d), _)| (s + d, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn weighted_estimator(world: &RiskWorld, obs: &Observation, denom: &[f64]) -> f64 {
    check(world, obs);
    let b = world.num_bins() as f64;
    let mut sums = vec![0.0; world.num_bins()];
    for ((i, d), &o) in world.members().zip(&obs.0) {
        if o {
            sums[i] += d / denom[i];
        }
    }
    sums.iter()
        .zip(&world.losses)
        .map(|(s, bin)| s / bin.len() as f64)
        .sum::<f64>()
        / b
}

pub fn ips_estimator(world: &RiskWorld, obs: &Observation) -> f64 {
    weighted_estimator(world, obs, &world.propensity)
}

pub fn vir_estimator(world: &RiskWorld, obs: &Observation) -> f64 {
    weighted_estimator(world, obs, &world.smoothed)
}

pub fn pattern_probability(world: &RiskWorld, obs: &Observation) -> f64 {
    check(world, obs);
    world
        .members()
        .zip(&obs.0)
        .map(|((i, _), &o)| {
            let p = world.propensity[i];
            if o {
                p
            } else {
                1.0 - p
            }
        })
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

/// Closed-form moments of the estimator with per-bin denominators `denom`:
/// each member contributes an independent scaled Bernoulli term.
fn weighted_moments(world: &RiskWorld, denom: &[f64]) -> Moments {
    let b = world.num_bins() as f64;
    let mut mean = 0.0;
    let mut variance = 0.0;
    for (i, bin) in world.losses.iter().enumerate() {
        let p = world.propensity[i];
        let scale = 1.0 / (b * bin.len() as f64 * denom[i]);
        mean += (p / denom[i]) * (bin.iter().sum::<f64>() / bin.len() as f64);
        variance += bin.iter().map(|d| (d * scale).powi(2)).sum::<f64>() * p * (1.0 - p);
    }
    Moments {
        mean: mean / b,
        variance,
    }
}

pub fn ips_moments(world: &RiskWorld) -> Moments {
    weighted_moments(world, &world.propensity)
}

pub fn vir_moments(world: &RiskWorld) -> Moments {
    weighted_moments(world, &world.smoothed)
}

/// Moments over every observation pattern, weighted by its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exhaustive {
    pub true_risk: f64,
    /// Conditional on at least one observation; `None` when that event has
    /// probability zero.
    pub naive: Option<Moments>,
    /// Probability that nothing is observed.
    pub empty_probability: f64,
    pub ips: Moments,
    pub vir: Moments,
    pub patterns: usize,
}

#[derive(Default)]
struct Accumulator {
    weight: f64,
    first: f64,
    second: f64,
}

impl Accumulator {
    fn push(&mut self, p: f64, v: f64) {
        self.weight += p;
        self.first += p * v;
        self.second += p * v * v;
    }

    fn moments(&self) -> Option<Moments> {
        (self.weight > 0.0).then(|| {
            let mean = self.first / self.weight;
            Moments {
                mean,
                variance: (self.second / self.weight - mean * mean).max(0.0),
            }
        })
    }
}

pub fn exhaustive(world: &RiskWorld) -> Result<Exhaustive> {
    let n = world.num_samples();
    if n > MAX_EXHAUSTIVE_SAMPLES {
        return Err(RiskError::TooLarge {
            samples: n,
            max: MAX_EXHAUSTIVE_SAMPLES,
        });
    }
    let (mut naive, mut ips, mut vir) = (
        Accumulator::default(),
        Accumulator::default(),
        Accumulator::default(),
    );
    let mut empty_probability = 0.0;
    let patterns = 1usize << n;
    for mask in 0..patterns as u64 {
        let obs = Observation::from_mask(mask, n);
        let p = pattern_probability(world, &obs);
        match naive_estimator(world, &obs) {
            Some(v) => naive.push(p, v),
            None => empty_probability += p,
        }
        ips.push(p, ips_estimator(world, &obs));
        vir.push(p, vir_estimator(world, &obs));
    }
    // Pattern probabilities sum to one up to rounding; the unconditional
    // moments keep that total rather than renormalizing.
    let plain = |a: &Accumulator| {
        let mean = a.first;
        Moments {
            mean,
            variance: (a.second - mean * mean).max(0.0),
        }
    };
    Ok(Exhaustive {
        true_risk: true_risk(world),
        naive: naive.moments(),
        empty_probability,
        ips: plain(&ips),
        vir: plain(&vir),
        patterns,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremBound {
    /// (Δ/|B|)·Σ|1 − P_i/P̃_i|.
    pub bias: f64,
    /// (Δ/|B|)·√(ln(2|H|/η)/2)·√(Σ 1/P̃_i²).
    pub variance: f64,
    /// `estimate + bias + variance`.
    pub total: f64,
}

fn check_confidence(hypotheses: usize, eta: f64) -> Result<()> {
    if hypotheses == 0 {
        return Err(RiskError::Parameter(
            "hypothesis count must be at least 1".into(),
        ));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(RiskError::Parameter(format!(
            "eta must lie in (0, 1), got {eta}"
        )));
    }
    Ok(())
}

fn deviation_radius(world: &RiskWorld, denom: &[f64], hypotheses: usize, eta: f64) -> f64 {
    let b = world.num_bins() as f64;
    let inv_sq: f64 = denom.iter().map(|p| 1.0 / (p * p)).sum();
    world.delta / b * ((2.0 * hypotheses as f64 / eta).ln() / 2.0).sqrt() * inv_sq.sqrt()
}

/// Deviation of the VIR estimator from its expectation that holds with
/// probability at least `1 − eta` for a single hypothesis.
pub fn lemma_radius(world: &RiskWorld, eta: f64) -> Result<f64> {
    check_confidence(1, eta)?;
    Ok(deviation_radius(world, &world.smoothed, 1, eta))
}

/// Bias and variance terms of the generalization bound around `estimate`,
/// a realized (or expected) value of the VIR estimator.
pub fn theorem_bound(
    world: &RiskWorld,
    estimate: f64,
    hypotheses: usize,
    eta: f64,
) -> Result<TheoremBound> {
    check_confidence(hypotheses, eta)?;
    let b = world.num_bins() as f64;
    let bias = world.delta / b
        * world
            .propensity
            .iter()
            .zip(&world.smoothed)
            .map(|(p, q)| (1.0 - p / q).abs())
            .sum::<f64>();
    let variance = deviation_radius(world, &world.smoothed, hypotheses, eta);
    Ok(TheoremBound {
        bias,
        variance,
        total: estimate + bias + variance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub moments: Moments,
    /// Standard error of the mean.
    pub stderr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub draws: usize,
    /// Over the draws with at least one observation.
    pub naive: Option<McEstimate>,
    pub empty_draws: usize,
    pub ips: McEstimate,
    pub vir: McEstimate,
    pub eta: f64,
    /// Exact E[VIR] the deviations are measured from.
    pub vir_expectation: f64,
    pub radius: f64,
    /// Draws whose VIR estimate deviates by more than `radius`.
    pub violations: usize,
    pub violation_rate: f64,
    /// √(η(1−η)/draws): the binomial standard deviation of the rate at η.
    pub mc_sigma: f64,
}

#[derive(Default, Clone, Copy)]
struct Sums {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Sums {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(&mut self, o: &Sums) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn estimate(&self) -> Option<McEstimate> {
        (self.n > 0).then(|| {
            let n = self.n as f64;
            let mean = self.sum / n;
            let variance = if self.n > 1 {
                ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            McEstimate {
                moments: Moments { mean, variance },
                stderr: (variance / n).sqrt(),
            }
        })
    }
}

#[derive(Default, Clone, Copy)]
struct ChunkResult {
    naive: Sums,
    ips: Sums,
    vir: Sums,
    empty: usize,
    violations: usize,
}

/// Samples `draws` observation patterns. Chunk `k` of 4096 draws uses stream
/// `k` of a ChaCha8 generator seeded with `seed`, so results do not depend
/// on the execution mode or thread count.
pub fn mc_experiment(
    world: &RiskWorld,
    draws: usize,
    seed: u64,
    eta: f64,
    mode: Execution,
) -> Result<McReport> {
    world.validate()?;
    if draws == 0 {
        return Err(RiskError::Parameter("need at least one draw".into()));
    }
    let radius = lemma_radius(world, eta)?;
    let expectation = vir_moments(world).mean;
    let n = world.num_samples();
    let chunks = draws.div_ceil(CHUNK);
    let results = par::map_range(mode, chunks, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let count = CHUNK.min(draws - k * CHUNK);
        let mut out = ChunkResult::default();
        let mut obs = Observation(vec![false; n]);
        let bins: Vec<usize> = world.members().map(|(i, _)| i).collect();
        for _ in 0..count {
            for (o, &i) in obs.0.iter_mut().zip(&bins) {
                *o = rng.random::<f64>() < world.propensity[i];
            }
            match naive_estimator(world, &obs) {
                Some(v) => out.naive.push(v),
                None => out.empty += 1,
            }
            out.ips.push(ips_estimator(world, &obs));
            let v = vir_estimator(world, &obs);
            out.vir.push(v);
            if (v - expectation).abs() > radius {
                out.violations += 1;
            }
        }
        out
    });
    let mut total = ChunkResult::default();
    for r in &results {
        total.naive.merge(&r.naive);
        total.ips.merge(&r.ips);
        total.vir.merge(&r.vir);
        total.empty += r.empty;
        total.violations += r.violations;
    }
    Ok(McReport {
        draws,
        naive: total.naive.estimate(),
        empty_draws: total.empty,
        ips: total.ips.estimate().expect("draws > 0"),
        vir: total.vir.estimate().expect("draws > 0"),
        eta,
        vir_expectation: expectation,
        radius,
        violations: total.violations,
        violation_rate: total.violations as f64 / draws as f64,
        mc_sigma: (eta * (1.0 - eta) / draws as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    /// Uniform on [0, Δ].
    Uniform,
    /// 0 or Δ with equal probability.
    TwoPoint,
}

/// Recipe for random long-tailed worlds: propensities decay geometrically
/// from 1 in the first bin to a random minimum in the last, and `P̃` is the
/// kernel-smoothed propensity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Inclusive range of the bin count.
    pub bins: [usize; 2],
    /// Inclusive range of members per bin.
    pub per_bin: [usize; 2],
    /// Range of the smallest propensity.
    pub min_propensity: [f64; 2],
    pub delta: f64,
    pub losses: LossFamily,
    pub kernel: Kernel,
}

impl WorldSpec {
    /// Worlds small enough to enumerate: 3–6 bins of 1–2 members, smallest
    /// propensity in [0.01, 0.05].
    pub fn tiny() -> Self {
        Self {
            bins: [3, 6],
            per_bin: [1, 2],
            min_propensity: [0.01, 0.05],
            delta: 1.0,
            losses: LossFamily::Uniform,
            kernel: Kernel::default(),
        }
    }

    /// Monte Carlo scale: 5–20 bins of 1–5 members.
    pub fn medium() -> Self {
        Self {
            bins: [5, 20],
            per_bin: [1, 5],
            ..Self::tiny()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(RiskError::Parameter(m));
        if self.bins[0] < 2 || self.bins[0] > self.bins[1] {
            return fail(format!(
                "bin range {:?} must be ordered and start at 2 or more",
                self.bins
            ));
        }
        if self.per_bin[0] < 1 || self.per_bin[0] > self.per_bin[1] {
            return fail(format!(
                "per-bin range {:?} must be ordered and positive",
                self.per_bin
            ));
        }
        let [a, b] = self.min_propensity;
        if !(a > 0.0 && a <= b && b <= 1.0) {
            return fail(format!(
                "minimum propensity range {:?} must lie in (0, 1]",
                self.min_propensity
            ));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return fail(format!("loss bound must be positive, got {}", self.delta));
        }
        self.kernel
            .validate()
            .map_err(|e| RiskError::Parameter(e.to_string()))
    }
}

pub fn random_world(spec: &WorldSpec, seed: u64) -> Result<RiskWorld> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bins = rng.random_range(spec.bins[0]..=spec.bins[1]);
    let p_min = if spec.min_propensity[0] == spec.min_propensity[1] {
        spec.min_propensity[0]
    } else {
        rng.random_range(spec.min_propensity[0]..spec.min_propensity[1])
    };
    let propensity: Vec<f64> = (0..bins)
        .map(|i| p_min.powf(i as f64 / (bins - 1) as f64))
        .collect();
    let losses = (0..bins)
        .map(|_| {
            let n = rng.random_range(spec.per_bin[0]..=spec.per_bin[1]);
            (0..n)
                .map(|_| match spec.losses {
                    LossFamily::Uniform => spec.delta * rng.random::<f64>(),
                    LossFamily::TwoPoint => {
                        if rng.random::<bool>() {
                            spec.delta
                        } else {
                            0.0
                        }
                    }
                })
                .collect()
        })
        .collect();
    RiskWorld::new(losses, propensity.clone(), propensity, spec.delta)?.smoothed_by(&spec.kernel)
}

/// One line of the estimator comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub world_id: String,
    pub estimator: String,
    #[serde(rename = "E")]
    pub expectation: f64,
    #[serde(rename = "Var")]
    pub variance: f64,
    /// True risk minus expectation.
    pub bias: f64,
    /// Bound on |bias|; absent for the naive estimator.
    pub bias_bound: Option<f64>,
    pub variance_term: Option<f64>,
    /// Monte Carlo rate of tail-bound violations, when simulated.
    pub violations: Option<f64>,
    #[serde(rename = "η")]
    pub eta: f64,
}

/// Rows for naive, IPS and VIR on one world. IPS and VIR use closed-form
/// moments; the naive row is enumerated when the world is small enough and
/// simulated from `mc` otherwise. `mc` also supplies the violation rate.
pub fn theory_rows(
    world_id: &str,
    world: &RiskWorld,
    eta: f64,
    mc: Option<&McReport>,
) -> Result<Vec<TheoryRow>> {
    check_confidence(1, eta)?;
    let risk = true_risk(world);
    let naive = if world.num_samples() <= MAX_EXHAUSTIVE_SAMPLES {
        exhaustive(world)?.naive
    } else {
        mc.and_then(|m| m.naive.map(|e| e.moments))
    };
    let ips = ips_moments(world);
    let vir = vir_moments(world);
    let ips_bound = {
        let as_ips = RiskWorld {
            smoothed: world.propensity.clone(),
            ..world.clone()
        };
        theorem_bound(&as_ips, ips.mean, 1, eta)?
    };
    let vir_bound = theorem_bound(world, vir.mean, 1, eta)?;
    let row = |estimator: &str,
               m: Moments,
               bound: Option<TheoremBound>,
               violations: Option<f64>| TheoryRow {
        world_id: world_id.to_string(),
        estimator: estimator.to_string(),
        expectation: m.mean,
        variance: m.variance,
        bias: risk - m.mean,
        bias_bound: bound.map(|b| b.bias),
        variance_term: bound.map(|b| b.variance),
        violations,
        eta,
    };
    let mut rows = Vec::with_capacity(3);
    if let Some(m) = naive {
        rows.push(row("naive", m, None, None));
    }
    rows.push(row("ips", ips, Some(ips_bound), None));
    rows.push(row(
        "vir",
        vir,
        Some(vir_bound),
        mc.map(|m| m.violation_rate),
    ));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn true_risk_examples() {
        let w = RiskWorld::canonical();
        assert!((true_risk(&w) - 0.45).abs() < 1e-15);
        let flat = RiskWorld::new(
            vec![vec![0.3; 2], vec![0.3]],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            1.0,
        )
        .unwrap();
        assert!((true_risk(&flat) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn estimator_examples() {
        let w = RiskWorld::canonical();
        let only_last = Observation(vec![false, false, true]);
        assert_eq!(naive_estimator(&w, &only_last), Some(0.6));
        assert_eq!(naive_estimator(&w, &Observation(vec![false; 3])), None);
        assert_eq!(ips_estimator(&w, &Observation(vec![false; 3])), 0.0);
        let all = Observation(vec![true; 3]);
        assert!((naive_estimator(&w, &all).unwrap() - 0.4).abs() < 1e-15);
        let certain = RiskWorld {
            propensity: vec![1.0, 1.0],
            smoothed: vec![1.0, 1.0],
            ..w.clone()
        };
        assert!((ips_estimator(&certain, &all) - true_risk(&certain)).abs() < 1e-15);
        let same = RiskWorld {
            smoothed: w.propensity.clone(),
            ..w
        };
        for mask in 0..8 {
            let o = Observation::from_mask(mask, 3);
            assert_eq!(ips_estimator(&same, &o), vir_estimator(&same, &o));
        }
    }

    #[test]
    fn canonical_world_by_enumeration() {
        let w = RiskWorld::canonical();
        let e = exhaustive(&w).unwrap();
        assert_eq!(e.patterns, 8);
        assert!((e.ips.mean - 0.45).abs() < 1e-12);
        assert!((e.vir.mean - 0.35).abs() < 1e-12);
        let naive = e.naive.unwrap();
        assert!(
            (naive.mean - e.true_risk).abs() > 0.01,
            "naive is biased: {}",
            naive.mean
        );
        let bound = theorem_bound(&w, e.vir.mean, 1, 0.05).unwrap();
        assert!((bound.bias - 0.25).abs() < 1e-12);
        assert!((e.true_risk - e.vir.mean).abs() <= bound.bias);
    }

    #[test]
    fn closed_form_moments_match_enumeration() {
        for seed in 0..20 {
            let w = random_world(&WorldSpec::tiny(), seed).unwrap();
            let e = exhaustive(&w).unwrap();
            for (exact, closed) in [(e.ips, ips_moments(&w)), (e.vir, vir_moments(&w))] {
                assert!((exact.mean - closed.mean).abs() < 1e-12);
                assert!(
                    (exact.variance - closed.variance).abs() < 1e-10 * closed.variance.max(1.0)
                );
            }
        }
    }

    #[test]
    fn bound_terms() {
        let w = RiskWorld::canonical();
        let same = RiskWorld {
            smoothed: w.propensity.clone(),
            ..w.clone()
        };
        assert_eq!(theorem_bound(&same, 0.0, 1, 0.05).unwrap().bias, 0.0);
        let v = |q: f64| {
            let w = RiskWorld {
                smoothed: vec![0.6, q],
                ..w.clone()
            };
            theorem_bound(&w, 0.0, 4, 0.05).unwrap().variance
        };
        assert!(v(0.5) < v(0.4));
        assert!(theorem_bound(&w, 0.0, 0, 0.05).is_err());
        assert!(theorem_bound(&w, 0.0, 1, 1.0).is_err());
    }

    #[test]
    fn certain_observation_has_no_variance() {
        let w = RiskWorld::new(
            vec![vec![0.1, 0.9], vec![0.5]],
            vec![1.0; 2],
            vec![1.0; 2],
            1.0,
        )
        .unwrap();
        let r = mc_experiment(&w, 1000, 1, 0.05, Execution::Serial).unwrap();
        assert_eq!((r.ips.moments.variance, r.vir.moments.variance), (0.0, 0.0));
        assert_eq!(r.naive.unwrap().moments.variance, 0.0);
    }

    #[test]
    fn monte_carlo_is_mode_independent() {
        let w = random_world(&WorldSpec::medium(), 3).unwrap();
        let a = mc_experiment(&w, 10_000, 7, 0.05, Execution::Serial).unwrap();
        let b = mc_experiment(&w, 10_000, 7, 0.05, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_worlds() {
        assert!(RiskWorld::new(vec![vec![]], vec![0.5], vec![0.5], 1.0).is_err());
        assert!(RiskWorld::new(vec![vec![2.0]], vec![0.5], vec![0.5], 1.0).is_err());
        assert!(RiskWorld::new(vec![vec![0.5]], vec![0.0], vec![0.5], 1.0).is_err());
        assert!(RiskWorld::new(vec![vec![0.5]], vec![0.5], vec![1.5], 1.0).is_err());
        let big = random_world(&WorldSpec::medium(), 0).unwrap();
        assert!(big.num_samples() <= MAX_EXHAUSTIVE_SAMPLES || exhaustive(&big).is_err());
    }

    #[test]
    fn rows_for_identical_propensities_have_zero_bias() {
        let w = RiskWorld::canonical();
        let same = RiskWorld {
            smoothed: w.propensity.clone(),
            ..w
        };
        for row in theory_rows("w", &same, 0.05, None).unwrap() {
            if row.estimator != "naive" {
                assert_eq!(row.bias, 0.0);
                assert_eq!(row.bias_bound, Some(0.0));
            }
        }
    }
}
