use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{derive_seed, parse_json, resolve_output_dir};
use super::{claim_output_dir, read_file, to_json, write_file, ExperimentError, Result};
use crate::data::sha256_hex;
use crate::label_space::Kernel;
use crate::par::{self, Execution};
use crate::risk::{
    exhaustive, ips_moments, mc_experiment, random_world, theorem_bound, theory_rows, true_risk,
    vir_moments, RiskWorld, WorldSpec, MAX_EXHAUSTIVE_SAMPLES,
};

pub(super) const ARTIFACTS: [&str; 2] = ["estimators.csv", "bounds.json"];

fn default_eta() -> f64 {
    0.05
}

fn default_draws() -> usize {
    100_000
}

fn default_jobs() -> usize {
    1
}

fn default_prefix() -> String {
    "random".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorldConfig {
    /// The two-bin world of [`RiskWorld::canonical`].
    Canonical {
        #[serde(default)]
        id: Option<String>,
        /// Use `P̃ = P`.
        #[serde(default)]
        identity_smoothing: bool,
    },
    Explicit {
        id: String,
        losses: Vec<Vec<f64>>,
        propensity: Vec<f64>,
        /// Defaults to `propensity` smoothed with `kernel`.
        #[serde(default)]
        smoothed: Option<Vec<f64>>,
        #[serde(default)]
        kernel: Option<Kernel>,
        delta: f64,
    },
    /// `count` worlds from `spec`, world `k` seeded by `seed + k`.
    Random {
        #[serde(default = "default_prefix")]
        prefix: String,
        spec: WorldSpec,
        count: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        identity_smoothing: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub worlds: Vec<WorldConfig>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Monte Carlo draws per world; 0 skips simulation.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl TheoryConfig {
    pub fn load(path: &Path) -> Result<Self> {
        parse_json(path, &read_file(path)?)
    }

    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("output_dir");
        obj.remove("jobs");
        sha256_hex(
            serde_json::to_string(&v)
                .expect("value serializes")
                .as_bytes(),
        )
    }

    /// Every world with its id, in config order.
    pub fn build_worlds(&self) -> Result<Vec<(String, RiskWorld)>> {
        let mut out = Vec::new();
        for w in &self.worlds {
            match w {
                WorldConfig::Canonical {
                    id,
                    identity_smoothing,
                } => {
                    let mut world = RiskWorld::canonical();
                    if *identity_smoothing {
                        world.smoothed = world.propensity.clone();
                    }
                    out.push((id.clone().unwrap_or_else(|| "canonical".into()), world));
                }
                WorldConfig::Explicit {
                    id,
                    losses,
                    propensity,
                    smoothed,
                    kernel,
                    delta,
                } => {
                    let world = RiskWorld::new(
                        losses.clone(),
                        propensity.clone(),
                        smoothed.clone().unwrap_or_else(|| propensity.clone()),
                        *delta,
                    )?;
                    let world = match smoothed {
                        Some(_) => world,
                        None => world.smoothed_by(&(*kernel).unwrap_or_default())?,
                    };
                    out.push((id.clone(), world));
                }
                WorldConfig::Random {
                    prefix,
                    spec,
                    count,
                    seed,
                    identity_smoothing,
                } => {
                    for k in 0..*count {
                        let mut world = random_world(spec, seed + k as u64)?;
                        if *identity_smoothing {
                            world.smoothed = world.propensity.clone();
                        }
                        out.push((format!("{prefix}-{k}"), world));
                    }
                }
            }
        }
        let mut ids: Vec<&str> = out.iter().map(|(id, _)| id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(ExperimentError::Config(format!(
                "world id `{}` is used twice",
                w[0]
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub draws: usize,
    pub radius: f64,
    pub violation_rate: f64,
    pub mc_sigma: f64,
    /// `violation_rate ≤ η + 3σ`.
    pub within: bool,
    /// |mean of IPS draws − R| in standard errors.
    pub ips_mean_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldCheck {
    pub world_id: String,
    pub bins: usize,
    pub samples: usize,
    pub true_risk: f64,
    pub vir_expectation: f64,
    pub bias_bound: f64,
    /// |E[VIR] − R| ≤ bias bound.
    pub bias_within_bound: bool,
    /// |E[IPS] − R| by enumeration, for worlds small enough.
    pub exhaustive_ips_error: Option<f64>,
    pub ips_variance: f64,
    pub vir_variance: f64,
    pub tail: Option<TailCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheorySummary {
    pub config_hash: String,
    pub eta: f64,
    pub worlds: Vec<WorldCheck>,
}

fn check_world(
    config: &TheoryConfig,
    id: &str,
    world: &RiskWorld,
) -> Result<(WorldCheck, Vec<crate::risk::TheoryRow>)> {
    let mc = if config.draws > 0 {
        Some(mc_experiment(
            world,
            config.draws,
            derive_seed(config.seed, id),
            config.eta,
            Execution::Parallel,
        )?)
    } else {
        None
    };
    let rows = theory_rows(id, world, config.eta, mc.as_ref())?;
    let risk = true_risk(world);
    let vir = vir_moments(world);
    let bound = theorem_bound(world, vir.mean, 1, config.eta)?;
    let exhaustive_ips_error = if world.num_samples() <= MAX_EXHAUSTIVE_SAMPLES {
        Some((exhaustive(world)?.ips.mean - risk).abs())
    } else {
        None
    };
    let tail = mc.map(|m| TailCheck {
        draws: m.draws,
        radius: m.radius,
        violation_rate: m.violation_rate,
        mc_sigma: m.mc_sigma,
        within: m.violation_rate <= config.eta + 3.0 * m.mc_sigma,
        ips_mean_z: if m.ips.stderr > 0.0 {
            (m.ips.moments.mean - risk).abs() / m.ips.stderr
        } else {
            0.0
        },
    });
    let check = WorldCheck {
        world_id: id.to_string(),
        bins: world.num_bins(),
        samples: world.num_samples(),
        true_risk: risk,
        vir_expectation: vir.mean,
        bias_bound: bound.bias,
        bias_within_bound: (risk - vir.mean).abs() <= bound.bias,
        exhaustive_ips_error,
        ips_variance: ips_moments(world).variance,
        vir_variance: vir.variance,
        tail,
    };
    Ok((check, rows))
}

/// Writes `estimators.csv` (one row per world and estimator) and
/// `bounds.json` (per-world bound checks).
pub fn run_theory(
    config: &TheoryConfig,
    output_dir: Option<&Path>,
    force: bool,
    jobs: Option<usize>,
) -> Result<TheorySummary> {
    if !(config.eta > 0.0 && config.eta < 1.0) {
        return Err(ExperimentError::Config(format!(
            "eta must lie in (0, 1), got {}",
            config.eta
        )));
    }
    let worlds = config.build_worlds()?;
    let dir = resolve_output_dir(output_dir.unwrap_or(&config.output_dir));
    claim_output_dir(&dir, &ARTIFACTS, force)?;
    let jobs = jobs.unwrap_or(config.jobs);
    let mode = if jobs == 1 {
        Execution::Serial
    } else {
        Execution::Parallel
    };
    let results = par::with_jobs(jobs, || {
        par::map(mode, &worlds, |(id, w)| check_world(config, id, w))
    });
    let mut checks = Vec::with_capacity(worlds.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        let (check, rows) = r?;
        for row in rows {
            w.serialize(row)?;
        }
        checks.push(check);
    }
    let csv = w
        .into_inner()
        .map_err(|e| ExperimentError::Csv(e.into_error().into()))?;
    write_file(&dir.join("estimators.csv"), csv)?;
    let summary = TheorySummary {
        config_hash: config.hash(),
        eta: config.eta,
        worlds: checks,
    };
    write_file(&dir.join("bounds.json"), to_json(&summary)?)?;
    Ok(summary)
}
