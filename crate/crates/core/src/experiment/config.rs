use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{read_file, ExperimentError, Result};
use crate::data::{sha256_hex, CsvSchema, SyntheticSpec};
use crate::model::{ModelConfig, Variant};

/// When set, relative output directories resolve under this path instead of
/// the working directory.
pub const OUTPUT_ROOT_ENV: &str = "VIR_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// The default benchmark: train on every generated sample, validate and
    /// test on balanced draws from the same generator.
    AgedbMini {
        #[serde(default = "default_val_per_bin")]
        val_per_bin: usize,
        #[serde(default = "default_test_per_bin")]
        test_per_bin: usize,
    },
    /// Same protocol with an explicit generator; `spec.seed` is replaced by
    /// each cell's seed.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default = "default_val_per_bin")]
        val_per_bin: usize,
        #[serde(default = "default_test_per_bin")]
        test_per_bin: usize,
    },
    /// A CSV file split by seed. A relative path resolves against the config
    /// file's directory.
    Csv {
        path: PathBuf,
        schema: CsvSchema,
        num_bins: usize,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
        #[serde(default = "default_true")]
        balanced_test: bool,
    },
}

fn default_val_per_bin() -> usize {
    40
}

fn default_test_per_bin() -> usize {
    200
}

fn default_fractions() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

fn default_true() -> bool {
    true
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub variant: Variant,
    /// Label in artifacts; defaults to the variant name. Must be unique.
    #[serde(default)]
    pub name: Option<String>,
    /// `ModelConfig` fields replaced for this variant, applied after the
    /// shared `base` overrides.
    #[serde(default)]
    pub overrides: Map<String, Value>,
}

impl VariantSpec {
    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.variant.as_str().to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    /// `ModelConfig` fields replaced for every variant.
    #[serde(default)]
    pub base: Map<String, Value>,
    pub variants: Vec<VariantSpec>,
    pub seeds: Vec<u64>,
    /// λ values run for every evidential variant, in addition to the main grid.
    #[serde(default)]
    pub lambda_sweep: Vec<f64>,
    /// Bin counts run for every variant, in addition to the main grid.
    #[serde(default)]
    pub bin_sweep: Vec<usize>,
    /// Fit scalar calibration weights on the validation set of evidential
    /// cells and report calibrated test NLL.
    #[serde(default)]
    pub calibrate: bool,
    pub output_dir: PathBuf,
    /// Cells run concurrently; 0 uses every core.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    /// Directory relative dataset paths resolve against; set by
    /// [`load_config`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ExperimentError::Config(m));
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.variants.is_empty() {
            return fail("at least one variant is required".into());
        }
        let mut labels: Vec<String> = self.variants.iter().map(VariantSpec::label).collect();
        labels.sort();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return fail(format!("variant name `{}` is used twice", w[0]));
        }
        if labels
            .iter()
            .any(|l| l.is_empty() || l.contains(['/', '\\', ',']))
        {
            return fail("variant names must be non-empty and free of '/', '\\' and ','".into());
        }
        if let Some(l) = self
            .lambda_sweep
            .iter()
            .find(|l| !(l.is_finite() && **l >= 0.0))
        {
            return fail(format!(
                "lambda sweep value {l} must be finite and non-negative"
            ));
        }
        if self.bin_sweep.contains(&0) {
            return fail("bin sweep values must be positive".into());
        }
        for spec in &self.variants {
            self.model_config(spec, None, 0)?.validate()?;
        }
        Ok(())
    }

    /// The variant's model configuration: defaults for the variant, then
    /// `base`, then the variant's overrides, then `lambda` if given. The seed
    /// is set to `seed`.
    pub fn model_config(
        &self,
        spec: &VariantSpec,
        lambda: Option<f64>,
        seed: u64,
    ) -> Result<ModelConfig> {
        let mut value = serde_json::to_value(ModelConfig::for_variant(spec.variant))?;
        let obj = value
            .as_object_mut()
            .expect("config serializes to an object");
        for (k, v) in self.base.iter().chain(&spec.overrides) {
            if !obj.contains_key(k) {
                return Err(ExperimentError::Config(format!(
                    "variant `{}`: unknown model config key `{k}`",
                    spec.label()
                )));
            }
            if k == "variant" {
                return Err(ExperimentError::Config(format!(
                    "variant `{}`: set the variant with the `variant` field, not an override",
                    spec.label()
                )));
            }
            obj.insert(k.clone(), v.clone());
        }
        let mut config: ModelConfig = serde_json::from_value(value)
            .map_err(|e| ExperimentError::Config(format!("variant `{}`: {e}", spec.label())))?;
        if let Some(l) = lambda {
            config.lambda = l;
        }
        config.seed = seed;
        Ok(config)
    }

    /// Hash of everything that determines results: the config minus the
    /// output location and parallelism, plus the seed offset.
    pub fn hash(&self, seed_offset: u64) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let obj = v.as_object_mut().expect("object");
        obj.remove("output_dir");
        obj.remove("jobs");
        obj.insert("seed_offset".into(), seed_offset.into());
        sha256_hex(
            serde_json::to_string(&v)
                .expect("value serializes")
                .as_bytes(),
        )
    }

    pub fn dataset_path(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}

/// Parses a JSON document, reporting syntax and schema errors with their
/// line and column.
pub(crate) fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| ExperimentError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut config: ExperimentConfig = parse_json(path, &read_file(path)?)?;
    config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.validate()?;
    Ok(config)
}

/// Relative paths resolve under `$VIR_OUTPUT_ROOT` when it is set.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Seed for one cell, derived from the run seed and the cell's key alone, so
/// adding or removing other cells never changes it.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let digest = sha256_hex(format!("{seed}/{key}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}
