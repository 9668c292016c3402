use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::evidential::NigPrior;
use crate::label_space::Kernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Backbone and a scalar head trained with squared error.
    Vanilla,
    /// Backbone and a four-parameter NIG head.
    Der,
    /// Probabilistic encoder with smoothed statistics, reweighted NIG head
    /// and decoder.
    Vir,
    /// The VIR encoder with a scalar squared-error head.
    VirEncoderOnly,
    /// Deterministic backbone with the reweighted NIG head.
    VirPredictorOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Vanilla,
        Variant::Der,
        Variant::Vir,
        Variant::VirEncoderOnly,
        Variant::VirPredictorOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Der => "der",
            Variant::Vir => "vir",
            Variant::VirEncoderOnly => "vir-encoder-only",
            Variant::VirPredictorOnly => "vir-predictor-only",
        }
    }

    pub fn has_encoder(self) -> bool {
        matches!(self, Variant::Vir | Variant::VirEncoderOnly)
    }

    /// Uses the importance-weighted NIG posterior.
    pub fn has_vir_head(self) -> bool {
        matches!(self, Variant::Vir | Variant::VirPredictorOnly)
    }

    pub fn is_evidential(self) -> bool {
        matches!(
            self,
            Variant::Der | Variant::Vir | Variant::VirPredictorOnly
        )
    }

    pub fn head_width(self) -> usize {
        match self {
            Variant::Vanilla | Variant::VirEncoderOnly => 1,
            Variant::Der => 4,
            Variant::Vir | Variant::VirPredictorOnly => 3,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}`")))
    }
}

/// Which bin statistics whiten–recolor uses when the label is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalRecolor {
    /// No transform at evaluation.
    Identity,
    /// Frozen running statistics of the bin of a first-pass prediction.
    PredictedBin,
}

/// Which importance weight the NIG posterior uses when the label is unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalWeight {
    Unit,
    PredictedBin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    /// Weight of the evidential regularizer.
    pub lambda: f64,
    pub kernel: Kernel,
    pub prior: NigPrior,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs at whose start the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    /// Running-statistics momentum.
    pub momentum: f64,
    pub recon_weight: f64,
    pub kl_weight: f64,
    /// Multiplies each sample's prediction loss by its importance weight.
    /// Unset means on for the encoder-only variant, whose scalar head has no
    /// posterior to carry the weight, and off otherwise.
    pub loss_reweighting: Option<bool>,
    pub eval_recolor: EvalRecolor,
    pub eval_weight: EvalWeight,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Vir,
            hidden: vec![64, 64],
            latent_dim: 16,
            lambda: 0.1,
            kernel: Kernel::default(),
            prior: NigPrior::default(),
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            decay_epochs: vec![60, 90],
            decay_factor: 0.1,
            momentum: 0.9,
            recon_weight: 1.0,
            kl_weight: 0.01,
            loss_reweighting: None,
            eval_recolor: EvalRecolor::Identity,
            eval_weight: EvalWeight::PredictedBin,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return fail("layer widths must be positive".into());
        }
        if self.decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!(
                "decay_epochs must be strictly increasing, got {:?}",
                self.decay_epochs
            ));
        }
        if !(self.lr > 0.0) || !(self.decay_factor > 0.0) {
            return fail("lr and decay_factor must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.recon_weight >= 0.0 && self.kl_weight >= 0.0) {
            return fail("loss weights must be non-negative".into());
        }
        self.prior.validate().map_err(ModelError::Config)?;
        self.kernel
            .validate()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn reweights_loss(&self) -> bool {
        self.loss_reweighting
            .unwrap_or(self.variant == Variant::VirEncoderOnly)
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.decay_factor.powi(decays as i32)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
