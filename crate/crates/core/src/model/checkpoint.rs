use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use super::train::{Predictor, Standardizer};
use super::ModelError;
use crate::data::Samples;
use crate::encoder::RunningStats;
use crate::label_space::LabelSpace;
use crate::metrics::{MetricReport, Predictions};
use crate::numerics::{AdamState, Param};

/// Everything needed to resume training or evaluate a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub config_hash: String,
    pub input_dim: usize,
    pub params: Vec<Param>,
    /// Present for encoder variants.
    pub running: Option<RunningStats>,
    pub adam: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub scaler: Standardizer,
    pub label_space: LabelSpace,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model, ModelError> {
        Model::from_params(&self.config, self.input_dim, self.params.clone())
    }

    pub fn predict(&self, samples: &Samples) -> Result<Predictions, ModelError> {
        let model = self.model()?;
        let predictor = Predictor {
            model: &model,
            scaler: &self.scaler,
            running: self.running.as_ref(),
            space: &self.label_space,
        };
        predictor.predict(&samples.x)
    }

    pub fn evaluate(&self, samples: &Samples) -> Result<(Predictions, MetricReport), ModelError> {
        let predictions = self.predict(samples)?;
        let report = MetricReport::compute(&predictions, &samples.y, &self.label_space)?;
        Ok((predictions, report))
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks the stored hash against the stored config.
    pub fn from_json(json: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(json)?;
        let hash = ck.config.hash();
        if hash != ck.config_hash {
            return Err(ModelError::Checkpoint(format!(
                "config hash mismatch: stored {}, computed {hash}",
                ck.config_hash
            )));
        }
        ck.model()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
