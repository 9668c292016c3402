use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{EvalRecolor, EvalWeight, ModelConfig};
use super::network::{BatchInputs, Model};
use super::ModelError;
use crate::data::Samples;
use crate::encoder::{BinAccumulator, RunningStats};
use crate::evidential::{self, NigPosterior};
use crate::label_space::LabelSpace;
use crate::metrics::{MetricReport, Predictions, ReportRegion};
use crate::numerics::{AdamConfig, AdamState, Graph, Tensor};

/// Rows per forward pass at evaluation.
const EVAL_CHUNK: usize = 1024;

/// Per-column affine standardization fitted on training data. Columns with
/// zero spread keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub label_mean: f64,
    pub label_scale: f64,
}

fn mean_and_scale(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt();
    (
        mean,
        if scale > 0.0 && scale.is_finite() {
            scale
        } else {
            1.0
        },
    )
}

impl Standardizer {
    pub fn fit(samples: &Samples) -> Self {
        let cols = samples.x.cols();
        let (feature_mean, feature_scale) = (0..cols)
            .map(|c| mean_and_scale((0..samples.len()).map(move |r| samples.x.row(r)[c])))
            .unzip();
        let (label_mean, label_scale) = mean_and_scale(samples.y.iter().copied());
        Self {
            feature_mean,
            feature_scale,
            label_mean,
            label_scale,
        }
    }

    pub fn features(&self, x: &Tensor) -> Tensor {
        let cols = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.feature_mean[i % cols]) / self.feature_scale[i % cols])
            .collect();
        Tensor::matrix(x.rows(), cols, data).expect("shape preserved")
    }

    pub fn labels(&self, y: &[f64]) -> Tensor {
        let data: Vec<f64> = y
            .iter()
            .map(|&v| (v - self.label_mean) / self.label_scale)
            .collect();
        Tensor::matrix(y.len(), 1, data).expect("column")
    }

    pub fn unscale_label(&self, v: f64) -> f64 {
        v * self.label_scale + self.label_mean
    }

    /// Maps a posterior over standardized labels to label units.
    pub fn unscale_posterior(&self, p: &NigPosterior) -> NigPosterior {
        NigPosterior {
            gamma: self.unscale_label(p.gamma),
            beta: p.beta * self.label_scale * self.label_scale,
            ..*p
        }
    }
}

/// Inference wrapper around a model and its frozen training state.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    pub model: &'a Model,
    pub scaler: &'a Standardizer,
    pub running: Option<&'a RunningStats>,
    pub space: &'a LabelSpace,
}

impl Predictor<'_> {
    fn pass(&self, x: &Tensor, bins: Option<&[usize]>) -> Result<Predictions, ModelError> {
        let config = &self.model.config;
        let n = x.rows();
        let weights: Vec<f64> = match (bins, config.eval_weight) {
            (Some(b), EvalWeight::PredictedBin) => {
                b.iter().map(|&b| self.space.weights[b]).collect()
            }
            _ => vec![1.0; n],
        };
        let running = self.running.filter(|r| r.ready);
        let mut mean = Vec::with_capacity(n);
        let mut posterior = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
            let recolor = match (bins, running, config.eval_recolor) {
                (Some(b), Some(r), EvalRecolor::PredictedBin) => {
                    let chunk: Vec<usize> = idx.iter().map(|&i| b[i]).collect();
                    Some(r.terms(&chunk))
                }
                _ => None,
            };
            let input = BatchInputs {
                x: x.select_rows(&idx),
                y: None,
                weights: Tensor::matrix(idx.len(), 1, idx.iter().map(|&i| weights[i]).collect())?,
                recolor,
                noise: None,
            };
            let mut g = Graph::new();
            let leaves = self.model.leaves(&mut g, false);
            let fwd = self.model.forward(&mut g, &leaves, &input)?;
            match fwd.nig {
                Some(nig) => {
                    for i in 0..idx.len() {
                        let p = self
                            .scaler
                            .unscale_posterior(&evidential::posterior_at(&g, nig, i));
                        mean.push(p.gamma);
                        posterior.push(p);
                    }
                }
                None => mean.extend(
                    g.value(fwd.prediction)
                        .data()
                        .iter()
                        .map(|&v| self.scaler.unscale_label(v)),
                ),
            }
        }
        if !config.variant.is_evidential() {
            return Ok(Predictions::point(mean));
        }
        let variance = posterior
            .iter()
            .map(|p| evidential::predict(p).variance)
            .collect();
        Ok(Predictions {
            mean,
            variance: Some(variance),
            posterior: Some(posterior),
        })
    }

    /// Predictions in label units. When either evaluation mode looks up the
    /// predicted bin, a first identity pass with unit weights picks the bin.
    pub fn predict(&self, x: &Tensor) -> Result<Predictions, ModelError> {
        let x = self.scaler.features(x);
        let config = &self.model.config;
        let uses_bins = (config.variant.has_encoder()
            && config.eval_recolor == EvalRecolor::PredictedBin)
            || (config.variant.has_vir_head() && config.eval_weight == EvalWeight::PredictedBin);
        let first = self.pass(&x, None)?;
        if !uses_bins {
            return Ok(first);
        }
        let bins: Vec<usize> = first
            .mean
            .iter()
            .map(|&m| self.space.binning.assign_clamped(m))
            .collect();
        self.pass(&x, Some(&bins))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "val_MAE_all")]
    pub val_mae_all: Option<f64>,
    #[serde(rename = "val_MAE_few")]
    pub val_mae_few: Option<f64>,
    #[serde(rename = "val_NLL_all")]
    pub val_nll_all: Option<f64>,
    pub lr: f64,
}

pub fn write_epoch_log<W: std::io::Write>(log: &[EpochLog], out: W) -> Result<(), ModelError> {
    let mut w = csv::Writer::from_writer(out);
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// State at the epoch with the lowest validation MAE (the last epoch when
    /// there is no validation data).
    pub best: Checkpoint,
    /// State after the final epoch.
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

struct Trainer<'a> {
    config: &'a ModelConfig,
    space: &'a LabelSpace,
    scaler: Standardizer,
    model: Model,
    adam: AdamState,
    running: Option<RunningStats>,
}

impl Trainer<'_> {
    fn checkpoint(&self, epoch: usize) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            config_hash: self.config.hash(),
            input_dim: self.model.input_dim,
            params: self.model.params.clone(),
            running: self.running.clone(),
            adam: self.adam.clone(),
            epoch,
            scaler: self.scaler.clone(),
            label_space: self.space.clone(),
        }
    }

    fn validate(&self, val: &Samples) -> Result<Option<MetricReport>, ModelError> {
        if val.is_empty() {
            return Ok(None);
        }
        let predictor = Predictor {
            model: &self.model,
            scaler: &self.scaler,
            running: self.running.as_ref(),
            space: self.space,
        };
        let preds = predictor.predict(&val.x)?;
        Ok(Some(MetricReport::compute(&preds, &val.y, self.space)?))
    }
}

/// Trains one model. Features and labels are standardized on `train`; the
/// label space supplies bins, importance weights and the smoothing kernel.
/// Shuffling and latent noise come from separate streams of `config.seed`.
pub fn train(
    config: &ModelConfig,
    train: &Samples,
    val: &Samples,
    space: &LabelSpace,
) -> Result<TrainOutcome, ModelError> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::Config("training set is empty".into()));
    }
    if config.kernel != space.kernel {
        return Err(ModelError::Config(
            "model kernel differs from the label-space kernel".into(),
        ));
    }
    let model = Model::new(config, train.x.cols())?;
    let adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
    )?;
    let num_bins = space.num_bins();
    let dim = config.latent_dim;
    let mut t = Trainer {
        config,
        space,
        scaler: Standardizer::fit(train),
        model,
        adam,
        running: config
            .variant
            .has_encoder()
            .then(|| RunningStats::new(num_bins, dim, config.momentum)),
    };
    let kernel_weights = space.kernel_weights();
    let x = t.scaler.features(&train.x);
    let y = t.scaler.labels(&train.y);
    let bins: Vec<usize> = train
        .y
        .iter()
        .map(|&v| space.binning.assign_clamped(v))
        .collect();
    let weights: Vec<f64> = bins.iter().map(|&b| space.weights[b]).collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.seed);
    noise_rng.set_stream(2);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut last_good = t.checkpoint(0);

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        t.adam.set_lr(lr);
        order.shuffle(&mut shuffle_rng);
        let mut acc = BinAccumulator::new(num_bins, dim);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let batch_bins: Vec<usize> = batch.iter().map(|&i| bins[i]).collect();
            let recolor = t
                .running
                .as_ref()
                .filter(|r| r.ready)
                .map(|r| r.terms(&batch_bins));
            let noise = config.variant.has_encoder().then(|| {
                let data = (0..batch.len() * dim)
                    .map(|_| StandardNormal.sample(&mut noise_rng))
                    .collect();
                Tensor::matrix(batch.len(), dim, data).expect("noise shape")
            });
            let input = BatchInputs {
                x: x.select_rows(batch),
                y: Some(y.select_rows(batch)),
                weights: Tensor::matrix(
                    batch.len(),
                    1,
                    batch.iter().map(|&i| weights[i]).collect(),
                )?,
                recolor,
                noise,
            };
            let out = t.model.step(&input)?;
            let grads_finite = out.grads.iter().all(|g| g.all_finite());
            if !out.loss.total.is_finite() || out.grads.is_empty() || !grads_finite {
                let rows: Vec<usize> = out.non_finite.iter().map(|&r| batch[r]).collect();
                return Err(ModelError::Diverged {
                    epoch,
                    step,
                    detail: format!(
                        "loss {} with non-finite terms at training rows {rows:?}",
                        out.loss.total
                    ),
                    last_good: Some(Box::new(last_good)),
                });
            }
            t.adam.step(&mut t.model.params, &out.grads)?;
            if let Some((mean, var)) = &out.repr {
                acc.push_rows(&batch_bins, mean, var);
            }
            loss_sum += out.loss.total * batch.len() as f64;
        }
        if let Some(running) = t.running.as_mut() {
            running.update(&acc, &kernel_weights);
        }
        let report = t.validate(val)?;
        let metric = |region, f: fn(&crate::metrics::RegionMetrics) -> Option<f64>| {
            report.as_ref().and_then(|r| r.metric(region, f))
        };
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_mae_all: metric(ReportRegion::All, |m| Some(m.mae)),
            val_mae_few: metric(ReportRegion::Few, |m| Some(m.mae)),
            val_nll_all: metric(ReportRegion::All, |m| m.nll),
            lr,
        };
        last_good = t.checkpoint(epoch + 1);
        let score = entry.val_mae_all.unwrap_or(f64::INFINITY);
        if best.as_ref().is_none_or(|(s, _)| score < *s) || entry.val_mae_all.is_none() {
            best = Some((score, last_good.clone()));
        }
        log.push(entry);
    }
    let (_, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        last: last_good,
        log,
    })
}
