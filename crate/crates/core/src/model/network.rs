use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant};
use super::ModelError;
use crate::encoder::{self, RecolorTerms, ReprVars};
use crate::evidential::{self, NigVars};
use crate::numerics::{Graph, Param, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    backbone: Vec<Linear>,
    encoder: Option<Linear>,
    head: Linear,
    decoder: Vec<Linear>,
}

/// Named layer shapes, in parameter order.
fn architecture(config: &ModelConfig, input_dim: usize) -> Vec<(String, usize, usize)> {
    let mut layers = Vec::new();
    let mut width = input_dim;
    for (i, &h) in config.hidden.iter().enumerate() {
        layers.push((format!("backbone.{i}"), width, h));
        width = h;
    }
    let d = config.latent_dim;
    if config.variant.has_encoder() {
        layers.push(("encoder".to_string(), width, 2 * d));
        width = d;
    }
    layers.push(("head".to_string(), width, config.variant.head_width()));
    if config.variant.has_encoder() {
        let mut w = d;
        for (i, &h) in config.hidden.iter().rev().enumerate() {
            layers.push((format!("decoder.{i}"), w, h));
            w = h;
        }
        layers.push(("decoder.out".to_string(), w, input_dim));
    }
    layers
}

fn layout(config: &ModelConfig) -> Layout {
    let mut next = 0;
    let mut take = || {
        let l = Linear {
            w: next,
            b: next + 1,
        };
        next += 2;
        l
    };
    let backbone = config.hidden.iter().map(|_| take()).collect();
    let has_encoder = config.variant.has_encoder();
    let encoder = has_encoder.then(&mut take);
    let head = take();
    let decoder = if has_encoder {
        (0..=config.hidden.len()).map(|_| take()).collect()
    } else {
        Vec::new()
    };
    Layout {
        backbone,
        encoder,
        head,
        decoder,
    }
}

/// Per-batch inputs in standardized units.
#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub x: Tensor,
    /// `[N, 1]`; required for losses.
    pub y: Option<Tensor>,
    /// `[N, 1]` importance weights.
    pub weights: Tensor,
    /// Whitening–recoloring constants; `None` is the identity.
    pub recolor: Option<RecolorTerms>,
    /// `[N, D]` standard-normal draws; `None` uses the latent mean.
    pub noise: Option<Tensor>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[N, 1]` point prediction.
    pub prediction: Var,
    pub nig: Option<NigVars>,
    /// Encoder output before whitening–recoloring.
    pub repr: Option<ReprVars>,
    /// After whitening–recoloring.
    pub calibrated: Option<ReprVars>,
    pub reconstruction: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    /// `[N, 1]` prediction loss per sample, after any reweighting.
    pub per_sample: Var,
    pub prediction: Var,
    pub regularizer: Option<Var>,
    pub reconstruction: Option<Var>,
    pub kl: Option<Var>,
}

/// Batch-mean loss terms as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean NLL, or mean squared error for scalar heads.
    pub prediction: f64,
    pub regularizer: f64,
    pub reconstruction: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub input_dim: usize,
    pub params: Vec<Param>,
    layout: Layout,
}

impl Model {
    /// Fan-in scaled uniform initialization from `config.seed`.
    pub fn new(config: &ModelConfig, input_dim: usize) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        for (name, fan_in, fan_out) in architecture(config, input_dim) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<f64> {
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            let w = Tensor::matrix(fan_in, fan_out, draw(fan_in * fan_out))?;
            let b = Tensor::vector(draw(fan_out));
            params.push(Param::new(format!("{name}.weight"), w));
            params.push(Param::new(format!("{name}.bias"), b));
        }
        Ok(Self {
            config: config.clone(),
            input_dim,
            params,
            layout: layout(config),
        })
    }

    /// Rebuilds a model around stored parameters, checking their shapes.
    pub fn from_params(
        config: &ModelConfig,
        input_dim: usize,
        params: Vec<Param>,
    ) -> Result<Self, ModelError> {
        let fresh = Self::new(config, input_dim)?;
        if fresh.params.len() != params.len()
            || fresh
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.name != b.name || a.value.shape() != b.value.shape())
        {
            return Err(ModelError::Config(
                "stored parameters do not match the configured architecture".into(),
            ));
        }
        Ok(Self { params, ..fresh })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Leaf nodes for every parameter; tracked when `train` is set.
    pub fn leaves(&self, g: &mut Graph, train: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if train {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn linear(g: &mut Graph, leaves: &[Var], l: Linear, x: Var) -> Result<Var, ModelError> {
        let h = g.matmul(x, leaves[l.w])?;
        Ok(g.add(h, leaves[l.b])?)
    }

    fn mlp(
        g: &mut Graph,
        leaves: &[Var],
        layers: &[Linear],
        mut h: Var,
    ) -> Result<Var, ModelError> {
        for &l in layers {
            let a = Self::linear(g, leaves, l, h)?;
            h = g.relu(a);
        }
        Ok(h)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        leaves: &[Var],
        input: &BatchInputs,
    ) -> Result<ForwardVars, ModelError> {
        let x = g.constant(input.x.clone());
        let features = Self::mlp(g, leaves, &self.layout.backbone, x)?;
        let variant = self.config.variant;
        let mut out = ForwardVars {
            prediction: features,
            nig: None,
            repr: None,
            calibrated: None,
            reconstruction: None,
        };
        let head_input = if let Some(enc) = self.layout.encoder {
            let raw = Self::linear(g, leaves, enc, features)?;
            let repr = encoder::encode(g, raw, self.config.latent_dim)?;
            let calibrated = match &input.recolor {
                Some(terms) => encoder::whiten_recolor(g, repr, terms)?,
                None => repr,
            };
            let z = match &input.noise {
                Some(noise) => encoder::reparameterize(g, calibrated, noise)?,
                None => calibrated.mean,
            };
            let (hidden, last) = self.layout.decoder.split_at(self.layout.decoder.len() - 1);
            let h = Self::mlp(g, leaves, hidden, z)?;
            out.reconstruction = Some(Self::linear(g, leaves, last[0], h)?);
            out.repr = Some(repr);
            out.calibrated = Some(calibrated);
            z
        } else {
            features
        };
        let raw = Self::linear(g, leaves, self.layout.head, head_input)?;
        match variant {
            Variant::Vanilla | Variant::VirEncoderOnly => out.prediction = raw,
            Variant::Der => {
                let nig = evidential::der_head(g, raw)?;
                out.prediction = nig.gamma;
                out.nig = Some(nig);
            }
            Variant::Vir | Variant::VirPredictorOnly => {
                let head = evidential::head_forward(g, raw)?;
                let nig = evidential::posterior_vars(g, head, &self.config.prior, &input.weights)?;
                out.prediction = nig.gamma;
                out.nig = Some(nig);
            }
        }
        Ok(out)
    }

    /// Batch-mean objective: prediction loss (NLL + λ·regularizer, or squared
    /// error) plus the weighted reconstruction and KL terms.
    pub fn loss(
        &self,
        g: &mut Graph,
        input: &BatchInputs,
        fwd: &ForwardVars,
    ) -> Result<LossVars, ModelError> {
        let y = input
            .y
            .as_ref()
            .ok_or_else(|| ModelError::Config("loss needs labels".into()))?;
        let y = g.constant(y.clone());
        let (per_sample, regularizer) = match fwd.nig {
            Some(nig) => {
                let nll = evidential::nll_vars(g, nig, y)?;
                let reg = evidential::regularizer_vars(g, nig, y)?;
                let scaled = g.scale(reg, self.config.lambda);
                (g.add(nll, scaled)?, Some(g.mean(reg)))
            }
            None => {
                let resid = g.sub(fwd.prediction, y)?;
                (g.square(resid), None)
            }
        };
        let per_sample = if self.config.reweights_loss() {
            let w = g.constant(input.weights.clone());
            g.mul(per_sample, w)?
        } else {
            per_sample
        };
        let prediction = g.mean(per_sample);
        let mut total = prediction;
        let mut reconstruction = None;
        let mut kl = None;
        if let (Some(x_hat), Some(calibrated)) = (fwd.reconstruction, fwd.calibrated) {
            let rows = input.x.rows() as f64;
            let x = g.constant(input.x.clone());
            let diff = g.sub(x_hat, x)?;
            let sq = g.square(diff);
            let sum = g.sum(sq);
            let recon = g.scale(sum, 0.5 / rows);
            let kl_term = encoder::kl_to_standard_normal(g, calibrated)?;
            let r = g.scale(recon, self.config.recon_weight);
            let k = g.scale(kl_term, self.config.kl_weight);
            total = g.add(total, r)?;
            total = g.add(total, k)?;
            reconstruction = Some(recon);
            kl = Some(kl_term);
        }
        Ok(LossVars {
            total,
            per_sample,
            prediction,
            regularizer,
            reconstruction,
            kl,
        })
    }

    pub fn breakdown(g: &Graph, loss: &LossVars) -> LossBreakdown {
        let get = |v: Option<Var>| v.map(|v| g.value(v).item()).unwrap_or(0.0);
        LossBreakdown {
            total: g.value(loss.total).item(),
            prediction: g.value(loss.prediction).item(),
            regularizer: get(loss.regularizer),
            reconstruction: get(loss.reconstruction),
            kl: get(loss.kl),
        }
    }

    /// Loss terms and the gradient of the total with respect to every
    /// parameter, in parameter order.
    pub fn loss_and_grads(
        &self,
        input: &BatchInputs,
    ) -> Result<(LossBreakdown, Vec<Tensor>), ModelError> {
        let out = self.step(input)?;
        Ok((out.loss, out.grads))
    }

    /// One differentiated pass over a batch.
    pub fn step(&self, input: &BatchInputs) -> Result<StepOutput, ModelError> {
        let mut g = Graph::new();
        let leaves = self.leaves(&mut g, true);
        let fwd = self.forward(&mut g, &leaves, input)?;
        let loss = self.loss(&mut g, input, &fwd)?;
        let breakdown = Self::breakdown(&g, &loss);
        let non_finite: Vec<usize> = g
            .value(loss.per_sample)
            .data()
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| i)
            .collect();
        if !breakdown.total.is_finite() || !non_finite.is_empty() {
            return Ok(StepOutput {
                loss: breakdown,
                grads: Vec::new(),
                repr: None,
                non_finite,
            });
        }
        g.backward(loss.total)?;
        let grads = leaves
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros_like(&p.value))
            })
            .collect();
        let repr = fwd
            .repr
            .map(|r| (g.value(r.mean).clone(), g.value(r.var).clone()));
        Ok(StepOutput {
            loss: breakdown,
            grads,
            repr,
            non_finite,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: LossBreakdown,
    /// Empty when the loss is not finite.
    pub grads: Vec<Tensor>,
    /// Encoder mean and variance before whitening–recoloring.
    pub repr: Option<(Tensor, Tensor)>,
    /// Batch rows whose prediction loss is not finite.
    pub non_finite: Vec<usize>,
}
