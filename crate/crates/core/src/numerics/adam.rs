use serde::{Deserialize, Serialize};

use super::{NumericsError, Result, Tensor};

/// A named trainable tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Param], config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) {
            return Err(NumericsError::Parameter {
                op: "adam",
                message: format!("learning rate must be positive, got {}", config.lr),
            });
        }
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros_like(&p.value))
            .collect();
        Ok(Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite or
    /// mis-shaped.
    pub fn step(&mut self, params: &mut [Param], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(NumericsError::Parameter {
                op: "adam",
                message: format!(
                    "expected {} parameters and gradients, got {} and {}",
                    self.first.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam",
                    left: p.value.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(NumericsError::NonFiniteGradient {
                    name: p.name.clone(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let values = p.value.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (k, &gk) in g.data().iter().enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                values[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Vec<Param> {
        vec![Param::new("w", Tensor::scalar(v))]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Param::new("w", Tensor::vector(vec![1.0, -2.0]))];
        let mut adam = AdamState::new(&p, AdamConfig::default()).unwrap();
        adam.step(&mut p, &[Tensor::vector(vec![0.0, 0.0])])
            .unwrap();
        assert_eq!(p[0].value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g² after bias correction, so the step is lr·g/(|g|+ε).
        let mut p = scalar_param(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(&p, cfg).unwrap();
        adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert!((p[0].value.item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
        // constant gradient keeps the bias-corrected ratio at one
        adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        assert!((p[0].value.item() + 0.2).abs() < 1e-8);
        assert_eq!(adam.step, 2);
    }

    #[test]
    fn deterministic_for_identical_inputs() {
        let mut a = vec![Param::new("w", Tensor::vector(vec![0.5, 1.5, -0.25]))];
        let mut b = a.clone();
        let mut sa = AdamState::new(&a, AdamConfig::default()).unwrap();
        let mut sb = AdamState::new(&b, AdamConfig::default()).unwrap();
        for k in 0..5 {
            let g = Tensor::vector(vec![0.1 * k as f64, -0.3, 2.0]);
            sa.step(&mut a, std::slice::from_ref(&g)).unwrap();
            sb.step(&mut b, &[g]).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = vec![
            Param::new("head.weight", Tensor::scalar(1.0)),
            Param::new("head.bias", Tensor::scalar(1.0)),
        ];
        let mut adam = AdamState::new(&p, AdamConfig::default()).unwrap();
        let err = adam
            .step(&mut p, &[Tensor::scalar(0.1), Tensor::scalar(f64::NAN)])
            .unwrap_err();
        assert_eq!(
            err,
            NumericsError::NonFiniteGradient {
                name: "head.bias".into()
            }
        );
        assert_eq!(adam.step, 0);
        assert_eq!(p[0].value.item(), 1.0);
    }

    #[test]
    fn rejects_non_positive_learning_rate() {
        let p = scalar_param(0.0);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(&p, cfg).is_err());
    }
}
