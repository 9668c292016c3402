//! Normal-Inverse-Gamma heads: pseudo-count outputs, importance-weighted
//! posterior parameters, predictions, the Student-t negative log-likelihood
//! and the evidential regularizer. Every formula has a scalar form and a graph
//! form over `[N, 1]` columns.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::numerics::special::{ln_gamma, softplus};
use crate::numerics::{Graph, NumericsError, Tensor, Var};

type Result<T> = std::result::Result<T, NumericsError>;

/// Minimum pseudo-count `n`.
pub const N_MIN: f64 = 2.0;
/// Floor for α in every posterior.
pub const ALPHA_MIN: f64 = 1.5;
/// Softplus sharpness for the head activations.
pub const HEAD_BETA: f64 = 0.1;
/// Keeps the baseline head's β strictly positive.
const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NigPrior {
    pub gamma: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for NigPrior {
    fn default() -> Self {
        Self {
            gamma: 0.0,
            nu: 1.0,
            alpha: 2.0,
            beta: 1.0,
        }
    }
}

impl NigPrior {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.nu > 0.0 && self.alpha > 1.0 && self.beta > 0.0 && self.gamma.is_finite()) {
            return Err(format!(
                "prior needs nu > 0, alpha > 1, beta > 0; got {:?}",
                self
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutputs {
    pub n: f64,
    pub psi: f64,
    pub phi: f64,
}

/// `n = 2 + softplus(raw₀)`, `Ψ = raw₁`, `Φ = softplus(raw₂)`.
pub fn head_outputs(raw: [f64; 3]) -> HeadOutputs {
    HeadOutputs {
        n: N_MIN + softplus(raw[0], HEAD_BETA),
        psi: raw[1],
        phi: softplus(raw[2], HEAD_BETA),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigPosterior {
    pub gamma: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

pub fn nig_posterior(out: HeadOutputs, prior: &NigPrior, w: f64) -> NigPosterior {
    debug_assert!(w > 0.0);
    let evidence = w * out.n;
    let nu = prior.nu + evidence;
    NigPosterior {
        gamma: (prior.gamma * prior.nu + evidence * out.psi) / nu,
        nu,
        alpha: (prior.alpha + 0.5 * evidence).max(ALPHA_MIN),
        beta: prior.beta + 0.5 * prior.gamma * prior.gamma * prior.nu + out.phi,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    /// β/(ν(α−1)).
    pub variance: f64,
}

pub fn predict(post: &NigPosterior) -> Prediction {
    assert!(post.alpha > 1.0, "alpha must exceed 1, got {}", post.alpha);
    Prediction {
        mean: post.gamma,
        variance: post.beta / (post.nu * (post.alpha - 1.0)),
    }
}

/// Student-t negative log-likelihood with ω = 2β(1+ν).
pub fn nig_nll(post: &NigPosterior, y: f64) -> f64 {
    let NigPosterior {
        gamma,
        nu,
        alpha,
        beta,
    } = *post;
    let omega = 2.0 * beta * (1.0 + nu);
    0.5 * (PI / nu).ln() + (alpha + 0.5) * ((y - gamma).powi(2) * nu + omega).ln()
        - alpha * omega.ln()
        + ln_gamma(alpha)
        - ln_gamma(alpha + 0.5)
}

/// `(ν + 2α)·|y − ŷ|`.
pub fn evidential_regularizer(post: &NigPosterior, y: f64, y_hat: f64) -> f64 {
    (post.nu + 2.0 * post.alpha) * (y - y_hat).abs()
}

/// Student-t scale² β(1+ν)/(να) of the predictive distribution.
pub fn predictive_scale_sq(post: &NigPosterior) -> f64 {
    post.beta * (1.0 + post.nu) / (post.nu * post.alpha)
}

/// Graph handles for `[N, 1]` NIG parameter columns.
#[derive(Debug, Clone, Copy)]
pub struct NigVars {
    pub gamma: Var,
    pub nu: Var,
    pub alpha: Var,
    pub beta: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub n: Var,
    pub psi: Var,
    pub phi: Var,
}

/// Applies the head activations to a `[N, 3]` affine output.
pub fn head_forward(g: &mut Graph, raw: Var) -> Result<HeadVars> {
    let r0 = g.slice_cols(raw, 0, 1)?;
    let psi = g.slice_cols(raw, 1, 1)?;
    let r2 = g.slice_cols(raw, 2, 1)?;
    let n = g.softplus(r0, HEAD_BETA)?;
    let n = g.shift(n, N_MIN);
    let phi = g.softplus(r2, HEAD_BETA)?;
    Ok(HeadVars { n, psi, phi })
}

/// Posterior columns for importance weights `w` (`[N, 1]`).
pub fn posterior_vars(
    g: &mut Graph,
    head: HeadVars,
    prior: &NigPrior,
    w: &Tensor,
) -> Result<NigVars> {
    let w = g.constant(w.clone());
    let evidence = g.mul(w, head.n)?;
    let nu = g.shift(evidence, prior.nu);
    let pseudo = g.mul(evidence, head.psi)?;
    let numerator = g.shift(pseudo, prior.gamma * prior.nu);
    let gamma = g.div(numerator, nu)?;
    let half = g.scale(evidence, 0.5);
    let alpha = g.shift(half, prior.alpha);
    let alpha = g.clamp_min(alpha, ALPHA_MIN);
    let beta = g.shift(
        head.phi,
        prior.beta + 0.5 * prior.gamma * prior.gamma * prior.nu,
    );
    Ok(NigVars {
        gamma,
        nu,
        alpha,
        beta,
    })
}

/// Baseline NIG head over a `[N, 4]` affine output: γ = raw₀,
/// ν = softplus(raw₁), α = 1.5 + softplus(raw₂), β = softplus(raw₃).
pub fn der_head(g: &mut Graph, raw: Var) -> Result<NigVars> {
    let gamma = g.slice_cols(raw, 0, 1)?;
    let r1 = g.slice_cols(raw, 1, 1)?;
    let r2 = g.slice_cols(raw, 2, 1)?;
    let r3 = g.slice_cols(raw, 3, 1)?;
    let nu = g.softplus(r1, HEAD_BETA)?;
    let nu = g.shift(nu, BETA_FLOOR);
    let alpha = g.softplus(r2, HEAD_BETA)?;
    let alpha = g.shift(alpha, ALPHA_MIN);
    let beta = g.softplus(r3, HEAD_BETA)?;
    let beta = g.shift(beta, BETA_FLOOR);
    Ok(NigVars {
        gamma,
        nu,
        alpha,
        beta,
    })
}

/// Per-sample negative log-likelihood column, same formula as [`nig_nll`].
pub fn nll_vars(g: &mut Graph, p: NigVars, y: Var) -> Result<Var> {
    let one_plus_nu = g.shift(p.nu, 1.0);
    let beta_nu = g.mul(p.beta, one_plus_nu)?;
    let omega = g.scale(beta_nu, 2.0);
    let ln_nu = g.ln(p.nu)?;
    let t1 = g.scale(ln_nu, -0.5);
    let t1 = g.shift(t1, 0.5 * PI.ln());
    let resid = g.sub(y, p.gamma)?;
    let resid_sq = g.square(resid);
    let scaled = g.mul(resid_sq, p.nu)?;
    let inner = g.add(scaled, omega)?;
    let ln_inner = g.ln(inner)?;
    let alpha_half = g.shift(p.alpha, 0.5);
    let t2 = g.mul(alpha_half, ln_inner)?;
    let ln_omega = g.ln(omega)?;
    let t3 = g.mul(p.alpha, ln_omega)?;
    let lg_a = g.ln_gamma(p.alpha)?;
    let lg_b = g.ln_gamma(alpha_half)?;
    let sum = g.add(t1, t2)?;
    let sum = g.sub(sum, t3)?;
    let sum = g.add(sum, lg_a)?;
    g.sub(sum, lg_b)
}

/// Per-sample `(ν + 2α)·|y − γ|` column.
pub fn regularizer_vars(g: &mut Graph, p: NigVars, y: Var) -> Result<Var> {
    let resid = g.sub(y, p.gamma)?;
    let abs = g.abs(resid);
    let two_alpha = g.scale(p.alpha, 2.0);
    let evidence = g.add(p.nu, two_alpha)?;
    g.mul(evidence, abs)
}

/// Reads row `i` of graph-valued NIG columns.
pub fn posterior_at(g: &Graph, p: NigVars, i: usize) -> NigPosterior {
    NigPosterior {
        gamma: g.value(p.gamma).data()[i],
        nu: g.value(p.nu).data()[i],
        alpha: g.value(p.alpha).data()[i],
        beta: g.value(p.beta).data()[i],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CANONICAL: NigPosterior = NigPosterior {
        gamma: 0.0,
        nu: 1.0,
        alpha: 2.0,
        beta: 1.0,
    };

    #[test]
    fn zero_head() {
        let out = head_outputs([0.0; 3]);
        assert!((out.n - (2.0 + 10.0 * 2f64.ln())).abs() < 1e-12);
        assert!((out.n - 8.931_471_805_599_453).abs() < 1e-12);
        assert_eq!(out.psi, 0.0);
        assert!((out.phi - 6.931_471_805_599_453).abs() < 1e-12);
    }

    #[test]
    fn posterior_examples() {
        let prior = NigPrior::default();
        let out = HeadOutputs {
            n: 2.0,
            psi: 1.0,
            phi: 0.5,
        };
        let p = nig_posterior(out, &prior, 1.0);
        assert!((p.gamma - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((p.nu, p.alpha, p.beta), (3.0, 3.0, 1.5));
        let pred = predict(&p);
        assert!((pred.mean - 2.0 / 3.0).abs() < 1e-12);
        assert!((pred.variance - 0.25).abs() < 1e-12);

        let p = nig_posterior(out, &prior, 4.0);
        assert!((p.gamma - 8.0 / 9.0).abs() < 1e-12);
        assert_eq!((p.nu, p.alpha, p.beta), (9.0, 6.0, 1.5));

        let p = nig_posterior(
            HeadOutputs {
                n: 2.0,
                psi: 1.0,
                phi: 0.0,
            },
            &prior,
            1e-8,
        );
        assert!(p.gamma.abs() < 1e-6);
        assert!((p.nu - 1.0).abs() < 1e-6);
        assert!((p.alpha - 2.0).abs() < 1e-6);
        assert!((p.beta - 1.0).abs() < 1e-6);
    }

    #[test]
    fn alpha_floor() {
        let prior = NigPrior {
            alpha: 1.01,
            ..NigPrior::default()
        };
        let out = HeadOutputs {
            n: 2.0,
            psi: 0.0,
            phi: 0.0,
        };
        assert_eq!(nig_posterior(out, &prior, 1e-6).alpha, ALPHA_MIN);
    }

    #[test]
    fn predict_limits() {
        let base = NigPosterior {
            gamma: 1.0,
            nu: 2.0,
            alpha: 3.0,
            beta: 1e-300,
        };
        assert!(predict(&base).variance < 1e-299);
        let a = NigPosterior { beta: 1.0, ..base };
        let b = NigPosterior { nu: 4.0, ..a };
        assert!((predict(&a).variance - 2.0 * predict(&b).variance).abs() < 1e-15);
    }

    #[test]
    fn nll_reference_value() {
        // ½ln π + 2.5 ln 4 − 2 ln 4 + lnΓ(2) − lnΓ(2.5)
        let expected = 0.5 * PI.ln() + 0.5 * 4f64.ln() - 0.284_682_870_472_919_2;
        let v = nig_nll(&CANONICAL, 0.0);
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.9808).abs() < 1e-4);
    }

    #[test]
    fn regularizer_examples() {
        let p = NigPosterior {
            gamma: 0.0,
            nu: 3.0,
            alpha: 3.0,
            beta: 1.0,
        };
        assert_eq!(evidential_regularizer(&p, 1.0, 1.0), 0.0);
        assert_eq!(evidential_regularizer(&p, 1.5, 1.0), 4.5);
        assert_eq!(evidential_regularizer(&p, 2.0, 1.0), 9.0);
    }

    fn column(v: f64) -> Tensor {
        Tensor::matrix(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn graph_forms_match_scalar_forms() {
        let prior = NigPrior {
            gamma: 0.3,
            nu: 0.7,
            alpha: 2.5,
            beta: 0.4,
        };
        let raw = [0.4, -1.2, 2.0];
        let mut g = Graph::new();
        let r = g.constant(Tensor::matrix(1, 3, raw.to_vec()).unwrap());
        let head = head_forward(&mut g, r).unwrap();
        let post = posterior_vars(&mut g, head, &prior, &column(1.7)).unwrap();
        let y = g.constant(column(0.9));
        let nll = nll_vars(&mut g, post, y).unwrap();
        let reg = regularizer_vars(&mut g, post, y).unwrap();

        let expected = nig_posterior(head_outputs(raw), &prior, 1.7);
        let got = posterior_at(&g, post, 0);
        for (a, b) in [
            (got.gamma, expected.gamma),
            (got.nu, expected.nu),
            (got.alpha, expected.alpha),
            (got.beta, expected.beta),
        ] {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((g.value(nll).item() - nig_nll(&expected, 0.9)).abs() < 1e-13);
        assert!(
            (g.value(reg).item() - evidential_regularizer(&expected, 0.9, expected.gamma)).abs()
                < 1e-13
        );
    }

    #[test]
    fn der_head_ranges() {
        let mut g = Graph::new();
        let r = g.constant(
            Tensor::matrix(2, 4, vec![0.0, 0.0, 0.0, 0.0, 3.0, -500.0, -500.0, -500.0]).unwrap(),
        );
        let p = der_head(&mut g, r).unwrap();
        let a = posterior_at(&g, p, 0);
        assert_eq!(a.gamma, 0.0);
        assert!((a.alpha - (1.5 + 10.0 * 2f64.ln())).abs() < 1e-12);
        let b = posterior_at(&g, p, 1);
        assert!(b.nu > 0.0 && b.beta > 0.0 && b.alpha >= 1.5);
        let y = g.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        let nll = nll_vars(&mut g, p, y).unwrap();
        assert!((g.value(nll).data()[0] - nig_nll(&a, 0.0)).abs() < 1e-13);
    }

    fn posterior_strategy() -> impl Strategy<Value = NigPosterior> {
        (-3.0f64..3.0, 0.05f64..20.0, 1.5f64..20.0, 0.05f64..10.0).prop_map(
            |(gamma, nu, alpha, beta)| NigPosterior {
                gamma,
                nu,
                alpha,
                beta,
            },
        )
    }

    proptest! {
        #[test]
        fn head_ranges(raw in prop::array::uniform3(-200.0f64..200.0)) {
            let out = head_outputs(raw);
            prop_assert!(out.n >= N_MIN);
            prop_assert!(out.phi >= 0.0);
        }

        #[test]
        fn nll_monotone_in_residual(p in posterior_strategy(), a in 0.0f64..5.0, b in 0.0f64..5.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(nig_nll(&p, p.gamma + near) < nig_nll(&p, p.gamma + far));
            prop_assert!(nig_nll(&p, p.gamma - near) < nig_nll(&p, p.gamma - far));
        }

        #[test]
        fn reweighting_monotone(
            n in 2.0f64..30.0,
            psi in -3.0f64..3.0,
            phi in 0.0f64..5.0,
            w1 in 0.05f64..5.0,
            dw in 0.01f64..5.0,
        ) {
            let prior = NigPrior::default();
            let out = HeadOutputs { n, psi, phi };
            let lo = nig_posterior(out, &prior, w1);
            let hi = nig_posterior(out, &prior, w1 + dw);
            prop_assert!(hi.nu > lo.nu);
            prop_assert!(hi.alpha > lo.alpha);
            prop_assert!((hi.gamma - psi).abs() <= (lo.gamma - psi).abs());
            prop_assert_eq!(hi.beta, lo.beta);
            prop_assert!(predict(&hi).variance < predict(&lo).variance);
        }

        #[test]
        fn rarer_label_weighs_residual_more(
            n in 2.0f64..30.0,
            phi in 0.0f64..5.0,
            w1 in 0.05f64..5.0,
            dw in 0.01f64..5.0,
            resid in 1.0f64..5.0,
        ) {
            let prior = NigPrior::default();
            let out = HeadOutputs { n, psi: 0.0, phi };
            let common = nig_posterior(out, &prior, w1);
            let rare = nig_posterior(out, &prior, w1 + dw);
            prop_assert!(rare.alpha + 0.5 > common.alpha + 0.5);
            // same residual: the rarer sample's loss grows faster with it
            let slope = |p: &NigPosterior| nig_nll(p, p.gamma + resid) - nig_nll(p, p.gamma);
            prop_assert!(slope(&rare) > slope(&common));
        }
    }
}
