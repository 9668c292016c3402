use serde::{Deserialize, Serialize};

use super::regression::check_lengths;
use super::{MetricsError, Result};

/// Sparsification fractions 0.00, 0.01, …, 0.99.
pub const STEPS: usize = 100;
pub const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sparsification {
    pub fractions: Vec<f64>,
    /// Normalized MAE left after dropping the most uncertain samples.
    pub model: Vec<f64>,
    /// Same, dropping the largest true errors.
    pub oracle: Vec<f64>,
    pub ause: f64,
    /// All uncertainties equal, or zero total error.
    pub degenerate: bool,
}

pub fn fraction(k: usize) -> f64 {
    k as f64 / STEPS as f64
}

/// Area between the model and oracle sparsification curves.
pub fn ause(uncertainties: &[f64], abs_errors: &[f64]) -> Result<Sparsification> {
    check_lengths(uncertainties.len(), abs_errors.len())?;
    if uncertainties.len() < MIN_SAMPLES {
        return Err(MetricsError::TooFew {
            needed: MIN_SAMPLES,
            got: uncertainties.len(),
        });
    }
    Ok(sparsification(uncertainties, abs_errors))
}

/// Curve values for removal order `order` (most removable first).
fn curve(order: &[usize], abs_errors: &[f64], base: f64) -> Vec<f64> {
    let n = order.len();
    let mut removed = vec![0.0; n + 1];
    for (k, &i) in order.iter().enumerate() {
        removed[k + 1] = removed[k] + abs_errors[i];
    }
    let total = removed[n];
    (0..STEPS)
        .map(|k| {
            let drop = ((fraction(k) * n as f64).ceil() as usize).min(n);
            let left = n - drop;
            if left == 0 || base == 0.0 {
                0.0
            } else {
                ((total - removed[drop]).max(0.0) / left as f64) / base
            }
        })
        .collect()
}

fn descending(keys: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&i, &j| keys[j].total_cmp(&keys[i]));
    order
}

/// Unchecked form of [`ause`]; any non-empty length.
pub(crate) fn sparsification(uncertainties: &[f64], abs_errors: &[f64]) -> Sparsification {
    let n = abs_errors.len();
    let base = abs_errors.iter().sum::<f64>() / n as f64;
    let model = curve(&descending(uncertainties), abs_errors, base);
    let oracle = curve(&descending(abs_errors), abs_errors, base);
    let gap: Vec<f64> = model.iter().zip(&oracle).map(|(m, o)| m - o).collect();
    let step = 1.0 / STEPS as f64;
    let ause = gap.windows(2).map(|w| 0.5 * step * (w[0] + w[1])).sum();
    let constant = uncertainties.iter().all(|&u| u == uncertainties[0]);
    Sparsification {
        fractions: (0..STEPS).map(fraction).collect(),
        model,
        oracle,
        ause,
        degenerate: constant || base == 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Removes `k` samples by repeatedly taking the current maximum of `key`
    /// (first index wins ties) and averages what is left.
    fn brute_curve(key: &[f64], err: &[f64]) -> Vec<f64> {
        let n = err.len();
        let base = err.iter().sum::<f64>() / n as f64;
        (0..100)
            .map(|k| {
                let drop = ((k as f64 / 100.0) * n as f64).ceil() as usize;
                let mut alive = vec![true; n];
                for _ in 0..drop.min(n) {
                    let mut best: Option<usize> = None;
                    for i in 0..n {
                        if alive[i] && best.is_none_or(|b| key[i] > key[b]) {
                            best = Some(i);
                        }
                    }
                    alive[best.unwrap()] = false;
                }
                let left: Vec<f64> = (0..n).filter(|&i| alive[i]).map(|i| err[i]).collect();
                if left.is_empty() {
                    0.0
                } else {
                    left.iter().sum::<f64>() / left.len() as f64 / base
                }
            })
            .collect()
    }

    #[test]
    fn reversed_four_by_enumeration() {
        let err = [0.0, 1.0, 2.0, 3.0];
        let unc = [3.0, 2.0, 1.0, 0.0];
        let s = sparsification(&unc, &err);
        let model = brute_curve(&unc, &err);
        let oracle = brute_curve(&err, &err);
        for k in 0..100 {
            assert!((s.model[k] - model[k]).abs() < 1e-15);
            assert!((s.oracle[k] - oracle[k]).abs() < 1e-15);
        }
        let mut area = 0.0;
        for k in 0..99 {
            area += 0.005 * ((model[k] - oracle[k]) + (model[k + 1] - oracle[k + 1]));
        }
        assert!((s.ause - area).abs() < 1e-14);
        assert!(s.ause > 0.0);
        // by hand: drop one (t ≤ 0.25) → model 2.0/1.5, oracle 1.0/1.5
        assert!((s.model[10] - 2.0 / 1.5).abs() < 1e-15);
        assert!((s.oracle[10] - 1.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn matched_order_is_zero() {
        let err: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64 * 0.1).collect();
        let s = ause(&err, &err).unwrap();
        assert_eq!(s.ause, 0.0);
        assert!(!s.degenerate);
        assert_eq!(s.model.len(), 100);
    }

    #[test]
    fn flags_constant_uncertainty_and_short_input() {
        let err: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert!(ause(&[1.0; 20], &err).unwrap().degenerate);
        assert_eq!(
            ause(&[1.0; 4], &[1.0; 4]),
            Err(MetricsError::TooFew { needed: 10, got: 4 })
        );
    }
}
