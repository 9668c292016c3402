//! Scalar special functions.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` via the Lanczos approximation (g = 7, 9 terms), with
/// reflection below 0.5. Returns NaN for `x <= 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    if x < 0.5 {
        // Γ(x)Γ(1−x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// ψ(x) = d/dx ln Γ(x) for `x > 0`: shift above 6 with the recurrence
/// ψ(x) = ψ(x+1) − 1/x, then the asymptotic series.
pub fn digamma(x: f64) -> f64 {
    if x.is_nan() || x <= 0.0 {
        return f64::NAN;
    }
    let mut x = x;
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli-number series: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * 691.0 / 32760.0)))));
    acc + x.ln() - 0.5 * inv - series
}

/// `(1/beta) · ln(1 + exp(beta·x))`, overflow-safe.
pub fn softplus(x: f64, beta: f64) -> f64 {
    x.max(0.0) + (-(beta * x).abs()).exp().ln_1p() / beta
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent reference: shift upward with ln Γ(x) = ln Γ(x+k) − Σ ln(x+i)
    /// and evaluate Stirling's series where it is accurate.
    fn stirling_ln_gamma(x: f64) -> f64 {
        let mut shift = 0.0;
        let mut z = x;
        while z < 30.0 {
            shift += z.ln();
            z += 1.0;
        }
        let inv = 1.0 / z;
        let inv2 = inv * inv;
        let series = inv
            * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 * (1.0 / 1680.0))));
        (z - 0.5) * z.ln() - z + 0.5 * (2.0 * PI).ln() + series - shift
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(2.5) - 1.329_340_388_179_137_f64.ln()).abs() < 1e-13);
        assert!((ln_gamma(2.5) - 0.284_682_870_472_919_2).abs() < 1e-13);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-13);
        assert!(ln_gamma(0.0).is_nan());
        assert!(ln_gamma(-1.0).is_nan());
    }

    #[test]
    fn ln_gamma_matches_stirling_reference() {
        let mut x = 0.51;
        while x <= 50.0 {
            let reference = stirling_ln_gamma(x);
            let err = (ln_gamma(x) - reference).abs();
            // relative where ln Γ is away from its zeros at 1 and 2
            assert!(err <= 1e-10 * reference.abs().max(1.0), "x={x} err={err}");
            x += 0.37;
        }
    }

    #[test]
    fn ln_gamma_recurrence() {
        let mut x = 0.5;
        while x <= 20.0 {
            let lhs = ln_gamma(x + 1.0);
            let rhs = ln_gamma(x) + x.ln();
            assert!((lhs - rhs).abs() < 1e-9, "x={x}");
            x += 0.0625;
        }
    }

    #[test]
    fn digamma_values() {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-12);
        // ψ(1/2) = −γ − 2 ln 2
        assert!((digamma(0.5) + EULER_GAMMA + 2.0 * 2f64.ln()).abs() < 1e-12);
        // series oracle: ψ(x+1) − ψ(x) = 1/x
        for &x in &[0.3, 1.7, 4.2, 9.9, 33.0] {
            assert!((digamma(x + 1.0) - digamma(x) - 1.0 / x).abs() < 1e-12);
        }
        // ψ is the derivative of ln Γ
        for &x in &[0.7, 1.5, 3.3, 12.0] {
            let h = 1e-5;
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert!((fd - digamma(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0, 1.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(1000.0, 0.1) - 1000.0).abs() < 1e-9);
        assert!((softplus(0.0, 0.1) - 10.0 * 2f64.ln()).abs() < 1e-13);
        // moderate inputs: agree with the direct formula
        for x in [-3.0f64, -1.0, 0.5, 7.0] {
            let direct = (1.0 + (0.1 * x).exp()).ln() / 0.1;
            assert!((softplus(x, 0.1) - direct).abs() < 1e-12);
        }
    }
}
