//! Likelihood-ratio tests between nested multilevel fits.
//!
//! Testing a zero slope variance puts the null on the boundary of the
//! parameter space, so besides the usual chi-square reference (with degrees
//! of freedom equal to the number of extra parameters) the 50:50 mixture of
//! χ²₁ and χ²₂ is reported.

use crate::error::{Error, Result};
use crate::mlm::ModelFit;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrtResult {
    /// `2 (ℓ_alt − ℓ_null)`, clamped at zero.
    pub stat: f64,
    pub df_naive: usize,
    pub p_naive: f64,
    pub p_mixture: f64,
    /// Rejection at the 5% level using `p_naive`.
    pub rejected_05: bool,
}

/// Compares `null_fit` against the larger `alt_fit`.
pub fn lrt(null_fit: &ModelFit, alt_fit: &ModelFit) -> Result<LrtResult> {
    if null_fit.reml || alt_fit.reml {
        return Err(Error::RemlFit);
    }
    let (null, alt) = (null_fit.spec, alt_fit.spec);
    if null.random_slope || !alt.random_slope || null.covariate != alt.covariate {
        return Err(Error::NotNested { null: null.to_string(), alt: alt.to_string() });
    }
    if null_fit.data_fingerprint != alt_fit.data_fingerprint {
        return Err(Error::DatasetMismatch);
    }
    // slope variance and its covariance with the intercept
    let df_naive = alt.n_theta() - null.n_theta();
    Ok(lrt_from_stat(2.0 * (alt_fit.loglik - null_fit.loglik), df_naive))
}

/// Builds the test result from a raw statistic.
pub fn lrt_from_stat(stat: f64, df_naive: usize) -> LrtResult {
    let stat = stat.max(0.0);
    let p_naive = chi_square_sf(stat, df_naive as f64);
    let p_mixture = 0.5 * chi_square_sf(stat, 1.0) + 0.5 * chi_square_sf(stat, 2.0);
    LrtResult { stat, df_naive, p_naive, p_mixture, rejected_05: p_naive < 0.05 }
}

/// Upper tail probability of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    regularized_gamma_q(0.5 * df, 0.5 * x)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// `Q(a, x) = Γ(a, x) / Γ(a)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    assert!(a > 0.0, "shape must be positive");
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    // modified Lentz
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        // χ²₂ tail is exp(-x/2); χ²₁ tail is erfc(sqrt(x/2))
        for x in [0.01f64, 0.5, 1.0, 3.0, 5.991, 10.0, 40.0] {
            let exact = (-0.5 * x).exp();
            assert!((chi_square_sf(x, 2.0) - exact).abs() <= 1e-12 * exact, "x = {x}");
        }
        assert!((chi_square_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn boundary_of_rejection() {
        let r = lrt_from_stat(5.991_464_547_107_979, 2);
        assert!((r.p_naive - 0.05).abs() < 1e-12);
        assert!(!r.rejected_05);
        assert!(lrt_from_stat(5.9915, 2).rejected_05);
        assert!(r.p_mixture < r.p_naive);
    }

    #[test]
    fn zero_and_negative_stats() {
        let r = lrt_from_stat(-1e-9, 2);
        assert_eq!(r.stat, 0.0);
        assert_eq!(r.p_naive, 1.0);
        assert_eq!(r.p_mixture, 1.0);
        assert!(!r.rejected_05);
    }
}
