//! Unconstrained parameterization of the variance components.
//!
//! Random-intercept models use `(log σ_α², log σ_ε²)`. Models with a random
//! treatment effect use the log-Cholesky form of `Σ = L Lᵀ`,
//! `(log ℓ₁₁, ℓ₂₁, log ℓ₂₂, log σ_ε²)`, so every real vector maps to a
//! positive-definite `Σ`.

use super::small::Mat3;
use super::{ModelSpec, VarianceComponents};
use crate::error::{Error, Result};

/// Optimizer bound on the log-scale components.
pub const THETA_BOUND: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    fn check(&self, spec: ModelSpec) -> Result<()> {
        if self.0.len() != spec.n_theta() {
            return Err(Error::Arity { expected: spec.n_theta(), got: self.0.len() });
        }
        Ok(())
    }

    pub fn unpack(&self, spec: ModelSpec) -> Result<VarianceComponents> {
        let (l, sigma_eps_sq) = self.factor(spec)?;
        Ok(components_from_factor(&l, sigma_eps_sq))
    }

    /// Inverse of [`ParamVector::unpack`]; requires a strictly
    /// positive-definite `Σ`.
    pub fn pack(vc: &VarianceComponents, spec: ModelSpec) -> Result<ParamVector> {
        if !(vc.sigma_eps_sq > 0.0) {
            return Err(Error::NonPositiveResidual(vc.sigma_eps_sq));
        }
        if !spec.random_slope {
            if !(vc.sigma_alpha_sq > 0.0) {
                return Err(Error::NotPsd);
            }
            return Ok(ParamVector(vec![vc.sigma_alpha_sq.ln(), vc.sigma_eps_sq.ln()]));
        }
        let l = vc.factor(2)?;
        if !(l.a[0][0] > 0.0 && l.a[1][1] > 0.0) {
            return Err(Error::NotPsd);
        }
        Ok(ParamVector(vec![l.a[0][0].ln(), l.a[1][0], l.a[1][1].ln(), vc.sigma_eps_sq.ln()]))
    }

    /// Cholesky factor of `Σ` and `σ_ε²`.
    pub(crate) fn factor(&self, spec: ModelSpec) -> Result<(Mat3, f64)> {
        self.check(spec)?;
        let t = &self.0;
        let q = spec.n_random();
        let mut l = Mat3::zeros(q);
        let sigma_eps_sq;
        if spec.random_slope {
            l.a[0][0] = t[0].exp();
            l.a[1][0] = t[1];
            l.a[1][1] = t[2].exp();
            sigma_eps_sq = t[3].exp();
        } else {
            l.a[0][0] = (0.5 * t[0]).exp();
            sigma_eps_sq = t[1].exp();
        }
        Ok((l, sigma_eps_sq))
    }

    /// Copy with the log-scale components clamped to `±THETA_BOUND`.
    pub(crate) fn clamped(&self, spec: ModelSpec) -> ParamVector {
        let mut t = self.0.clone();
        let log_slots: &[usize] = if spec.random_slope { &[0, 2, 3] } else { &[0, 1] };
        for &i in log_slots {
            t[i] = t[i].clamp(-THETA_BOUND, THETA_BOUND);
        }
        ParamVector(t)
    }
}

pub(crate) fn components_from_factor(l: &Mat3, sigma_eps_sq: f64) -> VarianceComponents {
    if l.n == 1 {
        return VarianceComponents::intercept(l.a[0][0] * l.a[0][0], sigma_eps_sq);
    }
    let (l11, l21, l22) = (l.a[0][0], l.a[1][0], l.a[1][1]);
    VarianceComponents {
        sigma_alpha_sq: l11 * l11,
        sigma_tau_sq: l21 * l21 + l22 * l22,
        sigma_alpha_tau: l11 * l21,
        sigma_eps_sq,
    }
}
