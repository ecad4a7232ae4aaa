//! Multilevel models for matched-pair cluster-randomized trials.
//!
//! Three nested Gaussian models are supported, all with pairs as the grouping
//! level and a random deviation around a fixed intercept:
//!
//! * [`ModelSpec::MLM1`]: common treatment effect, random pair intercept.
//! * [`ModelSpec::MLM2`]: random pair intercept and random pair treatment
//!   effect, correlated.
//! * [`ModelSpec::MLM3`]: MLM2 plus a fixed slope on the cluster covariate.
//!
//! For pair `k` with stacked outcomes `y_k`, fixed design `X_k` and random
//! design `Z_k`, the marginal covariance is `V_k = Z_k Σ Z_kᵀ + σ_ε² I`. Since
//! every design column is constant within a cluster, the per-pair likelihood
//! needs only the cluster sizes, cluster means and pooled within-cluster sum of
//! squares (see [`crate::data::PairSummary`]). The likelihood is evaluated with
//! the low-rank identities for `V_k⁻¹` and `log |V_k|` in [`block_loglik`];
//! [`dense_loglik`] materializes every `V_k` and exists to check it.

mod blup;
mod dense;
mod fit;
mod likelihood;
mod params;
pub(crate) mod small;

use std::fmt;
use std::str::FromStr;

pub use blup::{pair_effects, PairEffects};
pub use dense::{dense_gls, dense_loglik};
pub use fit::{fit, fit_summaries, fit_with_start, FitOptions, ModelFit};
pub use likelihood::{block_loglik, gls_fixed_effects, GlsEstimate};
pub use params::{ParamVector, THETA_BOUND};

use crate::error::{Error, Result};
use small::Mat3;

/// Which terms a multilevel model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelSpec {
    /// Pair-level random treatment effect (correlated with the intercept).
    pub random_slope: bool,
    /// Fixed slope on the cluster covariate.
    pub covariate: bool,
}

impl ModelSpec {
    pub const MLM1: ModelSpec = ModelSpec { random_slope: false, covariate: false };
    pub const MLM2: ModelSpec = ModelSpec { random_slope: true, covariate: false };
    pub const MLM3: ModelSpec = ModelSpec { random_slope: true, covariate: true };
    /// MLM1 with the covariate slope; the null model when testing MLM3's
    /// random treatment effect.
    pub const MLM1_COVARIATE: ModelSpec = ModelSpec { random_slope: false, covariate: true };

    pub fn name(&self) -> &'static str {
        match (self.random_slope, self.covariate) {
            (false, false) => "mlm1",
            (true, false) => "mlm2",
            (true, true) => "mlm3",
            (false, true) => "mlm1x",
        }
    }

    /// Number of fixed effects: intercept, treatment, optional covariate.
    pub fn n_fixed(&self) -> usize {
        2 + usize::from(self.covariate)
    }

    /// Number of random effects per pair.
    pub fn n_random(&self) -> usize {
        1 + usize::from(self.random_slope)
    }

    /// Length of the unconstrained parameter vector.
    pub fn n_theta(&self) -> usize {
        if self.random_slope {
            4
        } else {
            2
        }
    }

    /// The random-intercept-only model with the same fixed effects.
    pub fn intercept_only(&self) -> ModelSpec {
        ModelSpec { random_slope: false, covariate: self.covariate }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlm1" => Ok(Self::MLM1),
            "mlm2" => Ok(Self::MLM2),
            "mlm3" => Ok(Self::MLM3),
            "mlm1x" => Ok(Self::MLM1_COVARIATE),
            other => Err(Error::Config(format!("unknown model `{other}` (expected mlm1, mlm2, mlm3 or mlm1x)"))),
        }
    }
}

/// Random-effect covariance `Σ = [[σ_α², σ_ατ], [σ_ατ, σ_τ²]]` and the
/// residual variance `σ_ε²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub sigma_alpha_sq: f64,
    pub sigma_tau_sq: f64,
    pub sigma_alpha_tau: f64,
    pub sigma_eps_sq: f64,
}

impl VarianceComponents {
    /// Intercept-only components.
    pub fn intercept(sigma_alpha_sq: f64, sigma_eps_sq: f64) -> Self {
        VarianceComponents { sigma_alpha_sq, sigma_tau_sq: 0.0, sigma_alpha_tau: 0.0, sigma_eps_sq }
    }

    pub fn is_psd(&self) -> bool {
        let (a, b, c) = (self.sigma_alpha_sq, self.sigma_tau_sq, self.sigma_alpha_tau);
        if !(a >= 0.0 && b >= 0.0 && c.is_finite() && a.is_finite() && b.is_finite()) {
            return false;
        }
        a * b - c * c >= -1e-12 * (a * b).max(f64::MIN_POSITIVE)
    }

    /// Lower Cholesky factor of `Σ` restricted to the first `q` random
    /// effects. Singular `Σ` is allowed.
    pub(crate) fn factor(&self, q: usize) -> Result<Mat3> {
        if !(self.sigma_eps_sq > 0.0) {
            return Err(Error::NonPositiveResidual(self.sigma_eps_sq));
        }
        let mut l = Mat3::zeros(q);
        if q == 1 {
            if !(self.sigma_alpha_sq >= 0.0) || !self.sigma_alpha_sq.is_finite() {
                return Err(Error::NotPsd);
            }
            l.a[0][0] = self.sigma_alpha_sq.sqrt();
            return Ok(l);
        }
        if !self.is_psd() {
            return Err(Error::NotPsd);
        }
        let l11 = self.sigma_alpha_sq.sqrt();
        let l21 = if l11 > 0.0 { self.sigma_alpha_tau / l11 } else { 0.0 };
        l.a[0][0] = l11;
        l.a[1][0] = l21;
        l.a[1][1] = (self.sigma_tau_sq - l21 * l21).max(0.0).sqrt();
        Ok(l)
    }

    /// Smallest eigenvalue of `Σ`.
    pub fn min_eigenvalue(&self) -> f64 {
        let (a, b, c) = (self.sigma_alpha_sq, self.sigma_tau_sq, self.sigma_alpha_tau);
        let mean = 0.5 * (a + b);
        let radius = (0.25 * (a - b) * (a - b) + c * c).sqrt();
        mean - radius
    }
}
