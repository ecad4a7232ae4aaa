//! Maximum-likelihood fitting by simplex search over the profiled deviance.

use nalgebra::DMatrix;

use super::likelihood::BlockModel;
use super::params::{components_from_factor, ParamVector, THETA_BOUND};
use super::{ModelSpec, VarianceComponents};
use crate::data::{fingerprint, pair_summaries, PairSummary, TrialDataset};
use crate::error::{Error, Result};
use crate::optimize::NelderMead;

/// Variances at or below this are reported as exactly zero.
const VARIANCE_FLOOR: f64 = 3.059_023_205_018_258e-7; // exp(-15)
// Squaring a factor at the bound can land an ulp or two above the floor.
const ZERO_CUTOFF: f64 = VARIANCE_FLOOR * (1.0 + 1e-9);

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Evaluation cap for each simplex search.
    pub max_evals: usize,
    /// Tolerance on the deviance spread of the simplex.
    pub ftol: f64,
    /// Maximize the restricted likelihood instead of the likelihood.
    pub reml: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_evals: 2000, ftol: 1e-10, reml: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFit {
    pub spec: ModelSpec,
    /// Fixed intercept, the mean of the pair intercepts.
    pub alpha0: f64,
    /// Common treatment effect (MLM1) or mean pair effect (MLM2/3).
    pub tau0: f64,
    pub beta: Option<f64>,
    pub vc: VarianceComponents,
    /// Wald standard error of `tau0`.
    pub se_tau: f64,
    /// Maximized log-likelihood, restricted when `reml` is set.
    pub loglik: f64,
    pub reml: bool,
    pub converged: bool,
    pub n_evals: usize,
    /// Optimum in the unconstrained parameterization, after clamping.
    pub theta: ParamVector,
    /// Covariance of `(α₀, τ, β?)`.
    pub fixed_cov: DMatrix<f64>,
    pub n_pairs: usize,
    pub n_obs: usize,
    pub data_fingerprint: u64,
}

impl ModelFit {
    /// Fixed effects in design order `(α₀, τ, β?)`.
    pub fn fixed(&self) -> Vec<f64> {
        let mut b = vec![self.alpha0, self.tau0];
        b.extend(self.beta);
        b
    }
}

/// Fits `spec` to a trial dataset.
pub fn fit(dataset: &TrialDataset, spec: ModelSpec, options: &FitOptions) -> Result<ModelFit> {
    if spec.covariate && !dataset.has_covariate() {
        return Err(Error::CovariateRequired(spec.name().into()));
    }
    let summaries = pair_summaries(dataset)?;
    fit_summaries(&summaries, spec, options)
}

/// Fits `spec` from pair summaries. Random-slope models are warm-started from
/// the corresponding random-intercept fit, which is computed first.
pub fn fit_summaries(summaries: &[PairSummary], spec: ModelSpec, options: &FitOptions) -> Result<ModelFit> {
    if !spec.random_slope {
        return fit_intercept(summaries, spec, options);
    }
    let null = fit_intercept(summaries, spec.intercept_only(), options)?;
    fit_with_start(summaries, spec, options, &null)
}

struct Objective<'a> {
    model: &'a BlockModel,
    reml: bool,
}

impl Objective<'_> {
    fn deviance(&self, theta: &[f64]) -> f64 {
        let spec = self.model.spec();
        let clamped = ParamVector(theta.to_vec()).clamped(spec);
        let Ok((l, s2)) = clamped.factor(spec) else { return f64::INFINITY };
        match self.model.profile(&l, s2, self.reml) {
            Ok(p) if p.objective.is_finite() => -2.0 * p.objective,
            _ => f64::INFINITY,
        }
    }

    fn finish(&self, theta: &[f64], converged: bool, n_evals: usize, summaries: &[PairSummary]) -> Result<ModelFit> {
        let spec = self.model.spec();
        let theta = ParamVector(theta.to_vec()).clamped(spec);
        let (l, s2) = theta.factor(spec)?;
        let prof = self.model.profile(&l, s2, self.reml)?;
        let p = spec.n_fixed();
        Ok(ModelFit {
            spec,
            alpha0: prof.coef[0],
            tau0: prof.coef[1],
            beta: spec.covariate.then_some(prof.coef[2]),
            vc: reported_components(&components_from_factor(&l, s2)),
            se_tau: prof.cov.a[1][1].sqrt(),
            loglik: prof.objective,
            reml: self.reml,
            converged,
            n_evals,
            theta,
            fixed_cov: DMatrix::from_fn(p, p, |i, j| prof.cov.a[i][j]),
            n_pairs: self.model.n_pairs(),
            n_obs: self.model.n_obs() as usize,
            data_fingerprint: fingerprint(summaries),
        })
    }
}

fn reported_components(vc: &VarianceComponents) -> VarianceComponents {
    let mut out = *vc;
    if out.sigma_alpha_sq <= ZERO_CUTOFF {
        out.sigma_alpha_sq = 0.0;
        out.sigma_alpha_tau = 0.0;
    }
    if out.sigma_tau_sq <= ZERO_CUTOFF {
        out.sigma_tau_sq = 0.0;
        out.sigma_alpha_tau = 0.0;
    }
    out
}

fn check_pairs(summaries: &[PairSummary]) -> Result<()> {
    if summaries.len() < 2 {
        return Err(Error::TooFewPairs { needed: 2, got: summaries.len() });
    }
    Ok(())
}

fn sample_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

fn bounded_ln(v: f64) -> f64 {
    v.ln().clamp(-THETA_BOUND, THETA_BOUND)
}

/// Moment-based starting values `(σ_α², σ_ε²)`.
fn intercept_start(summaries: &[PairSummary]) -> (f64, f64) {
    let cluster_means = summaries.iter().flat_map(|s| [s.mean_treated, s.mean_control]);
    let scale_sq = match sample_variance(cluster_means) {
        v if v > 0.0 => v,
        _ => 1.0,
    };
    let n_obs: usize = summaries.iter().map(PairSummary::n_total).sum();
    let dof = n_obs.saturating_sub(2 * summaries.len());
    let sse: f64 = summaries.iter().map(|s| s.sse_within).sum();
    let within = if dof > 0 && sse > 0.0 { sse / dof as f64 } else { 0.1 * scale_sq };
    let pair_means = summaries.iter().map(|s| 0.5 * (s.mean_treated + s.mean_control));
    let between = match sample_variance(pair_means) {
        v if v > 0.0 => v,
        _ => 0.1 * scale_sq,
    };
    (between, within)
}

fn fit_intercept(summaries: &[PairSummary], spec: ModelSpec, options: &FitOptions) -> Result<ModelFit> {
    debug_assert!(!spec.random_slope);
    check_pairs(summaries)?;
    let model = BlockModel::new(summaries, spec)?;
    let objective = Objective { model: &model, reml: options.reml };
    let (between, within) = intercept_start(summaries);
    let start = [bounded_ln(between), bounded_ln(within)];
    let nm = NelderMead { ftol: options.ftol, max_evals: options.max_evals, ..NelderMead::new(2) };
    let min = nm.minimize(|t| objective.deviance(t), &start);
    if !min.f.is_finite() {
        return Err(Error::RankDeficient);
    }
    objective.finish(&min.x, min.converged, min.n_evals, summaries)
}

/// Fits a random-slope model starting from its random-intercept sub-model.
///
/// The result never has a lower likelihood than `null`: if the search ends
/// below it, the sub-model optimum (with zero slope variance) is returned.
pub fn fit_with_start(
    summaries: &[PairSummary],
    spec: ModelSpec,
    options: &FitOptions,
    null: &ModelFit,
) -> Result<ModelFit> {
    if !spec.random_slope || null.spec != spec.intercept_only() {
        return Err(Error::NotNested { null: null.spec.to_string(), alt: spec.to_string() });
    }
    if null.reml != options.reml {
        return Err(Error::Config("warm start and target fit disagree on REML".into()));
    }
    if null.data_fingerprint != fingerprint(summaries) {
        return Err(Error::DatasetMismatch);
    }
    check_pairs(summaries)?;
    let model = BlockModel::new(summaries, spec)?;
    let objective = Objective { model: &model, reml: options.reml };

    let log_alpha_sq = null.theta.0[0];
    let log_eps_sq = null.theta.0[1];
    let l11 = (0.5 * log_alpha_sq).exp();
    let s2 = log_eps_sq.exp();
    let scale = (l11 * l11 + s2).sqrt();

    let diffs = summaries.iter().map(|s| s.mean_treated - s.mean_control);
    let noise = summaries
        .iter()
        .map(|s| s2 * (1.0 / s.n_treated as f64 + 1.0 / s.n_control as f64))
        .sum::<f64>()
        / summaries.len() as f64;
    let slope_var = (sample_variance(diffs) - noise).max(1e-6 * scale * scale);

    let embedded = [0.5 * log_alpha_sq, 0.0, -THETA_BOUND, log_eps_sq];
    let starts = [
        [0.5 * log_alpha_sq, 0.0, bounded_ln(1e-3 * scale), log_eps_sq],
        [0.5 * log_alpha_sq, 0.0, bounded_ln(slope_var.sqrt()), log_eps_sq],
    ];
    let nm = NelderMead {
        ftol: options.ftol,
        max_evals: options.max_evals,
        initial_step: vec![1.0, 0.5 * scale, 1.0, 1.0],
        ..NelderMead::new(4)
    };

    let mut n_evals = null.n_evals;
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in &starts {
        let min = nm.minimize(|t| objective.deviance(t), start);
        n_evals += min.n_evals;
        if best.as_ref().is_none_or(|b| min.f < b.1) {
            best = Some((min.x, min.f, min.converged));
        }
    }
    let (x, f, converged) = best.expect("at least one start");

    if !(f.is_finite() && -0.5 * f >= null.loglik) {
        let mut fit = objective.finish(&embedded, null.converged, n_evals, summaries)?;
        fit.loglik = null.loglik;
        fit.vc.sigma_tau_sq = 0.0;
        fit.vc.sigma_alpha_tau = 0.0;
        return Ok(fit);
    }
    objective.finish(&x, converged, n_evals, summaries)
}
