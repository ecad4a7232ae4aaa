use super::fit::ModelFit;
use super::likelihood::BlockModel;
use crate::data::{fingerprint, PairSummary};
use crate::error::{Error, Result};

/// Empirical-Bayes predictions of each pair's random deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEffects {
    pub pair_ids: Vec<usize>,
    /// Predicted deviation of the pair intercept from `α₀`.
    pub blup_alpha: Vec<f64>,
    /// Predicted deviation of the pair treatment effect from `τ₀`; zero for
    /// random-intercept models.
    pub blup_tau: Vec<f64>,
}

/// Evaluates `Σ Z_kᵀ V_k⁻¹ (y_k − X_k b)` at the fitted parameters.
pub fn pair_effects(fit: &ModelFit, summaries: &[PairSummary]) -> Result<PairEffects> {
    if fit.data_fingerprint != fingerprint(summaries) {
        return Err(Error::DatasetMismatch);
    }
    let model = BlockModel::new(summaries, fit.spec)?;
    let l = fit.vc.factor(fit.spec.n_random())?;
    let effects = model.blups(&l, fit.vc.sigma_eps_sq, &fit.fixed());
    Ok(PairEffects {
        pair_ids: summaries.iter().map(|s| s.pair_id).collect(),
        blup_alpha: effects.iter().map(|e| e[0]).collect(),
        blup_tau: effects.iter().map(|e| e[1]).collect(),
    })
}
