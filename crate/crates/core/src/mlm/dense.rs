//! Dense reference implementation: every `V_k` is built as a full matrix and
//! factorized directly. Quadratic in pair size; meant for checking the block
//! likelihood on small instances.

use nalgebra::{DMatrix, DVector};

use super::likelihood::{GlsEstimate, LN_2PI};
use super::{ModelSpec, VarianceComponents};
use crate::data::{validate, TrialDataset};
use crate::error::{Error, Result};

struct DensePair {
    x: DMatrix<f64>,
    y: DVector<f64>,
    chol_v: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn dense_pairs(dataset: &TrialDataset, spec: ModelSpec, vc: &VarianceComponents) -> Result<Vec<DensePair>> {
    let report = validate(dataset);
    if !report.is_valid() {
        return Err(Error::Invalid(report));
    }
    if !(vc.sigma_eps_sq > 0.0) {
        return Err(Error::NonPositiveResidual(vc.sigma_eps_sq));
    }
    if spec.random_slope && !vc.is_psd() || vc.sigma_alpha_sq < 0.0 {
        return Err(Error::NotPsd);
    }
    let q = spec.n_random();
    let p = spec.n_fixed();
    let sigma = if spec.random_slope {
        DMatrix::from_row_slice(2, 2, &[vc.sigma_alpha_sq, vc.sigma_alpha_tau, vc.sigma_alpha_tau, vc.sigma_tau_sq])
    } else {
        DMatrix::from_element(1, 1, vc.sigma_alpha_sq)
    };

    let mut out = Vec::with_capacity(dataset.n_pairs);
    for k in 1..=dataset.n_pairs {
        let rows: Vec<(f64, f64, Option<f64>)> = dataset
            .clusters
            .iter()
            .filter(|c| c.pair_id == k)
            .flat_map(|c| c.outcomes.iter().map(move |&y| (y, if c.treated { 1.0 } else { 0.0 }, c.covariate)))
            .collect();
        let m = rows.len();
        let mut x = DMatrix::zeros(m, p);
        let mut z = DMatrix::zeros(m, q);
        let mut y = DVector::zeros(m);
        for (i, &(yi, t, cov)) in rows.iter().enumerate() {
            y[i] = yi;
            x[(i, 0)] = 1.0;
            x[(i, 1)] = t;
            if spec.covariate {
                x[(i, 2)] = cov.ok_or_else(|| Error::CovariateRequired(spec.name().into()))?;
            }
            z[(i, 0)] = 1.0;
            if spec.random_slope {
                z[(i, 1)] = t;
            }
        }
        let v = &z * &sigma * z.transpose() + DMatrix::identity(m, m) * vc.sigma_eps_sq;
        let chol_v = v.cholesky().ok_or(Error::NotPsd)?;
        out.push(DensePair { x, y, chol_v });
    }
    Ok(out)
}

/// ML log-likelihood from fully materialized `V_k`.
pub fn dense_loglik(dataset: &TrialDataset, spec: ModelSpec, vc: &VarianceComponents, fixed: &[f64]) -> Result<f64> {
    if fixed.len() != spec.n_fixed() {
        return Err(Error::FixedArity { expected: spec.n_fixed(), got: fixed.len() });
    }
    let b = DVector::from_column_slice(fixed);
    let mut total = 0.0;
    for pair in dense_pairs(dataset, spec, vc)? {
        let m = pair.y.len() as f64;
        let r = &pair.y - &pair.x * &b;
        let logdet: f64 = pair.chol_v.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let quad = r.dot(&pair.chol_v.solve(&r));
        total += m * LN_2PI + logdet + quad;
    }
    Ok(-0.5 * total)
}

/// GLS from fully materialized `V_k`.
pub fn dense_gls(dataset: &TrialDataset, spec: ModelSpec, vc: &VarianceComponents) -> Result<GlsEstimate> {
    let p = spec.n_fixed();
    let mut xtvx = DMatrix::zeros(p, p);
    let mut xtvy = DVector::zeros(p);
    for pair in dense_pairs(dataset, spec, vc)? {
        let vinv_x = pair.chol_v.solve(&pair.x);
        xtvx += pair.x.transpose() * &vinv_x;
        xtvy += vinv_x.transpose() * &pair.y;
    }
    let chol = xtvx.cholesky().ok_or(Error::RankDeficient)?;
    let coef = chol.solve(&xtvy);
    Ok(GlsEstimate { coef: coef.iter().copied().collect(), cov: chol.inverse() })
}
