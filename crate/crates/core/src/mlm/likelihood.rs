//! Per-pair block likelihood and GLS.
//!
//! With `Σ = L Lᵀ`, `W_k = Z_k L` and `M_k = σ_ε² I + W_kᵀ W_k`:
//!
//! ```text
//! log |V_k| = (m_k − q) log σ_ε² + log |M_k|
//! V_k⁻¹     = σ_ε⁻² (I − W_k M_k⁻¹ W_kᵀ)
//! ```
//!
//! `M_k` is positive definite for any PSD `Σ`, so singular `Σ` (a variance at
//! zero) is handled without special cases.

use nalgebra::DMatrix;

use super::small::{chol_inverse, chol_logdet, chol_solve, dot, Mat3, Vec3, CAP};
use super::{ModelSpec, VarianceComponents};
use crate::data::PairSummary;
use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sufficient statistics of one pair arranged for the block likelihood.
#[derive(Debug, Clone)]
struct PairBlock {
    /// Cluster sizes, treated first.
    n: [f64; 2],
    ybar: [f64; 2],
    x: [Vec3; 2],
    z: [[f64; 2]; 2],
    sse: f64,
    m: f64,
    // Parameter-free cross products.
    ztz: Mat3,
    ztx: [Vec3; 2],
    xtx: Mat3,
    xty: Vec3,
    zty: [f64; 2],
}

impl PairBlock {
    fn new(s: &PairSummary, spec: ModelSpec) -> Result<Self> {
        let p = spec.n_fixed();
        let q = spec.n_random();
        let n = [s.n_treated as f64, s.n_control as f64];
        let ybar = [s.mean_treated, s.mean_control];
        let mut x = [[0.0; CAP]; 2];
        let mut z = [[0.0; 2]; 2];
        for (j, treated) in [1.0, 0.0].into_iter().enumerate() {
            x[j][0] = 1.0;
            x[j][1] = treated;
            if spec.covariate {
                let cov = if j == 0 { s.x_treated } else { s.x_control };
                x[j][2] = cov.ok_or_else(|| Error::CovariateRequired(spec.name().into()))?;
            }
            z[j][0] = 1.0;
            if spec.random_slope {
                z[j][1] = treated;
            }
        }

        let mut ztz = Mat3::zeros(q);
        let mut ztx = [[0.0; CAP]; 2];
        let mut xtx = Mat3::zeros(p);
        let mut xty = [0.0; CAP];
        let mut zty = [0.0; 2];
        for j in 0..2 {
            for a in 0..q {
                for b in 0..q {
                    ztz.a[a][b] += n[j] * z[j][a] * z[j][b];
                }
                for b in 0..p {
                    ztx[a][b] += n[j] * z[j][a] * x[j][b];
                }
                zty[a] += n[j] * z[j][a] * ybar[j];
            }
            for a in 0..p {
                for b in 0..p {
                    xtx.a[a][b] += n[j] * x[j][a] * x[j][b];
                }
                xty[a] += n[j] * x[j][a] * ybar[j];
            }
        }
        Ok(PairBlock { n, ybar, x, z, sse: s.sse_within, m: n[0] + n[1], ztz, ztx, xtx, xty, zty })
    }
}

/// Per-pair pieces that depend on `(L, σ_ε²)`.
struct Woodbury {
    /// Cholesky factor of `M = σ² I + Lᵀ ZᵀZ L`.
    chol_m: Mat3,
    logdet_m: f64,
}

/// Fixed-effect estimate from GLS at given variance components.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsEstimate {
    /// `(α₀, τ, β?)`.
    pub coef: Vec<f64>,
    /// `(Σ_k X_kᵀ V_k⁻¹ X_k)⁻¹`.
    pub cov: DMatrix<f64>,
}

impl GlsEstimate {
    pub fn se_tau(&self) -> f64 {
        self.cov[(1, 1)].sqrt()
    }
}

pub(crate) struct Profiled {
    pub coef: Vec3,
    pub cov: Mat3,
    /// Restricted log-likelihood when requested, otherwise equal to `loglik`.
    pub objective: f64,
}

/// The likelihood of one model over a fixed set of pair summaries.
#[derive(Debug, Clone)]
pub(crate) struct BlockModel {
    spec: ModelSpec,
    pairs: Vec<PairBlock>,
    n_obs: f64,
}

impl BlockModel {
    pub fn new(summaries: &[PairSummary], spec: ModelSpec) -> Result<Self> {
        let pairs = summaries.iter().map(|s| PairBlock::new(s, spec)).collect::<Result<Vec<_>>>()?;
        let n_obs = pairs.iter().map(|p| p.m).sum();
        Ok(BlockModel { spec, pairs, n_obs })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    fn woodbury(&self, pair: &PairBlock, l: &Mat3, s2: f64) -> Woodbury {
        let q = l.n;
        // A = Lᵀ ZᵀZ L
        let mut zl = Mat3::zeros(q);
        for a in 0..q {
            for b in 0..q {
                zl.a[a][b] = (0..q).map(|c| pair.ztz.a[a][c] * l.a[c][b]).sum();
            }
        }
        let mut m = Mat3::identity(q);
        for a in 0..q {
            m.a[a][a] = s2;
            for b in 0..q {
                m.a[a][b] += (0..q).map(|c| l.a[c][a] * zl.a[c][b]).sum::<f64>();
            }
        }
        // M ⪰ σ² I, so this only fails on non-finite input.
        let chol_m = m.cholesky().unwrap_or_else(|| {
            let mut fallback = Mat3::identity(q);
            for i in 0..q {
                fallback.a[i][i] = f64::NAN;
            }
            fallback
        });
        let logdet_m = chol_logdet(&chol_m);
        Woodbury { chol_m, logdet_m }
    }

    /// `Lᵀ v` for a q-vector `v`.
    fn lt_times(l: &Mat3, v: &[f64]) -> Vec3 {
        let mut out = [0.0; CAP];
        for a in 0..l.n {
            out[a] = (0..l.n).map(|c| l.a[c][a] * v[c]).sum();
        }
        out
    }

    /// Log-likelihood at fixed effects `b`, from per-cluster residual means.
    pub fn loglik_at(&self, l: &Mat3, s2: f64, b: &[f64]) -> f64 {
        let p = self.spec.n_fixed();
        let q = l.n;
        let mut total = 0.0;
        for pair in &self.pairs {
            let w = self.woodbury(pair, l, s2);
            let mut rtr = pair.sse;
            let mut ztr = [0.0; 2];
            for j in 0..2 {
                let rbar = pair.ybar[j] - (0..p).map(|c| pair.x[j][c] * b[c]).sum::<f64>();
                rtr += pair.n[j] * rbar * rbar;
                for a in 0..q {
                    ztr[a] += pair.n[j] * pair.z[j][a] * rbar;
                }
            }
            let u = Self::lt_times(l, &ztr[..q]);
            let minv_u = chol_solve(&w.chol_m, &u);
            let quad = (rtr - dot(&u, &minv_u, q)) / s2;
            let logdet = (pair.m - q as f64) * s2.ln() + w.logdet_m;
            total += pair.m * LN_2PI + logdet + quad;
        }
        -0.5 * total
    }

    /// GLS normal equations `(Σ XᵀV⁻¹X, Σ XᵀV⁻¹y)`.
    fn normal_equations(&self, l: &Mat3, s2: f64) -> (Mat3, Vec3) {
        let p = self.spec.n_fixed();
        let q = l.n;
        let mut xtvx = Mat3::zeros(p);
        let mut xtvy = [0.0; CAP];
        for pair in &self.pairs {
            let w = self.woodbury(pair, l, s2);
            // G = Lᵀ ZᵀX (q×p), h = Lᵀ Zᵀy
            let mut g = [[0.0; CAP]; 2];
            for b in 0..p {
                let lt = Self::lt_times(l, &[pair.ztx[0][b], pair.ztx[1][b]]);
                for a in 0..q {
                    g[a][b] = lt[a];
                }
            }
            let h = Self::lt_times(l, &pair.zty[..q]);
            let minv_h = chol_solve(&w.chol_m, &h);
            let mut minv_g = [[0.0; CAP]; 2];
            for b in 0..p {
                let col = [g[0][b], g[1][b], 0.0];
                let sol = chol_solve(&w.chol_m, &col);
                for a in 0..q {
                    minv_g[a][b] = sol[a];
                }
            }
            for a in 0..p {
                for b in 0..p {
                    let corr: f64 = (0..q).map(|c| g[c][a] * minv_g[c][b]).sum();
                    xtvx.a[a][b] += (pair.xtx.a[a][b] - corr) / s2;
                }
                let corr: f64 = (0..q).map(|c| g[c][a] * minv_h[c]).sum();
                xtvy[a] += (pair.xty[a] - corr) / s2;
            }
        }
        (xtvx, xtvy)
    }

    /// GLS estimate and its covariance.
    pub fn gls(&self, l: &Mat3, s2: f64) -> Result<(Vec3, Mat3, f64)> {
        let (xtvx, xtvy) = self.normal_equations(l, s2);
        let chol = xtvx.cholesky().ok_or(Error::RankDeficient)?;
        let coef = chol_solve(&chol, &xtvy);
        Ok((coef, chol_inverse(&chol), chol_logdet(&chol)))
    }

    /// Profiles the fixed effects out at `(L, σ_ε²)`.
    pub fn profile(&self, l: &Mat3, s2: f64, reml: bool) -> Result<Profiled> {
        let (coef, cov, logdet_xtvx) = self.gls(l, s2)?;
        let loglik = self.loglik_at(l, s2, &coef);
        let objective = if reml {
            let p = self.spec.n_fixed() as f64;
            loglik - 0.5 * logdet_xtvx + 0.5 * p * LN_2PI
        } else {
            loglik
        };
        Ok(Profiled { coef, cov, objective })
    }

    /// Empirical-Bayes predictions `Σ Zᵀ V⁻¹ r = L M⁻¹ Lᵀ Zᵀ r` per pair.
    pub fn blups(&self, l: &Mat3, s2: f64, b: &[f64]) -> Vec<[f64; 2]> {
        let p = self.spec.n_fixed();
        let q = l.n;
        self.pairs
            .iter()
            .map(|pair| {
                let w = self.woodbury(pair, l, s2);
                let mut ztr = [0.0; 2];
                for j in 0..2 {
                    let rbar = pair.ybar[j] - (0..p).map(|c| pair.x[j][c] * b[c]).sum::<f64>();
                    for a in 0..q {
                        ztr[a] += pair.n[j] * pair.z[j][a] * rbar;
                    }
                }
                let u = Self::lt_times(l, &ztr[..q]);
                let v = chol_solve(&w.chol_m, &u);
                let mut out = [0.0; 2];
                for a in 0..q {
                    out[a] = (0..q).map(|c| l.a[a][c] * v[c]).sum();
                }
                out
            })
            .collect()
    }

    pub fn n_obs(&self) -> f64 {
        self.n_obs
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }
}

/// Exact ML log-likelihood of `spec` at `(vc, fixed)` computed from pair
/// summaries.
pub fn block_loglik(
    summaries: &[PairSummary],
    spec: ModelSpec,
    vc: &VarianceComponents,
    fixed: &[f64],
) -> Result<f64> {
    if fixed.len() != spec.n_fixed() {
        return Err(Error::FixedArity { expected: spec.n_fixed(), got: fixed.len() });
    }
    let l = vc.factor(spec.n_random())?;
    let model = BlockModel::new(summaries, spec)?;
    Ok(model.loglik_at(&l, vc.sigma_eps_sq, fixed))
}

/// GLS fixed effects `(α₀, τ, β?)` and their covariance at `vc`.
pub fn gls_fixed_effects(summaries: &[PairSummary], spec: ModelSpec, vc: &VarianceComponents) -> Result<GlsEstimate> {
    let l = vc.factor(spec.n_random())?;
    let model = BlockModel::new(summaries, spec)?;
    let (coef, cov, _) = model.gls(&l, vc.sigma_eps_sq)?;
    let p = spec.n_fixed();
    Ok(GlsEstimate {
        coef: coef[..p].to_vec(),
        cov: DMatrix::from_fn(p, p, |i, j| cov.a[i][j]),
    })
}
