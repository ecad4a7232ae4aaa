#![allow(dead_code)]

use pairmlm::data::{ClusterRecord, TrialDataset};
use pairmlm::mlm::VarianceComponents;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Small unbalanced trial with pair-level heterogeneity in both level and
/// effect. Cluster sizes are drawn from `sizes`.
pub fn random_trial(rng: &mut impl Rng, n_pairs: usize, sizes: std::ops::RangeInclusive<usize>, covariate: bool) -> TrialDataset {
    let mut clusters = Vec::new();
    for k in 1..=n_pairs {
        let alpha = 10.0 + 2.0 * normal(rng);
        let tau = 3.0 + 0.8 * normal(rng);
        let first_treated = rng.random_bool(0.5);
        for (j, treated) in [(1, first_treated), (2, !first_treated)] {
            let mean = alpha + if treated { tau } else { 0.0 } + 0.3 * normal(rng);
            let n = rng.random_range(sizes.clone());
            let outcomes = (0..n).map(|_| mean + normal(rng)).collect();
            let x = covariate.then(|| mean + 0.5 * normal(rng) - if treated { tau } else { 0.0 });
            clusters.push(ClusterRecord { pair_id: k, cluster_id: format!("p{k}c{j}"), treated, outcomes, covariate: x });
        }
    }
    TrialDataset { clusters, n_pairs }
}

/// Random positive semidefinite components, occasionally singular.
pub fn random_components(rng: &mut impl Rng) -> VarianceComponents {
    let l11: f64 = rng.random_range(0.0..3.0);
    let l21: f64 = rng.random_range(-2.0..2.0);
    let l22: f64 = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..2.0) };
    VarianceComponents {
        sigma_alpha_sq: l11 * l11,
        sigma_tau_sq: l21 * l21 + l22 * l22,
        sigma_alpha_tau: l11 * l21,
        sigma_eps_sq: rng.random_range(0.05..4.0),
    }
}

pub fn map_outcomes(ds: &TrialDataset, f: impl Fn(f64) -> f64) -> TrialDataset {
    let mut out = ds.clone();
    for c in &mut out.clusters {
        for y in &mut c.outcomes {
            *y = f(*y);
        }
    }
    out
}

/// Profiled dense ML log-likelihood of MLM2 at Cholesky entries
/// `(l11, l21, l22, ln σ_ε)`; entries may be zero or negative.
pub fn dense_profile(ds: &TrialDataset, p: &[f64; 4]) -> (f64, f64) {
    use pairmlm::mlm::{dense_gls, dense_loglik, ModelSpec};
    let [l11, l21, l22, ls] = *p;
    let vc = VarianceComponents {
        sigma_alpha_sq: l11 * l11,
        sigma_tau_sq: l21 * l21 + l22 * l22,
        sigma_alpha_tau: l11 * l21,
        sigma_eps_sq: (2.0 * ls).exp(),
    };
    let Ok(gls) = dense_gls(ds, ModelSpec::MLM2, &vc) else { return (f64::NEG_INFINITY, f64::NAN) };
    let ll = dense_loglik(ds, ModelSpec::MLM2, &vc, &gls.coef).unwrap_or(f64::NEG_INFINITY);
    (ll, gls.coef[1])
}

/// Brute-force MLM2 maximum likelihood: a coarse grid over the Cholesky
/// entries, then a Hooke–Jeeves pattern search from the best few points.
/// Returns `(loglik, τ̂₀)`.
pub fn grid_and_polish_mlm2(ds: &TrialDataset) -> (f64, f64) {
    let l11s = [0.0, 0.5, 1.0, 2.0, 3.0];
    let l21s = [-1.0, -0.3, 0.0, 0.3, 1.0];
    let l22s = [0.0, 0.3, 0.7, 1.5];
    let lss = [-0.5, -0.2, 0.0, 0.2, 0.5];
    let mut grid = Vec::new();
    for &a in &l11s {
        for &b in &l21s {
            for &c in &l22s {
                for &d in &lss {
                    let p = [a, b, c, d];
                    grid.push((dense_profile(ds, &p).0, p));
                }
            }
        }
    }
    grid.sort_by(|x, y| y.0.total_cmp(&x.0));
    grid.iter()
        .take(3)
        .map(|&(_, p)| pattern_search(|q| dense_profile(ds, q).0, p))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(p, ll)| (ll, dense_profile(ds, &p).1))
        .unwrap()
}

fn pattern_search(f: impl Fn(&[f64; 4]) -> f64, mut x: [f64; 4]) -> ([f64; 4], f64) {
    let mut fx = f(&x);
    let mut step = 0.25;
    while step > 1e-10 {
        let mut improved = false;
        for i in 0..4 {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[i] += dir * step;
                let fy = f(&y);
                if fy > fx {
                    // keep going while the move pays off
                    let (mut xb, mut fb) = (y, fy);
                    loop {
                        let mut z = xb;
                        z[i] += dir * step;
                        let fz = f(&z);
                        if fz > fb {
                            (xb, fb) = (z, fz);
                        } else {
                            break;
                        }
                    }
                    (x, fx) = (xb, fb);
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}
