//! Monte Carlo engine for matched-pair cluster-randomized trials.
//!
//! One replication draws cluster sizes, pair potential outcomes with a
//! within-pair mismatch `δ_k ~ N(0, π² σ₀²)`, randomizes treatment within each
//! pair, adds individual noise, and then fits MLM1, MLM2 (and MLM3 when a
//! covariate is generated) alongside the design-based estimator.
//!
//! Every replication owns its random stream, seeded from
//! `(master_seed, grid_index, rep_id)` by [`replication_seed`], so results do
//! not depend on scheduling and sweeps are reproducible under any degree of
//! parallelism.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{pair_summaries, ClusterRecord, TrialDataset};
use crate::design::sate_estimate;
use crate::error::{Error, Result};
use crate::lrt::{lrt, LrtResult};
use crate::mlm::{fit_summaries, fit_with_start, FitOptions, ModelFit, ModelSpec};

/// Standard deviation of the cluster effects in `independent` mode: the SD of
/// `30 / Y` for `Y ~ N(10, 4)`, obtained once by numerical quadrature.
pub const INDEPENDENT_EFFECT_SD: f64 = 0.742;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizesMode {
    /// Every cluster has `mean_cluster_size` members.
    Fixed,
    /// One multinomial draw of all individuals over equally likely clusters.
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectsMode {
    Constant,
    /// `τ_jk = hetero_numerator / Y_jk(0)`.
    Heterogeneous,
    /// `τ_jk ~ N(tau_const, INDEPENDENT_EFFECT_SD²)`, independent of the
    /// potential outcomes.
    Independent,
}

/// Full parameterization of a simulated scenario. Field names double as the
/// keys of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "K")]
    pub n_pairs: usize,
    pub mean_cluster_size: usize,
    pub sizes_mode: SizesMode,
    /// Match-quality parameter; `δ_k` has standard deviation `pi · σ₀`.
    pub pi: f64,
    pub effects_mode: EffectsMode,
    pub tau_const: f64,
    pub hetero_numerator: f64,
    pub mu0: f64,
    pub sigma0_sq: f64,
    pub sigma_eps_sq: f64,
    pub covariate: bool,
    /// Standard deviation of the covariate noise.
    pub sigma_zeta: f64,
    pub replications: usize,
    pub master_seed: u64,
    /// Grid of `pi` values for sweeps; `pi` itself is used by single runs.
    pub pi_grid: Option<Vec<f64>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_pairs: 30,
            mean_cluster_size: 50,
            sizes_mode: SizesMode::Multinomial,
            pi: 0.0,
            effects_mode: EffectsMode::Constant,
            tau_const: 3.2,
            hetero_numerator: 30.0,
            mu0: 10.0,
            sigma0_sq: 4.0,
            sigma_eps_sq: 1.0,
            covariate: false,
            sigma_zeta: 0.2,
            replications: 100,
            master_seed: 20_090_101,
            pi_grid: None,
        }
    }
}

/// `0, 0.05, …, 0.7`.
pub fn default_pi_grid() -> Vec<f64> {
    (0..=14).map(|i| f64::from(i * 5) / 100.0).collect()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_pairs < 2 {
            return bad("K must be at least 2");
        }
        if self.mean_cluster_size < 1 {
            return bad("mean_cluster_size must be at least 1");
        }
        if self.replications < 1 {
            return bad("replications must be at least 1");
        }
        for (name, v) in [
            ("pi", self.pi),
            ("sigma0_sq", self.sigma0_sq),
            ("sigma_eps_sq", self.sigma_eps_sq),
            ("sigma_zeta", self.sigma_zeta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [("mu0", self.mu0), ("tau_const", self.tau_const), ("hetero_numerator", self.hetero_numerator)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if let Some(grid) = &self.pi_grid {
            if grid.is_empty() {
                return bad("pi_grid must not be empty");
            }
            if grid.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return bad("pi_grid values must be finite and non-negative");
            }
        }
        Ok(())
    }

    /// Parses a configuration file. Unknown keys are rejected.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Vec<f64> {
        self.pi_grid.clone().unwrap_or_else(default_pi_grid)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the random stream for one replication.
///
/// `splitmix64(splitmix64(splitmix64(master) ^ grid_index) ^ rep_id)`, where
/// `splitmix64` is the SplitMix64 finalizer applied after adding the golden
/// gamma. The stream itself is ChaCha8 seeded with this value through
/// `SeedableRng::seed_from_u64`.
pub fn replication_seed(master_seed: u64, grid_index: u64, rep_id: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ grid_index) ^ rep_id)
}

pub fn replication_rng(master_seed: u64, grid_index: u64, rep_id: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replication_seed(master_seed, grid_index, rep_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeDraw {
    /// `2K` sizes; pair `k` owns entries `2k` and `2k + 1`.
    pub sizes: Vec<usize>,
    /// Number of full redraws caused by an empty cluster.
    pub redraws: usize,
}

pub fn draw_cluster_sizes<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> SizeDraw {
    let n_clusters = 2 * config.n_pairs;
    if config.sizes_mode == SizesMode::Fixed {
        return SizeDraw { sizes: vec![config.mean_cluster_size; n_clusters], redraws: 0 };
    }
    let total = n_clusters * config.mean_cluster_size;
    let mut redraws = 0;
    loop {
        let mut sizes = vec![0usize; n_clusters];
        for _ in 0..total {
            sizes[rng.random_range(0..n_clusters)] += 1;
        }
        if sizes.iter().all(|&s| s > 0) {
            return SizeDraw { sizes, redraws };
        }
        redraws += 1;
    }
}

/// Cluster-level potential outcomes of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPotentials {
    pub y0_1: f64,
    pub y0_2: f64,
    pub delta: f64,
    pub tau_1: f64,
    pub tau_2: f64,
    pub x_1: Option<f64>,
    pub x_2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialDraw {
    pub pairs: Vec<PairPotentials>,
    /// Pairs redrawn because a control potential outcome was exactly zero.
    pub redraws: usize,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn draw_potentials<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> PotentialDraw {
    let sigma0 = config.sigma0_sq.sqrt();
    let mut redraws = 0;
    let pairs = (0..config.n_pairs)
        .map(|_| loop {
            let y0_1 = config.mu0 + sigma0 * normal(rng);
            let delta = config.pi * sigma0 * normal(rng);
            let y0_2 = y0_1 + delta;
            let (tau_1, tau_2) = match config.effects_mode {
                EffectsMode::Constant => (config.tau_const, config.tau_const),
                EffectsMode::Heterogeneous => (config.hetero_numerator / y0_1, config.hetero_numerator / y0_2),
                EffectsMode::Independent => (
                    config.tau_const + INDEPENDENT_EFFECT_SD * normal(rng),
                    config.tau_const + INDEPENDENT_EFFECT_SD * normal(rng),
                ),
            };
            // Drawn unconditionally so switching the covariate on or off
            // leaves every other draw unchanged.
            let zeta_1 = config.sigma_zeta * normal(rng);
            let zeta_2 = config.sigma_zeta * normal(rng);
            if config.effects_mode == EffectsMode::Heterogeneous && (y0_1 == 0.0 || y0_2 == 0.0) {
                redraws += 1;
                continue;
            }
            let (x_1, x_2) = if config.covariate { (Some(y0_1 + zeta_1), Some(y0_2 + zeta_2)) } else { (None, None) };
            break PairPotentials { y0_1, y0_2, delta, tau_1, tau_2, x_1, x_2 };
        })
        .collect();
    PotentialDraw { pairs, redraws }
}

/// Randomizes treatment within each pair and generates individual outcomes.
pub fn assign_and_observe<R: Rng + ?Sized>(
    potentials: &[PairPotentials],
    sizes: &[usize],
    config: &ScenarioConfig,
    rng: &mut R,
) -> TrialDataset {
    assert_eq!(sizes.len(), 2 * potentials.len(), "sizes and pairs are misaligned");
    let sigma_eps = config.sigma_eps_sq.sqrt();
    let mut clusters = Vec::with_capacity(sizes.len());
    for (k, pair) in potentials.iter().enumerate() {
        let second_treated = rng.random_bool(0.5);
        let arms = [(pair.y0_1, pair.tau_1, pair.x_1), (pair.y0_2, pair.tau_2, pair.x_2)];
        for (j, &(y0, tau, x)) in arms.iter().enumerate() {
            let treated = (j == 1) == second_treated;
            let revealed = if treated { y0 + tau } else { y0 };
            let outcomes = (0..sizes[2 * k + j]).map(|_| revealed + sigma_eps * normal(rng)).collect();
            clusters.push(ClusterRecord {
                pair_id: k + 1,
                cluster_id: format!("p{}c{}", k + 1, j + 1),
                treated,
                outcomes,
                covariate: x,
            });
        }
    }
    TrialDataset { clusters, n_pairs: potentials.len() }
}

/// Generates one trial from the stream `rng`.
pub fn generate_trial<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> TrialDataset {
    let sizes = draw_cluster_sizes(config, rng);
    let potentials = draw_potentials(config, rng);
    assign_and_observe(&potentials.pairs, &sizes.sizes, config, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Mlm1,
    Mlm2,
    Mlm3,
    Ikn,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [Estimator::Mlm1, Estimator::Mlm2, Estimator::Mlm3, Estimator::Ikn];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Mlm1 => "MLM1",
            Estimator::Mlm2 => "MLM2",
            Estimator::Mlm3 => "MLM3",
            Estimator::Ikn => "IKN",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown estimator `{s}`")))
    }
}

/// One estimator's output in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub estimator: Estimator,
    pub tau_hat: f64,
    pub se: f64,
    pub converged: bool,
    pub sigma_alpha_sq: Option<f64>,
    pub sigma_tau_sq: Option<f64>,
    pub sigma_eps_sq: Option<f64>,
    pub loglik: Option<f64>,
}

impl EstimateRecord {
    fn from_fit(estimator: Estimator, fit: &ModelFit) -> Self {
        EstimateRecord {
            estimator,
            tau_hat: fit.tau0,
            se: fit.se_tau,
            converged: fit.converged,
            sigma_alpha_sq: Some(fit.vc.sigma_alpha_sq),
            sigma_tau_sq: Some(fit.vc.sigma_tau_sq),
            sigma_eps_sq: Some(fit.vc.sigma_eps_sq),
            loglik: Some(fit.loglik),
        }
    }

    fn failed(estimator: Estimator) -> Self {
        EstimateRecord {
            estimator,
            tau_hat: f64::NAN,
            se: f64::NAN,
            converged: false,
            sigma_alpha_sq: None,
            sigma_tau_sq: None,
            sigma_eps_sq: None,
            loglik: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub grid_index: usize,
    pub pi: f64,
    pub rep_id: u64,
    pub estimates: Vec<EstimateRecord>,
    /// MLM1 against MLM2; absent if either fit failed.
    pub lrt: Option<LrtResult>,
    /// `|n_1 − n_2|` per pair.
    pub size_diffs: Vec<usize>,
}

impl ReplicationResult {
    pub fn estimate(&self, estimator: Estimator) -> Option<&EstimateRecord> {
        self.estimates.iter().find(|e| e.estimator == estimator)
    }

    pub fn mean_abs_size_diff(&self) -> f64 {
        self.size_diffs.iter().sum::<usize>() as f64 / self.size_diffs.len() as f64
    }
}

/// Runs replication `rep_id` at grid point `grid_index`; the scenario's
/// match quality is `config.pi`.
pub fn run_replication(config: &ScenarioConfig, grid_index: usize, rep_id: u64) -> ReplicationResult {
    let mut rng = replication_rng(config.master_seed, grid_index as u64, rep_id);
    let sizes = draw_cluster_sizes(config, &mut rng);
    let potentials = draw_potentials(config, &mut rng);
    let data = assign_and_observe(&potentials.pairs, &sizes.sizes, config, &mut rng);
    let size_diffs = sizes.sizes.chunks(2).map(|c| c[0].abs_diff(c[1])).collect();

    let options = FitOptions::default();
    let summaries = pair_summaries(&data).expect("simulated trials are valid");
    let mut estimates = Vec::with_capacity(4);

    let mlm1 = fit_summaries(&summaries, ModelSpec::MLM1, &options).ok();
    let mlm2 = mlm1.as_ref().and_then(|null| fit_with_start(&summaries, ModelSpec::MLM2, &options, null).ok());
    estimates.push(mlm1.as_ref().map_or(EstimateRecord::failed(Estimator::Mlm1), |f| {
        EstimateRecord::from_fit(Estimator::Mlm1, f)
    }));
    estimates.push(mlm2.as_ref().map_or(EstimateRecord::failed(Estimator::Mlm2), |f| {
        EstimateRecord::from_fit(Estimator::Mlm2, f)
    }));
    if config.covariate {
        let mlm3 = fit_summaries(&summaries, ModelSpec::MLM3, &options).ok();
        estimates.push(mlm3.as_ref().map_or(EstimateRecord::failed(Estimator::Mlm3), |f| {
            EstimateRecord::from_fit(Estimator::Mlm3, f)
        }));
    }
    let design = sate_estimate(&summaries).expect("at least one pair");
    estimates.push(EstimateRecord {
        estimator: Estimator::Ikn,
        tau_hat: design.tau_hat,
        se: design.se_upper.unwrap_or(f64::NAN),
        converged: design.se_upper.is_some(),
        sigma_alpha_sq: None,
        sigma_tau_sq: None,
        sigma_eps_sq: None,
        loglik: None,
    });

    let lrt = match (&mlm1, &mlm2) {
        (Some(null), Some(alt)) => lrt(null, alt).ok(),
        _ => None,
    };
    ReplicationResult { grid_index, pi: config.pi, rep_id, estimates, lrt, size_diffs }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub grid_index: usize,
    pub pi: f64,
    pub replications: Vec<ReplicationResult>,
}

/// Raw results of a sweep over match-quality values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config: ScenarioConfig,
    pub points: Vec<GridPoint>,
}

impl SweepResult {
    /// Estimators present in every replication, in canonical order.
    pub fn estimators(&self) -> Vec<Estimator> {
        let mut out: Vec<Estimator> = Estimator::ALL
            .into_iter()
            .filter(|e| self.points.iter().flat_map(|p| &p.replications).all(|r| r.estimate(*e).is_some()))
            .collect();
        out.sort();
        out
    }
}

/// Runs `config.replications` replications at every grid value. Replications
/// run on the current rayon pool; the result is identical for any pool size.
pub fn run_sweep(config: &ScenarioConfig, pi_grid: &[f64]) -> Result<SweepResult> {
    config.validate()?;
    if pi_grid.is_empty() {
        return Err(Error::Config("pi grid must not be empty".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..pi_grid.len())
        .flat_map(|g| (0..config.replications as u64).map(move |r| (g, r)))
        .collect();
    let results: Vec<ReplicationResult> = jobs
        .par_iter()
        .map(|&(g, r)| {
            let cfg = ScenarioConfig { pi: pi_grid[g], ..config.clone() };
            run_replication(&cfg, g, r)
        })
        .collect();

    let mut points: Vec<GridPoint> = pi_grid
        .iter()
        .enumerate()
        .map(|(grid_index, &pi)| GridPoint { grid_index, pi, replications: Vec::with_capacity(config.replications) })
        .collect();
    for rep in results {
        points[rep.grid_index].replications.push(rep);
    }
    Ok(SweepResult { config: config.clone(), points })
}

/// Like [`run_sweep`] on a dedicated pool of `threads` workers.
pub fn run_sweep_with_threads(config: &ScenarioConfig, pi_grid: &[f64], threads: usize) -> Result<SweepResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep(config, pi_grid))
}
