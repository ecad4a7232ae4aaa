//! Flat `key=value` text records for fits and estimates.
//!
//! One entry per line, keys unique, values printed with Rust's shortest
//! round-trip float formatting. Missing values are written as `NA`.
//!
//! | record            | keys |
//! |-------------------|------|
//! | model fit         | `model reml converged n_evals n_pairs n_obs alpha0 tau0 beta se_tau sigma_alpha_sq sigma_tau_sq sigma_alpha_tau sigma_eps_sq loglik` |
//! | design estimate   | `estimator n_pairs tau_hat se_upper` then `pair.<k>.diff pair.<k>.weight` per pair |
//! | likelihood ratio  | `null_model alt_model null_loglik alt_loglik stat df_naive p_naive p_mixture rejected_05` |

use std::fmt::{self, Display};

use crate::design::DesignEstimate;
use crate::error::{Error, Result};
use crate::lrt::LrtResult;
use crate::mlm::ModelFit;

pub const MISSING: &str = "NA";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Record {
    entries: Vec<(String, String)>,
}

impl Record {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn push_opt(&mut self, key: impl Into<String>, value: Option<impl Display>) -> &mut Self {
        match value {
            Some(v) => self.push(key, v),
            None => self.push(key, MISSING),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Numeric value of `key`; `Ok(None)` when the value is `NA`.
    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Err(Error::Config(format!("record has no key `{key}`"))),
            Some(MISSING) => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("`{key}` is not numeric: {v}"))),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn parse(text: &str) -> Result<Record> {
        let mut record = Record::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: i as u64 + 1, message: format!("expected key=value, got `{line}`") })?;
            if record.get(k).is_some() {
                return Err(Error::Parse { line: i as u64 + 1, message: format!("duplicate key `{k}`") });
            }
            record.push(k, v);
        }
        Ok(record)
    }
}

impl Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl From<&ModelFit> for Record {
    fn from(fit: &ModelFit) -> Self {
        let mut r = Record::new();
        r.push("model", fit.spec)
            .push("reml", fit.reml)
            .push("converged", fit.converged)
            .push("n_evals", fit.n_evals)
            .push("n_pairs", fit.n_pairs)
            .push("n_obs", fit.n_obs)
            .push("alpha0", fit.alpha0)
            .push("tau0", fit.tau0)
            .push_opt("beta", fit.beta)
            .push("se_tau", fit.se_tau)
            .push("sigma_alpha_sq", fit.vc.sigma_alpha_sq)
            .push("sigma_tau_sq", fit.vc.sigma_tau_sq)
            .push("sigma_alpha_tau", fit.vc.sigma_alpha_tau)
            .push("sigma_eps_sq", fit.vc.sigma_eps_sq)
            .push("loglik", fit.loglik);
        r
    }
}

impl From<&DesignEstimate> for Record {
    fn from(est: &DesignEstimate) -> Self {
        let mut r = Record::new();
        r.push("estimator", "IKN")
            .push("n_pairs", est.pair_diffs.len())
            .push("tau_hat", est.tau_hat)
            .push_opt("se_upper", est.se_upper);
        for d in &est.pair_diffs {
            r.push(format!("pair.{}.diff", d.pair_id), d.diff);
            r.push(format!("pair.{}.weight", d.pair_id), d.weight);
        }
        r
    }
}

pub fn lrt_record(null: &ModelFit, alt: &ModelFit, result: &LrtResult) -> Record {
    let mut r = Record::new();
    r.push("null_model", null.spec)
        .push("alt_model", alt.spec)
        .push("null_loglik", null.loglik)
        .push("alt_loglik", alt.loglik)
        .push("stat", result.stat)
        .push("df_naive", result.df_naive)
        .push("p_naive", result.p_naive)
        .push("p_mixture", result.p_mixture)
        .push("rejected_05", result.rejected_05);
    r
}
