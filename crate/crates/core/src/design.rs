//! Design-based estimator of the sample average treatment effect for
//! matched-pair cluster trials.
//!
//! Each pair contributes its difference in cluster means `D_k`, weighted by
//! its share of the sample `w_k = (n_treated,k + n_control,k) / n`. The
//! variance estimate is the conservative matched-pair bound
//!
//! ```text
//! Var(τ̂) ≤ K / (K − 1) · Σ_k (w_k D_k − τ̂ / K)²
//! ```
//!
//! which is unbiased when effects are constant and too large otherwise.

use crate::data::PairSummary;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDifference {
    pub pair_id: usize,
    /// Treated minus control cluster mean.
    pub diff: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignEstimate {
    pub tau_hat: f64,
    /// Upper-bound standard error; `None` with a single pair.
    pub se_upper: Option<f64>,
    pub pair_diffs: Vec<PairDifference>,
}

/// Per-pair differences and size weights, ordered by pair.
pub fn pair_differences(summaries: &[PairSummary]) -> Vec<PairDifference> {
    let n: usize = summaries.iter().map(PairSummary::n_total).sum();
    let mut out: Vec<PairDifference> = summaries
        .iter()
        .map(|s| PairDifference {
            pair_id: s.pair_id,
            diff: s.mean_treated - s.mean_control,
            weight: s.n_total() as f64 / n as f64,
        })
        .collect();
    out.sort_by_key(|d| d.pair_id);
    out
}

pub fn sate_estimate(summaries: &[PairSummary]) -> Result<DesignEstimate> {
    if summaries.is_empty() {
        return Err(Error::TooFewPairs { needed: 1, got: 0 });
    }
    let pair_diffs = pair_differences(summaries);
    let k = pair_diffs.len() as f64;
    // Work with n·w_k (the pair sizes) and divide by n once, so simple
    // inputs give exact results.
    let mut sorted: Vec<&PairSummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.pair_id);
    let sizes: Vec<f64> = sorted.iter().map(|s| s.n_total() as f64).collect();
    let n: f64 = sizes.iter().sum();
    let total: f64 = pair_diffs.iter().zip(&sizes).map(|(d, m)| m * d.diff).sum();
    let tau_hat = total / n;
    let se_upper = (pair_diffs.len() >= 2).then(|| {
        let ss: f64 = pair_diffs
            .iter()
            .zip(&sizes)
            .map(|(d, m)| {
                let e = m * d.diff - total / k;
                e * e
            })
            .sum();
        (k / (k - 1.0) * ss).sqrt() / n
    });
    Ok(DesignEstimate { tau_hat, se_upper, pair_diffs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pair_id: usize, diff: f64, n_each: usize) -> PairSummary {
        PairSummary {
            pair_id,
            n_treated: n_each,
            n_control: n_each,
            mean_treated: 10.0 + diff,
            mean_control: 10.0,
            sse_within: 0.0,
            x_treated: None,
            x_control: None,
        }
    }

    #[test]
    fn difference_of_means() {
        let s = PairSummary { mean_treated: 5.0, mean_control: 3.0, ..pair(1, 0.0, 1) };
        assert_eq!(pair_differences(&[s])[0].diff, 2.0);
    }

    #[test]
    fn size_weights() {
        let d = pair_differences(&[pair(1, 1.0, 2), pair(2, 1.0, 3)]);
        assert_eq!((d[0].weight, d[1].weight), (0.4, 0.6));
        let d = pair_differences(&[pair(1, 1.0, 5), pair(2, 2.0, 5), pair(3, 0.0, 5), pair(4, 0.0, 5)]);
        assert!(d.iter().all(|p| p.weight == 0.25));
    }

    #[test]
    fn hand_example() {
        let est = sate_estimate(&[pair(1, 2.0, 2), pair(2, 3.0, 3)]).unwrap();
        assert_eq!((est.tau_hat, est.se_upper), (2.6, Some(1.0)));
    }

    #[test]
    fn constant_differences_have_zero_se() {
        let est = sate_estimate(&[pair(1, 1.5, 4), pair(2, 1.5, 4), pair(3, 1.5, 4)]).unwrap();
        assert!((est.tau_hat - 1.5).abs() < 1e-12);
        assert!(est.se_upper.unwrap().abs() < 1e-12);
    }

    #[test]
    fn single_pair_has_no_se() {
        let est = sate_estimate(&[pair(1, 1.5, 4)]).unwrap();
        assert_eq!(est.tau_hat, 1.5);
        assert_eq!(est.se_upper, None);
        assert!(sate_estimate(&[]).is_err());
    }
}
