//! Multilevel models, design-based estimators and Monte Carlo studies for
//! matched-pair cluster-randomized trials.
//!
//! The crate is organized bottom-up:
//!
//! * [`data`] reads trial CSV files and reduces them to per-pair sufficient
//!   statistics.
//! * [`mlm`] fits the three nested multilevel models by maximum likelihood.
//! * [`design`] computes the pair-size-weighted difference-in-means estimator
//!   and its upper-bound standard error.
//! * [`lrt`] compares nested fits by likelihood-ratio tests.
//! * [`simulation`] generates matched-pair trials with imperfect matching and
//!   runs replicated scenarios over a grid of match-quality values.
//! * [`report`] aggregates sweeps into tables, CSV files and SVG plots.
//!
//! ```
//! use pairmlm::data::{pair_summaries, TrialDataset};
//! use pairmlm::mlm::{fit, FitOptions, ModelSpec};
//!
//! let csv = "pair_id,cluster_id,treated,y
//! 1,a,1,13.1
//! 1,a,1,12.7
//! 1,b,0,10.2
//! 1,b,0,9.6
//! 2,c,1,11.0
//! 2,c,1,11.9
//! 2,d,0,8.1
//! 2,d,0,8.3
//! 3,e,0,12.2
//! 3,e,0,11.5
//! 3,f,1,15.0
//! 3,f,1,14.6
//! ";
//! let data = TrialDataset::from_csv_reader(csv.as_bytes())?;
//! let mlm1 = fit(&data, ModelSpec::MLM1, &FitOptions::default())?;
//! assert!(mlm1.converged);
//! assert!((mlm1.tau0 - 3.1).abs() < 0.5);
//! let design = pairmlm::design::sate_estimate(&pair_summaries(&data)?)?;
//! assert!((design.tau_hat - mlm1.tau0).abs() < 1e-9);
//! # Ok::<(), pairmlm::Error>(())
//! ```

pub mod data;
pub mod design;
mod error;
pub mod lrt;
pub mod mlm;
pub mod optimize;
pub mod record;
pub mod report;
pub mod simulation;

pub use error::{Error, Result};

// The guide's listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/models.md")]
    mod models {}
    #[doc = include_str!("../../../book/src/design.md")]
    mod design {}
    #[doc = include_str!("../../../book/src/lrt.md")]
    mod lrt {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
