//! Post-estimation smoothing: linear smoothing of precomputed predictions
//! along index variables such as time or location.
//!
//! The crate provides the shrinkage smoother `S_c = c W + (1 - c) I` with a
//! Nadaraya-Watson `W`, the covariance-optimal smoother, the `gamma` / `beta`
//! diagnostics and the improvement bound for `S_c`, an errors-in-variables
//! simulation study, several baselines, and validation grid search.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod simulation;
pub mod smoother;
pub mod theory;
pub mod tuning;

pub use error::{PesError, Result};
pub use model::{CovarianceBundle, IndexedDataset, PredictionSet, SplitAssignment};
pub use smoother::{SmootherSpec, WeightMatrix};
pub use tuning::{GridSpec, Metric, TuneReport};
