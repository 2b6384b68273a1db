//! Clustering with incomplete data.
//!
//! - [`kmeans`]: Lloyd k-means with best-of-restarts selection.
//! - [`kpod`]: k-POD, the k-means loss restricted to observed entries, by two
//!   equivalent routes (masked descent and completed-matrix descent).
//! - [`missing`]: MCAR masks, complete cases, pattern grouping.
//! - [`synthetic`]: Gaussian mixtures and the named simulation presets.
//! - [`metrics`]: center MSE, the pattern decomposition of the k-POD loss,
//!   Monte-Carlo expected losses.
//! - [`oracle`]: large-sample reference centers.
//! - [`experiments`]: the repetition harness behind the MSE tables and trends.

pub mod error;
pub mod experiments;
pub mod kmeans;
pub mod kpod;
mod lloyd;
pub mod metrics;
pub mod missing;
pub mod model;
pub mod oracle;
pub mod synthetic;

pub use error::{Error, Result};
pub use kmeans::{km_assign, km_fit, km_loss, km_update, FitOptions, FitResult};
pub use kpod::{kpod_assign, kpod_fit, kpod_fit_imputed_form, kpod_loss, kpod_update, KpodFitResult};
pub use metrics::{decomposition_check, mc_expected_loss, mse_centers, DecompositionReport};
pub use missing::{complete_case_fit, complete_cases, gen_mask, group_patterns, McarSpec, PatternKey};
pub use model::{masked_sq_dist, Assignment, CenterMatrix, DataMatrix, MaskMatrix, RngSeed};
pub use synthetic::{preset, sample_gmm, GmmSpec, Preset};
