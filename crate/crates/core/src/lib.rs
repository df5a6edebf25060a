//! Density-targeted synthetic data for symbolic regression.
//!
//! The crate finds the sparse edges of a training set with a Gaussian kernel
//! density estimate, asks a trained teacher model to label noisy copies of the
//! low-density training rows, retrains student models on the augmented data and
//! measures how their interpolation and extrapolation error changes.
//!
//! Modules follow the flow of an experiment:
//!
//! - [`data`]: CSV loading, standardization, density-based test partitioning.
//! - [`density`]: Gaussian KDE, log-density scoring and percentile thresholds.
//! - [`sr`]: tree GP symbolic regression with islands and a Pareto front.
//! - [`teachers`]: MLP and random forest regressors plus the [`teachers::Predictor`] handle.
//! - [`distill`]: synthetic sample generation and training-set augmentation.
//! - [`evaluation`]: RMSE, relative change, one-sided t-tests, matrices, diagnostics.
//! - [`pipeline`]: config, seed schedule and the end-to-end experiment runner.

pub mod data;
pub mod density;
pub mod distill;
mod error;
pub mod evaluation;
pub mod export;
pub mod pipeline;
pub mod sr;
pub mod teachers;

pub use error::{Error, ErrorClass, Result};
