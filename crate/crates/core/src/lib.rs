//! Early estimation of a classifier's bias/variance decomposition and
//! forecasting of the error it will reach after further training.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: datasets, CSV ingestion, synthetic generators and nested prefixes.
//! * [`learners`]: a small zoo of from-scratch classifiers with different
//!   bias/variance profiles.
//! * [`decomp`]: repeated N-fold cross-validation and the Kohavi–Wolpert
//!   decomposition of 0/1 loss.
//! * [`regress`]: least squares, constant regression, power-law fitting and
//!   the paired t-test.
//! * [`forecast`]: pooled regression registry and final-value forecasts.
//! * [`ensemble`]: voting ensembles, the always-wrong oracle bound and
//!   learning-curve extrapolation.
//! * [`experiment`]: deterministic, resumable experiment grids.

pub mod data;
pub mod decomp;
pub mod ensemble;
mod error;
pub mod experiment;
pub mod forecast;
pub mod learners;
pub mod regress;
pub mod seed;

pub use error::{Error, Result};
