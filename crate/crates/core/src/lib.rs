//! Spatial econometrics toolkit.
//!
//! The crate follows one pipeline: point data → pairwise distances →
//! spatial weights → autocorrelation statistics and spatial regression
//! models, with a simulation harness for verifying the estimators and a
//! small I/O layer for datasets and weights files.
//!
//! * [`geometry`] — observation locations and distance matrices (Euclidean
//!   and Manhattan metrics).
//! * [`weights`] — distance-to-weight transformations and row
//!   standardization.
//! * [`autocorr`] — global Moran's I and the Local Moran index, analytic
//!   moments, z-tests, and permutation tests.
//! * [`models`] — SLX, SAR, SEM, and SDM estimation with marginal effects,
//!   residual diagnostics, and likelihood-ratio/Wald tests.
//! * [`simulate`] — synthetic data-generating processes and parameter
//!   recovery experiments.
//! * [`io`] — dataset (CSV) and weights-file serialization.
//! * [`linalg`] — the dense LU/QR kernels backing the estimators.
//!
//! All randomness is explicit: operations that draw random numbers take a
//! seed and use the ChaCha20 generator, so results reproduce bit-for-bit
//! across platforms.

pub mod autocorr;
pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod models;
pub mod simulate;
pub mod weights;

pub use error::{ErrorCategory, Result, SpatialError};
