//! Robust matrix completion: recover a low-rank `L*` and a sparse `S*` from a
//! partially observed `M = L* + S*` by alternating least squares over the
//! observed equations, adapting the rank and the outlier set as it goes.
//!
//! Module map:
//! - [`densela`]: QR, small SVD, least squares and truncated SVD kernels.
//! - [`obsmat`]: observed-entry storage, masked views, residuals, Matrix Market I/O.
//! - [`outlier`]: hard-threshold outlier selection.
//! - [`solver`]: the alternating solver with rank adaptation.
//! - [`synth`]: seeded synthetic instances with ground truth.
//! - [`metrics`]: subspace angles, recovery errors and diagnostics.
//! - [`cli`]: the `nleq-rmc` command-line front end.

extern crate self as nleq_rmc;

pub mod cli;
pub mod densela;
pub mod error;
pub mod metrics;
pub mod obsmat;
pub mod outlier;
pub mod solver;
pub mod synth;
pub mod textio;

pub use error::{Result, RmcError};

#[cfg(test)]
#[path = "../tests/common/oracles.rs"]
pub(crate) mod oracles;
