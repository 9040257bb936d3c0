//! Dense kernels for tall-skinny and small square matrices: Householder QR,
//! one-sided Jacobi SVD, pivoted least squares, and subspace-iteration SVD.

mod lsq;
mod matrix;
mod qr;
mod subspace;
mod svd;

pub use lsq::{lsq_solve, lsq_solve_detailed, LsqSolution, LSQ_RANK_TOL};
pub use matrix::{dot, norm2, Matrix};
pub use qr::{qr_thin, QrResult};
pub use subspace::{
    truncated_svd, truncated_svd_with_passes, FnOperator, LinearOperator, TruncatedSvd,
    DEFAULT_SUBSPACE_PASSES,
};
pub use svd::{
    spectral_norm_dense, svd_dense, svd_small, SvdResult, ThinSvd, JACOBI_MAX_SWEEPS,
    JACOBI_ZERO_TOL,
};
