use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::Matrix;
use super::qr::qr_thin;
use super::svd::svd_small;
use crate::error::{invalid, Result};

/// Number of subspace-iteration passes used by [`truncated_svd`].
pub const DEFAULT_SUBSPACE_PASSES: usize = 2;

/// An `m x n` linear map known only through products with vectors.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `y = A x` with `x.len() == ncols`, `y.len() == nrows`.
    fn apply(&self, x: &[f64], y: &mut [f64]);
    /// `y = Aᵀ x` with `x.len() == nrows`, `y.len() == ncols`.
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]);

    /// `A · B` for a block `B` (`ncols x k`). Override when a blocked kernel is cheaper.
    fn apply_block(&self, b: &Matrix) -> Matrix {
        let k = b.cols();
        let mut out = Matrix::zeros(self.nrows(), k);
        let mut y = vec![0.0; self.nrows()];
        for c in 0..k {
            self.apply(&b.col(c), &mut y);
            for (i, v) in y.iter().enumerate() {
                out.set(i, c, *v);
            }
        }
        out
    }

    /// `Aᵀ · B` for a block `B` (`nrows x k`).
    fn apply_transpose_block(&self, b: &Matrix) -> Matrix {
        let k = b.cols();
        let mut out = Matrix::zeros(self.ncols(), k);
        let mut y = vec![0.0; self.ncols()];
        for c in 0..k {
            self.apply_transpose(&b.col(c), &mut y);
            for (i, v) in y.iter().enumerate() {
                out.set(i, c, *v);
            }
        }
        out
    }
}

impl LinearOperator for Matrix {
    fn nrows(&self) -> usize {
        self.rows()
    }

    fn ncols(&self) -> usize {
        self.cols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = super::matrix::dot(self.row(i), x);
        }
    }

    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (i, xi) in x.iter().enumerate() {
            for (yj, a) in y.iter_mut().zip(self.row(i)) {
                *yj += a * xi;
            }
        }
    }

    fn apply_block(&self, b: &Matrix) -> Matrix {
        self.matmul(b).expect("operator block shape")
    }

    fn apply_transpose_block(&self, b: &Matrix) -> Matrix {
        self.t_matmul(b).expect("operator block shape")
    }
}

/// Wraps a pair of closures `x ↦ A x` and `x ↦ Aᵀ x` as a [`LinearOperator`].
pub struct FnOperator<F, G> {
    rows: usize,
    cols: usize,
    matvec: F,
    rmatvec: G,
}

impl<F, G> FnOperator<F, G>
where
    F: Fn(&[f64], &mut [f64]),
    G: Fn(&[f64], &mut [f64]),
{
    pub fn new(rows: usize, cols: usize, matvec: F, rmatvec: G) -> Self {
        FnOperator {
            rows,
            cols,
            matvec,
            rmatvec,
        }
    }
}

impl<F, G> LinearOperator for FnOperator<F, G>
where
    F: Fn(&[f64], &mut [f64]),
    G: Fn(&[f64], &mut [f64]),
{
    fn nrows(&self) -> usize {
        self.rows
    }

    fn ncols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.matvec)(x, y)
    }

    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        (self.rmatvec)(x, y)
    }
}

/// Rank-`r0` approximate SVD: left factor (`m x r0`), singular values, right factor (`n x r0`).
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

/// Rank-`r0` SVD by block subspace iteration on `AᵀA` from a seeded Gaussian start,
/// using [`DEFAULT_SUBSPACE_PASSES`] passes and no oversampling.
pub fn truncated_svd<A: LinearOperator + ?Sized>(
    op: &A,
    r0: usize,
    seed: u64,
) -> Result<TruncatedSvd> {
    truncated_svd_with_passes(op, r0, seed, DEFAULT_SUBSPACE_PASSES)
}

/// [`truncated_svd`] with an explicit pass count (`passes >= 1`).
///
/// Each pass maps the current right basis through `AᵀA` and re-orthonormalizes;
/// a final Rayleigh-Ritz step extracts the singular triplets from `A·V`.
pub fn truncated_svd_with_passes<A: LinearOperator + ?Sized>(
    op: &A,
    r0: usize,
    seed: u64,
    passes: usize,
) -> Result<TruncatedSvd> {
    let (m, n) = (op.nrows(), op.ncols());
    if r0 == 0 || r0 > m.min(n) {
        return invalid(format!("rank {r0} outside 1..={} for a {m}x{n} operator", m.min(n)));
    }
    if passes == 0 {
        return invalid("subspace iteration needs at least one pass");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start: Vec<f64> = (0..n * r0).map(|_| rng.sample(StandardNormal)).collect();
    let mut basis = Matrix::from_vec(n, r0, start)?;
    for _ in 0..passes {
        let image = op.apply_block(&basis);
        let back = op.apply_transpose_block(&image);
        basis = qr_thin(&back)?.q;
    }
    let image = op.apply_block(&basis);
    let qr = qr_thin(&image)?;
    let core = svd_small(&qr.r)?;
    Ok(TruncatedSvd {
        u: qr.q.matmul(&core.u)?,
        sigma: core.sigma,
        v: basis.matmul(&core.v)?,
    })
}
