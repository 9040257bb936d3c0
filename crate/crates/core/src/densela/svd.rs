use super::matrix::{dot, norm2, Matrix};
use super::qr::qr_thin;
use crate::error::{invalid, Result, RmcError};

/// Sweep cap for the one-sided Jacobi iteration.
pub const JACOBI_MAX_SWEEPS: usize = 30;
/// Columns whose norm is below this fraction of `‖A‖_F` are treated as zero.
pub const JACOBI_ZERO_TOL: f64 = 1e-14;

/// Full SVD of a square matrix: `a = u · diag(sigma) · vᵀ`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

/// Thin SVD of a rectangular matrix: `u` is `m x k`, `v` is `n x k`, `k = min(m, n)`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

/// SVD of a small square matrix by one-sided (Hestenes) Jacobi.
///
/// Singular values come back nonincreasing; the output is a deterministic
/// function of the input.
pub fn svd_small(a: &Matrix) -> Result<SvdResult> {
    let (k, kc) = a.shape();
    if k != kc {
        return invalid(format!("svd_small needs a square matrix, got {k}x{kc}"));
    }
    let fro = a.frobenius_norm();
    // Row c of `w` holds column c of the working matrix A·V; row c of `vt` holds column c of V.
    let mut w = a.transpose();
    let mut vt = Matrix::identity(k);
    let rel_tol = f64::EPSILON * (k as f64).max(4.0);
    let zero_norm = JACOBI_ZERO_TOL * fro;

    let mut converged = k == 1 || fro == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(RmcError::NumericalFailure {
                context: "one-sided Jacobi SVD",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..k - 1 {
            for q in p + 1..k {
                let alpha = dot(w.row(p), w.row(p));
                let beta = dot(w.row(q), w.row(q));
                if alpha.sqrt() <= zero_norm || beta.sqrt() <= zero_norm {
                    continue;
                }
                let gamma = dot(w.row(p), w.row(q));
                if gamma.abs() <= rel_tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut w, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        converged = !rotated;
    }

    let norms: Vec<f64> = (0..k).map(|c| norm2(w.row(c))).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));

    let sigma: Vec<f64> = order.iter().map(|&c| norms[c]).collect();
    let small = zero_norm.max(sigma[0] * f64::EPSILON * k as f64);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut missing = Vec::new();
    for (slot, &c) in order.iter().enumerate() {
        v_cols.push(vt.row(c).to_vec());
        if norms[c] > small {
            u_cols.push(w.row(c).iter().map(|x| x / norms[c]).collect());
        } else {
            u_cols.push(vec![0.0; k]);
            missing.push(slot);
        }
    }
    complete_basis(&mut u_cols, &missing);

    Ok(SvdResult {
        u: Matrix::from_columns(&u_cols)?,
        sigma,
        v: Matrix::from_columns(&v_cols)?,
    })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.cols();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * n);
    let rp = &mut head[p * n..(p + 1) * n];
    let rq = &mut tail[..n];
    for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed slots with unit vectors orthogonal to every other column,
/// drawing candidates from the standard basis in order.
fn complete_basis(cols: &mut [Vec<f64>], missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let n = cols[0].len();
    let mut candidate = 0;
    for &slot in missing {
        loop {
            assert!(candidate < n, "basis completion ran out of candidates");
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            // Two passes of Gram-Schmidt against the filled columns.
            for _ in 0..2 {
                for c in cols.iter() {
                    if c.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let proj = dot(c, &e);
                    for (ei, ci) in e.iter_mut().zip(c) {
                        *ei -= proj * ci;
                    }
                }
            }
            let nrm = norm2(&e);
            if nrm > 0.5 {
                cols[slot] = e.iter().map(|v| v / nrm).collect();
                break;
            }
        }
    }
}

/// Thin SVD of an arbitrary dense matrix via QR followed by [`svd_small`]
/// on the square triangular factor. Intended for desk-scale diagnostics.
pub fn svd_dense(a: &Matrix) -> Result<ThinSvd> {
    let (m, n) = a.shape();
    if m >= n {
        let qr = qr_thin(a)?;
        let core = svd_small(&qr.r)?;
        Ok(ThinSvd {
            u: qr.q.matmul(&core.u)?,
            sigma: core.sigma,
            v: core.v,
        })
    } else {
        let t = svd_dense(&a.transpose())?;
        Ok(ThinSvd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        })
    }
}

/// Spectral norm of a dense matrix via [`svd_dense`].
pub fn spectral_norm_dense(a: &Matrix) -> Result<f64> {
    Ok(svd_dense(a)?.sigma[0])
}
