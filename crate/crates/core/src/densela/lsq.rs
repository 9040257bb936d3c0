use super::matrix::{dot, Matrix};
use super::qr::{qr_thin, Reflector};
use crate::error::{invalid, Result};

/// Relative pivot threshold below which columns are declared dependent.
pub const LSQ_RANK_TOL: f64 = 1e-12;

/// Outcome of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub x: Vec<f64>,
    /// Numerical rank detected by the pivoted factorization.
    pub rank: usize,
}

/// `argmin_x ‖coeff·x − rhs‖₂`; minimum-norm when `coeff` is rank-deficient.
pub fn lsq_solve(coeff: &Matrix, rhs: &[f64]) -> Result<Vec<f64>> {
    Ok(lsq_solve_detailed(coeff, rhs)?.x)
}

/// Same as [`lsq_solve`] but also reports the detected rank.
///
/// Householder QR with column pivoting; columns whose pivot falls below
/// `LSQ_RANK_TOL` times the leading pivot are treated as dependent, and the
/// dependent block is resolved by a complete orthogonal decomposition so the
/// returned solution has minimum norm.
pub fn lsq_solve_detailed(coeff: &Matrix, rhs: &[f64]) -> Result<LsqSolution> {
    let (q, k) = coeff.shape();
    if rhs.len() != q {
        return invalid(format!(
            "lsq_solve rhs length {} does not match {q} rows",
            rhs.len()
        ));
    }
    // Row c of `cols` is column c of the working matrix.
    let mut cols = coeff.transpose();
    let mut b = rhs.to_vec();
    let mut perm: Vec<usize> = (0..k).collect();
    let steps = q.min(k);
    let mut diag = Vec::with_capacity(steps);

    for j in 0..steps {
        // Pivot on the largest remaining column norm, recomputed exactly.
        let mut best = j;
        let mut best_norm = -1.0;
        for c in j..k {
            let tail = &cols.row(c)[j..];
            let nrm = dot(tail, tail);
            if nrm > best_norm {
                best_norm = nrm;
                best = c;
            }
        }
        if best != j {
            swap_rows(&mut cols, j, best);
            perm.swap(j, best);
        }
        let refl = Reflector::new(&cols.row(j)[j..]);
        {
            let cj = cols.row_mut(j);
            cj[j] = refl.head;
            for t in &mut cj[j + 1..] {
                *t = 0.0;
            }
        }
        for c in j + 1..k {
            refl.apply(&mut cols.row_mut(c)[j..]);
        }
        refl.apply(&mut b[j..]);
        diag.push(refl.head.abs());
    }

    let lead = diag.first().copied().unwrap_or(0.0);
    let rank = if lead == 0.0 {
        0
    } else {
        diag.iter()
            .take_while(|d| **d > LSQ_RANK_TOL * lead)
            .count()
    };
    let mut x = vec![0.0; k];
    if rank == 0 {
        return Ok(LsqSolution { x, rank });
    }

    // Upper trapezoid T = [R11 R12] (rank x k) in permuted coordinates.
    let r_at = |i: usize, c: usize| cols.get(c, i);
    let z = if rank == k {
        let mut z = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|c| r_at(i, c) * z[c]).sum();
            z[i] = (b[i] - s) / r_at(i, i);
        }
        z
    } else {
        // Tᵀ = W·L with W (k x rank) orthonormal and L upper triangular,
        // so T = Lᵀ·Wᵀ and the minimum-norm solution of T z = c is W·(Lᵀ)⁻¹ c.
        let mut tt = Matrix::zeros(k, rank);
        for i in 0..rank {
            for c in i..k {
                tt.set(c, i, r_at(i, c));
            }
        }
        let f = qr_thin(&tt)?;
        let mut w = vec![0.0; rank];
        for i in 0..rank {
            let s: f64 = (0..i).map(|t| f.r.get(t, i) * w[t]).sum();
            w[i] = (b[i] - s) / f.r.get(i, i);
        }
        f.q.matvec(&w)
    };
    for (slot, &orig) in perm.iter().enumerate() {
        x[orig] = z[slot];
    }
    Ok(LsqSolution { x, rank })
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    let n = m.cols();
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(hi * n);
    head[lo * n..(lo + 1) * n].swap_with_slice(&mut tail[..n]);
}
