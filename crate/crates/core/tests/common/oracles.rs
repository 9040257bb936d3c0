//! Independent reference computations used by unit, integration and acceptance tests.
//!
//! Nothing here calls into the kernels it is used to check: Gram-Schmidt instead of
//! Householder, two-sided symmetric Jacobi instead of one-sided Jacobi, normal
//! equations instead of pivoted QR, full sorts instead of partial selection.
#![allow(dead_code)]

use nleq_rmc::densela::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn random_matrix(m: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(m, n, data).unwrap()
}

pub fn gaussian_matrix(m: usize, n: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(m, n, data).unwrap()
}

/// Modified Gram-Schmidt QR (`a` must have full column rank).
pub fn mgs_qr(a: &Matrix) -> (Matrix, Matrix) {
    let (m, k) = a.shape();
    let mut q: Vec<Vec<f64>> = (0..k).map(|j| a.col(j)).collect();
    let mut r = Matrix::zeros(k, k);
    for j in 0..k {
        for i in 0..j {
            let rij: f64 = (0..m).map(|t| q[i][t] * q[j][t]).sum();
            r.set(i, j, r.get(i, j) + rij);
            for t in 0..m {
                q[j][t] -= rij * q[i][t];
            }
        }
        // Reorthogonalize once.
        for i in 0..j {
            let rij: f64 = (0..m).map(|t| q[i][t] * q[j][t]).sum();
            r.set(i, j, r.get(i, j) + rij);
            for t in 0..m {
                q[j][t] -= rij * q[i][t];
            }
        }
        let nrm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        r.set(j, j, nrm);
        for t in 0..m {
            q[j][t] /= nrm;
        }
    }
    (Matrix::from_columns(&q).unwrap(), r)
}

/// Orthonormal `n x k` basis from a Gaussian draw, via Gram-Schmidt.
pub fn random_orthonormal(n: usize, k: usize, seed: u64) -> Matrix {
    mgs_qr(&gaussian_matrix(n, k, seed)).0
}

pub fn random_orthogonal(n: usize, seed: u64) -> Matrix {
    random_orthonormal(n, n, seed)
}

/// Eigen-decomposition of a symmetric matrix by cyclic two-sided Jacobi.
/// Returns (eigenvalues, eigenvectors as columns), unsorted.
pub fn jacobi_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut s: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| s[i][j] * s[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| s[i][i] * s[i][i]).sum();
        if off <= 1e-32 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if s[p][q] == 0.0 {
                    continue;
                }
                let theta = (s[q][q] - s[p][p]) / (2.0 * s[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let skp = s[k][p];
                    let skq = s[k][q];
                    s[k][p] = c * skp - sn * skq;
                    s[k][q] = sn * skp + c * skq;
                }
                for k in 0..n {
                    let spk = s[p][k];
                    let sqk = s[q][k];
                    s[p][k] = c * spk - sn * sqk;
                    s[q][k] = sn * spk + c * sqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - sn * vq;
                    row[q] = sn * vp + c * vq;
                }
            }
        }
    }
    let evals = (0..n).map(|i| s[i][i]).collect();
    let data = v.into_iter().flatten().collect();
    (evals, Matrix::from_vec(n, n, data).unwrap())
}

pub fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    jacobi_eigen(a).0
}

/// Singular values (nonincreasing) from the eigenvalues of the smaller Gram matrix.
pub fn oracle_singular_values(a: &Matrix) -> Vec<f64> {
    let g = if a.rows() >= a.cols() {
        a.t_matmul(a).unwrap()
    } else {
        a.matmul_t(a).unwrap()
    };
    let mut ev: Vec<f64> = jacobi_eigenvalues(&g)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Gaussian elimination with partial pivoting on a square system.
pub fn gauss_solve(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = a.rows();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = a.row(i).to_vec();
            r.push(b[i]);
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
        x[i] = (m[i][n] - s) / m[i][i];
    }
    x
}

/// Least squares through the normal equations `(AᵀA) x = Aᵀb`.
pub fn normal_equations(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let ata = a.t_matmul(a).unwrap();
    let atb: Vec<f64> = (0..a.cols())
        .map(|j| (0..a.rows()).map(|i| a.get(i, j) * b[i]).sum())
        .collect();
    gauss_solve(&ata, &atb)
}

/// Orthonormal basis of the orthogonal complement of span(u), by Gram-Schmidt
/// over the standard basis.
pub fn complement_basis(u: &Matrix) -> Matrix {
    let (n, k) = u.shape();
    let mut basis: Vec<Vec<f64>> = (0..k).map(|j| u.col(j)).collect();
    let mut out = Vec::new();
    for c in 0..n {
        let mut e = vec![0.0; n];
        e[c] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = b.iter().zip(&e).map(|(x, y)| x * y).sum();
                for (ei, bi) in e.iter_mut().zip(b) {
                    *ei -= p * bi;
                }
            }
        }
        let nrm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm > 1e-6 {
            let e: Vec<f64> = e.iter().map(|v| v / nrm).collect();
            basis.push(e.clone());
            out.push(e);
        }
        if out.len() == n - k {
            break;
        }
    }
    Matrix::from_columns(&out).unwrap()
}

/// Dense `m x n` materialization of `x · diag(sigma) · yᵀ`.
pub fn dense_product(x: &Matrix, sigma: &[f64], y: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), y.rows());
    for i in 0..x.rows() {
        for j in 0..y.rows() {
            let mut acc = 0.0;
            for k in 0..sigma.len() {
                acc += x.get(i, k) * sigma[k] * y.get(j, k);
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// Reference T_s: sort every entry by (|value| desc, row, col) and keep the first `s` nonzero.
pub fn full_sort_top(entries: &[(usize, usize, f64)], s: usize) -> Vec<(usize, usize, f64)> {
    let mut all: Vec<(usize, usize, f64)> = entries.to_vec();
    all.sort_by(|a, b| {
        b.2.abs()
            .partial_cmp(&a.2.abs())
            .unwrap()
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut picked: Vec<_> = all.into_iter().filter(|e| e.2 != 0.0).take(s).collect();
    picked.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    picked
}

/// Reference row/column intersection rule: rank each entry within its row and its
/// column by brute-force counting of entries that beat it.
pub fn double_rank_select(
    entries: &[(usize, usize, f64)],
    k: usize,
    cap: usize,
) -> Vec<(usize, usize, f64)> {
    let beats = |a: &(usize, usize, f64), b: &(usize, usize, f64)| {
        a.2.abs() > b.2.abs() || (a.2.abs() == b.2.abs() && (a.0, a.1) < (b.0, b.1))
    };
    let mut chosen: Vec<(usize, usize, f64)> = entries
        .iter()
        .filter(|e| e.2 != 0.0)
        .filter(|e| {
            let row_rank = entries.iter().filter(|o| o.0 == e.0 && beats(o, e)).count();
            let col_rank = entries.iter().filter(|o| o.1 == e.1 && beats(o, e)).count();
            row_rank < k && col_rank < k
        })
        .copied()
        .collect();
    if chosen.len() > cap {
        chosen.sort_by(|a, b| if beats(a, b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
        chosen.truncate(cap);
    }
    chosen.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    chosen
}

/// Subspace distance via an explicit complement basis: `‖U_cᵀ V‖₂`.
pub fn sin_theta_via_complement(u: &Matrix, v: &Matrix) -> f64 {
    let uc = complement_basis(u);
    let prod = uc.t_matmul(v).unwrap();
    oracle_singular_values(&prod)[0]
}
