//! Subspace angles, recovery errors, stable rank and the exact-recovery
//! sufficient-condition check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::densela::{norm2, qr_thin, svd_dense, svd_small, LinearOperator, Matrix};
use crate::error::{invalid, Result, RmcError};
use crate::solver::FactorTriple;
use crate::synth::GroundTruth;

/// Orthonormality tolerance for inputs to [`sin_theta`].
pub const ORTHONORMAL_TOL: f64 = 1e-8;
/// Largest square matrix handled by the dense spectral-norm path.
pub const DENSE_NORM_CAP: usize = 256;
/// Largest `min(m, n)` accepted by [`theorem1_check`].
pub const THEOREM1_DIM_CAP: usize = 512;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 1000;
const POWER_SEED: u64 = 0x5eed;

/// Canonical angles between two `k`-dimensional subspaces.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleReport {
    /// Largest canonical angle, in `[0, π/2]`.
    pub theta_max: f64,
    /// All `sin θ_j`, nonincreasing.
    pub sines: Vec<f64>,
}

impl AngleReport {
    /// Spectral norm of `sin Θ`.
    pub fn spectral(&self) -> f64 {
        self.sines.first().copied().unwrap_or(0.0)
    }

    /// Frobenius norm of `sin Θ`.
    pub fn frobenius(&self) -> f64 {
        norm2(&self.sines)
    }
}

/// Canonical angles between `span(u)` and `span(v)`.
///
/// The sines are the singular values of `v - u(uᵀv)`, which keeps small angles
/// accurate; the largest angle pairs the largest sine with the smallest cosine.
pub fn sin_theta(u: &Matrix, v: &Matrix) -> Result<AngleReport> {
    if u.shape() != v.shape() {
        return invalid(format!(
            "subspace bases differ in shape: {:?} vs {:?}",
            u.shape(),
            v.shape()
        ));
    }
    if u.cols() > u.rows() {
        return invalid("subspace basis has more columns than rows");
    }
    for (name, m) in [("u", u), ("v", v)] {
        let defect = m.orthonormality_defect();
        if defect > ORTHONORMAL_TOL {
            return invalid(format!("{name} is not orthonormal (defect {defect:.3e})"));
        }
    }
    let cross = u.t_matmul(v)?;
    let cosines = svd_small(&cross)?.sigma;
    let complement = v.sub(&u.matmul(&cross)?)?;
    let core = qr_thin(&complement)?.r;
    let sines: Vec<f64> = svd_small(&core)?
        .sigma
        .into_iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    let omega_min = cosines.last().copied().unwrap_or(1.0).clamp(0.0, 1.0);
    let theta_max = sines[0].atan2(omega_min);
    Ok(AngleReport { theta_max, sines })
}

/// Spectral norm by power iteration on `AᵀA` from a seeded start.
pub fn spectral_norm_power<A: LinearOperator + ?Sized>(op: &A, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..op.ncols()).map(|_| rng.sample(StandardNormal)).collect();
    let mut ax = vec![0.0; op.nrows()];
    let mut estimate = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let nx = norm2(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        op.apply(&x, &mut ax);
        let next = norm2(&ax);
        op.apply_transpose(&ax, &mut x);
        let converged = (next - estimate).abs() <= POWER_TOL * next;
        estimate = next;
        if converged {
            break;
        }
    }
    estimate
}

/// Spectral norm of a dense matrix: exact for small shapes, power iteration otherwise.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    if a.rows().min(a.cols()) <= DENSE_NORM_CAP {
        Ok(svd_dense(a)?.sigma[0])
    } else {
        Ok(spectral_norm_power(a, POWER_SEED))
    }
}

/// `‖A‖_F² / ‖A‖₂²`.
pub fn stable_rank(a: &Matrix) -> Result<f64> {
    let fro = a.frobenius_norm();
    if fro == 0.0 {
        return invalid("stable rank of a zero matrix is undefined");
    }
    let spec = spectral_norm(a)?;
    Ok((fro / spec).powi(2))
}

/// Stable rank of an operator given its Frobenius norm (power iteration only).
pub fn stable_rank_operator<A: LinearOperator + ?Sized>(op: &A, frobenius: f64) -> Result<f64> {
    if frobenius == 0.0 {
        return invalid("stable rank of a zero matrix is undefined");
    }
    let spec = spectral_norm_power(op, POWER_SEED);
    Ok((frobenius / spec).powi(2))
}

/// Both conditions of the deterministic exact-recovery theorem for `M = L* + S*`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub cond_a_lhs: f64,
    pub cond_a_rhs: f64,
    pub cond_b_lhs: f64,
    pub cond_b_rhs: f64,
    /// `f64::INFINITY` when the gap condition fails.
    pub eta: f64,
    pub holds: bool,
    /// Largest canonical angle between the top-`r` singular subspaces of `M` and `U*`.
    pub theta_u: f64,
    pub theta_v: f64,
    /// `‖M_r − L*‖_F` for the best rank-`r` approximation `M_r` of `M`.
    pub best_rank_r_error: f64,
}

pub fn theorem1_check(gt: &GroundTruth) -> Result<Theorem1Report> {
    let (m, n) = (gt.u_star.rows(), gt.v_star.rows());
    let l_star = match &gt.l_star {
        Some(l) if m.min(n) <= THEOREM1_DIM_CAP => l,
        _ => {
            return Err(RmcError::UnsupportedAtScale(format!(
                "sufficient-condition check needs a dense {m}x{n} matrix with min dimension <= {THEOREM1_DIM_CAP}"
            )))
        }
    };
    if !gt.s_star_complete {
        return Err(RmcError::UnsupportedAtScale(
            "corruption is only stored on observed entries".into(),
        ));
    }
    let r = gt.rank();
    let mut s = Matrix::zeros(m, n);
    for e in &gt.s_star.entries {
        s.set(e.row, e.col, e.value);
    }
    let (u, v) = (&gt.u_star, &gt.v_star);

    // (I - UUᵀ) S (I - VVᵀ)
    let left = s.sub(&u.matmul(&u.t_matmul(&s)?)?)?;
    let both = left.sub(&left.matmul(v)?.matmul_t(v)?)?;
    let cond_a_lhs = spectral_norm(&both)?;
    let cond_a_rhs = gt.sigma_star[r - 1];

    let cond_b_lhs = spectral_norm(&s.matmul(v)?)?.max(spectral_norm(&s.t_matmul(u)?)?);
    let mat = l_star.add(&s)?;
    let svd = svd_dense(&mat)?;
    let sigma_next = svd.sigma.get(r).copied().unwrap_or(0.0);
    let cond_b_rhs = svd.sigma[r - 1] - sigma_next;
    let eta = if cond_b_rhs > cond_b_lhs {
        cond_b_lhs / (cond_b_rhs - cond_b_lhs)
    } else {
        f64::INFINITY
    };
    let holds = cond_a_lhs < cond_a_rhs && cond_b_lhs < cond_b_rhs;

    let u_r = svd.u.leading_columns(r);
    let v_r = svd.v.leading_columns(r);
    let theta_u = sin_theta(&u_r, u)?.theta_max;
    let theta_v = sin_theta(&v_r, v)?.theta_max;
    let best = u_r
        .scale_columns(&svd.sigma[..r])
        .matmul_t(&v_r)?
        .sub(l_star)?
        .frobenius_norm();
    Ok(Theorem1Report {
        cond_a_lhs,
        cond_a_rhs,
        cond_b_lhs,
        cond_b_rhs,
        eta,
        holds,
        theta_u,
        theta_v,
        best_rank_r_error: best,
    })
}

/// Distance between a recovered model and the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryReport {
    /// `‖XΣYᵀ − L*‖_F / ‖L*‖_F`.
    pub rel_frobenius: f64,
    /// Largest entrywise error over all `m x n` positions.
    pub max_norm: f64,
    pub angle_x: AngleReport,
    pub angle_y: AngleReport,
    /// Set when the recovered rank differs from the true rank; angles then compare
    /// the leading `min(r1, r2)` columns.
    pub rank_mismatch: bool,
}

/// `‖X Σ Yᵀ − U Σ* Vᵀ‖_F` in factor form: with `[Y, V] = Q R`, the difference
/// equals `[XΣ, −UΣ*] Rᵀ Qᵀ`, whose norm is that of the `m x k` product.
fn factor_difference_norm(f: &FactorTriple, gt: &GroundTruth) -> Result<f64> {
    let n = f.y.rows();
    let (r1, r2) = (f.rank(), gt.rank());
    let k = r1 + r2;
    let left = Matrix::from_columns(
        &(0..r1)
            .map(|c| f.x.col(c).iter().map(|v| v * f.sigma[c]).collect::<Vec<_>>())
            .chain((0..r2).map(|c| {
                gt.u_star
                    .col(c)
                    .iter()
                    .map(|v| -v * gt.sigma_star[c])
                    .collect::<Vec<_>>()
            }))
            .collect::<Vec<_>>(),
    )?;
    let right_cols: Vec<Vec<f64>> = (0..r1)
        .map(|c| f.y.col(c))
        .chain((0..r2).map(|c| gt.v_star.col(c)))
        .collect();
    let right = Matrix::from_columns(&right_cols)?;
    if n >= k {
        let r = qr_thin(&right)?.r;
        Ok(left.matmul_t(&r)?.frobenius_norm())
    } else {
        Ok(left.matmul_t(&right)?.frobenius_norm())
    }
}

pub fn recovery_error(f: &FactorTriple, gt: &GroundTruth) -> Result<RecoveryReport> {
    let (m, n) = (gt.u_star.rows(), gt.v_star.rows());
    if f.x.rows() != m || f.y.rows() != n {
        return invalid(format!(
            "factors are {}x{} but the ground truth is {m}x{n}",
            f.x.rows(),
            f.y.rows()
        ));
    }
    if f.rank() == 0 {
        return invalid("recovered model has rank 0");
    }
    let l_norm = norm2(&gt.sigma_star);
    let rel_frobenius = factor_difference_norm(f, gt)? / l_norm;

    let xs = f.x.scale_columns(&f.sigma);
    let us = gt.u_star.scale_columns(&gt.sigma_star);
    let mut max_norm = 0.0f64;
    for i in 0..m {
        let (a, b) = (xs.row(i), us.row(i));
        for j in 0..n {
            let est = crate::densela::dot(a, f.y.row(j));
            let truth = crate::densela::dot(b, gt.v_star.row(j));
            max_norm = max_norm.max((est - truth).abs());
        }
    }

    let k = f.rank().min(gt.rank());
    let angle_x = sin_theta(&f.x.leading_columns(k), &gt.u_star.leading_columns(k))?;
    let angle_y = sin_theta(&f.y.leading_columns(k), &gt.v_star.leading_columns(k))?;
    Ok(RecoveryReport {
        rel_frobenius,
        max_norm,
        angle_x,
        angle_y,
        rank_mismatch: f.rank() != gt.rank(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obsmat::Entry;
    use crate::oracles::{
        complement_basis, dense_product, gaussian_matrix, oracle_singular_values,
        random_orthogonal, random_orthonormal, sin_theta_via_complement,
    };
    use std::f64::consts::FRAC_PI_2;

    fn example_one(n: usize, rho: f64) -> GroundTruth {
        let w = 1.0 / (n as f64).sqrt();
        let ones = Matrix::from_vec(n, 1, vec![w; n]).unwrap();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let c = if i == j {
                    2.0
                } else if (i + 1) % n == j || (j + 1) % n == i {
                    -1.0
                } else {
                    continue;
                };
                entries.push(Entry::new(i, j, rho / 4.0 * c));
            }
        }
        GroundTruth::from_parts(ones.clone(), vec![1.0], ones, entries, 1.0, rho).unwrap()
    }

    #[test]
    fn identical_and_orthogonal_lines() {
        let u = random_orthonormal(6, 2, 3);
        let rep = sin_theta(&u, &u).unwrap();
        assert!(rep.theta_max <= 1e-12);
        assert!(rep.sines.iter().all(|s| *s <= 1e-12));

        let e1 = Matrix::from_vec(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let e2 = Matrix::from_vec(3, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let rep = sin_theta(&e1, &e2).unwrap();
        assert!((rep.theta_max - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(rep.sines, vec![1.0]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let u = random_orthonormal(6, 2, 3);
        let v = random_orthonormal(6, 3, 4);
        assert!(sin_theta(&u, &v).is_err());
        let w = u.scaled(2.0);
        assert!(sin_theta(&u, &w).is_err());
    }

    #[test]
    fn complement_identity() {
        for seed in 0..10 {
            let u = random_orthonormal(8, 2, seed);
            let v = random_orthonormal(8, 2, seed + 100);
            let rep = sin_theta(&u, &v).unwrap();
            let oracle = sin_theta_via_complement(&u, &v);
            assert!((rep.spectral() - oracle).abs() <= 1e-10);
            let uc = complement_basis(&u);
            let norm = uc.t_matmul(&v).unwrap().frobenius_norm();
            assert!((rep.frobenius() - norm).abs() <= 1e-10);
        }
    }

    #[test]
    fn projector_frobenius_identity() {
        for seed in 0..10 {
            let u = random_orthonormal(9, 3, seed);
            let v = random_orthonormal(9, 3, seed + 50);
            let pu = u.matmul_t(&u).unwrap();
            let pv = v.matmul_t(&v).unwrap();
            let rhs = pu.sub(&pv).unwrap().frobenius_norm() / 2f64.sqrt();
            let lhs = sin_theta(&u, &v).unwrap().frobenius();
            assert!((lhs - rhs).abs() <= 1e-10);
        }
    }

    #[test]
    fn symmetric_and_basis_invariant() {
        let u = random_orthonormal(10, 3, 1);
        let v = random_orthonormal(10, 3, 2);
        let a = sin_theta(&u, &v).unwrap();
        let b = sin_theta(&v, &u).unwrap();
        let q = random_orthogonal(3, 3);
        let c = sin_theta(&u.matmul(&q).unwrap(), &v).unwrap();
        for ((x, y), z) in a.sines.iter().zip(&b.sines).zip(&c.sines) {
            assert!((x - y).abs() <= 1e-12);
            assert!((x - z).abs() <= 1e-12);
        }
        assert!((a.theta_max - b.theta_max).abs() <= 1e-12);
    }

    #[test]
    fn small_angle_is_accurate() {
        let eps = 1e-9f64;
        let u = Matrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap();
        let v = Matrix::from_vec(2, 1, vec![eps.cos(), eps.sin()]).unwrap();
        let rep = sin_theta(&u, &v).unwrap();
        assert!((rep.sines[0] - eps.sin()).abs() <= 1e-20);
        assert!((rep.theta_max - eps).abs() <= 1e-20);
    }

    #[test]
    fn stable_rank_cases() {
        assert!((stable_rank(&Matrix::identity(5)).unwrap() - 5.0).abs() < 1e-12);
        let u = random_orthonormal(6, 1, 1);
        let v = random_orthonormal(4, 1, 2);
        let a = dense_product(&u, &[3.0], &v);
        assert!((stable_rank(&a).unwrap() - 1.0).abs() <= 1e-8);
        let g = gaussian_matrix(20, 20, 9);
        let sv = oracle_singular_values(&g);
        let oracle = (g.frobenius_norm() / sv[0]).powi(2);
        assert!((stable_rank(&g).unwrap() - oracle).abs() <= 1e-8);
        assert!(stable_rank(&Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn power_iteration_agrees_with_dense() {
        let g = gaussian_matrix(30, 12, 4);
        let dense = svd_dense(&g).unwrap().sigma[0];
        assert!((spectral_norm_power(&g, 1) - dense).abs() <= 1e-8 * dense);
        let sr = stable_rank_operator(&g, g.frobenius_norm()).unwrap();
        assert!((sr - stable_rank(&g).unwrap()).abs() <= 1e-7);
    }

    #[test]
    fn example_one_family() {
        for n in [4, 8, 16] {
            for rho in [0.25, 0.5, 0.9] {
                let gt = example_one(n, rho);
                let rep = theorem1_check(&gt).unwrap();
                assert_eq!(rep.eta, 0.0, "n={n} rho={rho}");
                assert!(rep.holds);
                assert!(rep.best_rank_r_error <= 1e-10);
            }
        }
    }

    #[test]
    fn no_corruption_gives_zero_eta() {
        let u = random_orthonormal(12, 2, 1);
        let v = random_orthonormal(10, 2, 2);
        let l = dense_product(&u, &[2.0, 1.0], &v);
        let gt = GroundTruth::from_dense(l, 2, Vec::new(), 1.0, 0.0).unwrap();
        let rep = theorem1_check(&gt).unwrap();
        assert_eq!(rep.eta, 0.0);
        assert!(rep.holds);
    }

    #[test]
    fn aligned_corruption_violates_gap() {
        // A spike on u1 v1ᵀ larger than the spectrum closes the gap.
        let u = random_orthonormal(10, 2, 5);
        let v = random_orthonormal(10, 2, 6);
        let l = dense_product(&u, &[1.0, 0.9], &v);
        let spike = dense_product(&u.leading_columns(1), &[5.0], &v.leading_columns(1));
        let mut entries = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                entries.push(Entry::new(i, j, spike.get(i, j)));
            }
        }
        let gt = GroundTruth::from_dense(l, 2, entries, 1.0, 1.0).unwrap();
        let rep = theorem1_check(&gt).unwrap();
        assert!(!rep.holds);
        assert!(rep.cond_b_lhs >= rep.cond_b_rhs);
    }

    fn truth_factors(gt: &GroundTruth) -> FactorTriple {
        FactorTriple {
            x: gt.u_star.clone(),
            sigma: gt.sigma_star.clone(),
            y: gt.v_star.clone(),
        }
    }

    #[test]
    fn exact_factors_have_zero_error() {
        let u = random_orthonormal(15, 3, 1);
        let v = random_orthonormal(11, 3, 2);
        let gt = GroundTruth::from_dense(dense_product(&u, &[3.0, 2.0, 1.0], &v), 3, Vec::new(), 1.0, 0.0)
            .unwrap();
        let rep = recovery_error(&truth_factors(&gt), &gt).unwrap();
        assert!(rep.rel_frobenius <= 1e-12);
        assert!(rep.max_norm <= 1e-12);
        assert!(rep.angle_x.theta_max <= 1e-7 && rep.angle_y.theta_max <= 1e-7);
        assert!(!rep.rank_mismatch);

        let mut rotated = truth_factors(&gt);
        rotated.y = rotated.y.matmul(&random_orthogonal(3, 9)).unwrap();
        let rep = recovery_error(&rotated, &gt).unwrap();
        assert!(rep.angle_y.spectral() <= 1e-12);
    }

    #[test]
    fn perturbed_factors_match_dense_oracle() {
        let u = random_orthonormal(14, 2, 3);
        let v = random_orthonormal(9, 2, 4);
        let gt = GroundTruth::from_dense(dense_product(&u, &[2.0, 0.5], &v), 2, Vec::new(), 1.0, 0.0)
            .unwrap();
        let f = FactorTriple {
            x: random_orthonormal(14, 3, 7),
            sigma: vec![1.5, 1.0, 0.2],
            y: random_orthonormal(9, 3, 8),
        };
        let rep = recovery_error(&f, &gt).unwrap();
        let est = dense_product(&f.x, &f.sigma, &f.y);
        let l = gt.l_star.as_ref().unwrap();
        let diff = est.sub(l).unwrap();
        let oracle = diff.frobenius_norm() / l.frobenius_norm();
        assert!((rep.rel_frobenius - oracle).abs() <= 1e-10);
        assert!((rep.max_norm - diff.max_abs()).abs() <= 1e-12);
        assert!(rep.rank_mismatch);
    }
}
