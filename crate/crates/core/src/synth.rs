//! Seeded synthetic instances `M = L* + S*` observed on a Bernoulli mask.
//!
//! Three independent ChaCha sub-streams drive the factors, the corruption and
//! the mask, so changing `rho` leaves the observation pattern untouched.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::densela::{dot, qr_thin, svd_small, Matrix};
use crate::error::{invalid, Result, RmcError};
use crate::obsmat::{read_triplets, write_matrix_market, write_triplets, Entry, ObservedMatrix};
use crate::outlier::{OutlierStrategy, SparseCorrection};
use crate::textio::{fmt_f64, read_dense, read_vector, write_dense, write_vector, KeyValues};

/// Dense `L*` is kept only when `m * n` is at most this many entries.
pub const DEFAULT_DENSE_CAP: usize = 10_000_000;

const STREAM_FACTORS: u64 = 1;
const STREAM_CORRUPTION: u64 = 2;
const STREAM_MASK: u64 = 3;

pub const OBSERVED_FILE: &str = "observed.mtx";
pub const S_STAR_FILE: &str = "s_star.mtx";
pub const U_STAR_FILE: &str = "u_star.txt";
pub const SIGMA_STAR_FILE: &str = "sigma_star.txt";
pub const V_STAR_FILE: &str = "v_star.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub d_rows: usize,
    pub d_cols: usize,
    pub r: usize,
    /// Observation probability in `(0, 1]`.
    pub p: f64,
    /// Corruption probability in `[0, 1)`.
    pub rho: f64,
    pub seed: u64,
    /// Corrupt exactly `floor(rho * d_cols)` entries per row instead of i.i.d. draws.
    pub strict_a2: bool,
    pub dense_cap: usize,
}

impl InstanceSpec {
    pub fn new(d_rows: usize, d_cols: usize, r: usize, p: f64, rho: f64, seed: u64) -> Self {
        InstanceSpec {
            d_rows,
            d_cols,
            r,
            p,
            rho,
            seed,
            strict_a2: false,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    pub fn square(d: usize, r: usize, p: f64, rho: f64, seed: u64) -> Self {
        Self::new(d, d, r, p, rho, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_rows == 0 || self.d_cols == 0 {
            return invalid("instance dimensions must be positive");
        }
        if self.r == 0 || self.r > self.d_rows.min(self.d_cols) {
            return invalid(format!(
                "rank {} outside 1..={}",
                self.r,
                self.d_rows.min(self.d_cols)
            ));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return invalid(format!("observation rate {} outside (0, 1]", self.p));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return invalid(format!("corruption rate {} outside [0, 1)", self.rho));
        }
        Ok(())
    }

    pub fn max_dim(&self) -> usize {
        self.d_rows.max(self.d_cols)
    }

    pub fn to_manifest(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("d_rows", self.d_rows);
        kv.push("d_cols", self.d_cols);
        kv.push("r", self.r);
        kv.push("p", fmt_f64(self.p));
        kv.push("rho", fmt_f64(self.rho));
        kv.push("seed", self.seed);
        kv.push("strict_a2", self.strict_a2);
        kv
    }

    pub fn from_manifest(kv: &KeyValues) -> Result<Self> {
        let mut spec = InstanceSpec::new(
            kv.parse_value("d_rows")?,
            kv.parse_value("d_cols")?,
            kv.parse_value("r")?,
            kv.parse_value("p")?,
            kv.parse_value("rho")?,
            kv.parse_value("seed")?,
        );
        if kv.get("strict_a2").is_some() {
            spec.strict_a2 = kv.parse_value("strict_a2")?;
        }
        Ok(spec)
    }
}

/// Ground truth for an instance: the economy SVD of `L*`, the corruption and the mask.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub u_star: Matrix,
    pub sigma_star: Vec<f64>,
    pub v_star: Matrix,
    /// Dense `L*`, present when the instance is small enough.
    pub l_star: Option<Matrix>,
    pub s_star: SparseCorrection,
    /// False when `s_star` only lists corrupted entries that were also observed.
    pub s_star_complete: bool,
    pub omega: Vec<(usize, usize)>,
    pub p: f64,
    pub rho: f64,
}

impl GroundTruth {
    pub fn rank(&self) -> usize {
        self.sigma_star.len()
    }

    pub fn nrows(&self) -> usize {
        self.u_star.rows()
    }

    pub fn ncols(&self) -> usize {
        self.v_star.rows()
    }

    /// Ground truth from explicit SVD factors, assuming full observation.
    pub fn from_parts(
        u_star: Matrix,
        sigma_star: Vec<f64>,
        v_star: Matrix,
        s_entries: Vec<Entry>,
        p: f64,
        rho: f64,
    ) -> Result<Self> {
        let (m, n) = (u_star.rows(), v_star.rows());
        if u_star.cols() != sigma_star.len() || v_star.cols() != sigma_star.len() {
            return invalid("factor widths disagree with the number of singular values");
        }
        let l_star = (m * n <= DEFAULT_DENSE_CAP)
            .then(|| u_star.scale_columns(&sigma_star).matmul_t(&v_star))
            .transpose()?;
        let s_star = sorted_correction(m, n, s_entries)?;
        Ok(GroundTruth {
            u_star,
            sigma_star,
            v_star,
            l_star,
            s_star,
            s_star_complete: true,
            omega: (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect(),
            p,
            rho,
        })
    }

    /// Ground truth from a dense `L*` of rank `r`, assuming full observation.
    pub fn from_dense(l: Matrix, r: usize, s_entries: Vec<Entry>, p: f64, rho: f64) -> Result<Self> {
        if r == 0 || r > l.rows().min(l.cols()) {
            return invalid(format!("rank {r} does not fit a {:?} matrix", l.shape()));
        }
        let svd = crate::densela::svd_dense(&l)?;
        let mut gt = Self::from_parts(
            svd.u.leading_columns(r),
            svd.sigma[..r].to_vec(),
            svd.v.leading_columns(r),
            s_entries,
            p,
            rho,
        )?;
        gt.l_star = Some(l);
        Ok(gt)
    }
}

fn sorted_correction(m: usize, n: usize, mut entries: Vec<Entry>) -> Result<SparseCorrection> {
    if let Some(e) = entries.iter().find(|e| e.row >= m || e.col >= n) {
        return invalid(format!("corruption entry ({}, {}) out of range", e.row, e.col));
    }
    entries.sort_by_key(|e| (e.row, e.col));
    Ok(SparseCorrection {
        entries,
        strategy_used: OutlierStrategy::GlobalTopS,
    })
}

fn stream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

fn gaussian_factor(rng: &mut ChaCha8Rng, rows: usize, r: usize, scale: f64) -> Matrix {
    let data = (0..rows * r)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_vec(rows, r, data).expect("finite gaussian draws")
}

/// Economy SVD of `A Bᵀ` through QR of both factors.
fn product_svd(a: &Matrix, b: &Matrix) -> Result<(Matrix, Vec<f64>, Matrix)> {
    let qa = qr_thin(a)?;
    let qb = qr_thin(b)?;
    let core = svd_small(&qa.r.matmul_t(&qb.r)?)?;
    Ok((qa.q.matmul(&core.u)?, core.sigma, qb.q.matmul(&core.v)?))
}

/// Draws an instance. Returns the observed matrix and its ground truth.
pub fn generate(spec: &InstanceSpec) -> Result<(ObservedMatrix, GroundTruth)> {
    spec.validate()?;
    let (m, n, r) = (spec.d_rows, spec.d_cols, spec.r);
    if spec.p * (n as f64) <= 2.0 * r as f64 {
        log::warn!(
            "expected {:.1} observations per row is not above 2r = {}",
            spec.p * n as f64,
            2 * r
        );
    }
    let d = spec.max_dim() as f64;
    let scale = 1.0 / d.sqrt();
    let half_width = r as f64 / (2.0 * d);

    let mut frng = stream(spec.seed, STREAM_FACTORS);
    let a = gaussian_factor(&mut frng, m, r, scale);
    let b = gaussian_factor(&mut frng, n, r, scale);

    let mut crng = stream(spec.seed, STREAM_CORRUPTION);
    let mut mrng = stream(spec.seed, STREAM_MASK);
    let keep_all_corruption = m * n <= spec.dense_cap;
    let per_row = (spec.rho * n as f64).floor() as usize;

    let mut observed = Vec::new();
    let mut s_entries = Vec::new();
    let mut omega = Vec::new();
    let mut row_corruption: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        row_corruption.clear();
        if spec.strict_a2 {
            let mut cols = sample(&mut crng, n, per_row).into_vec();
            cols.sort_unstable();
            for j in cols {
                row_corruption.push((j, crng.random_range(-half_width..half_width)));
            }
        } else if spec.rho > 0.0 {
            for j in 0..n {
                if crng.random::<f64>() < spec.rho {
                    row_corruption.push((j, crng.random_range(-half_width..half_width)));
                }
            }
        }
        let mut next = 0;
        for j in 0..n {
            let seen = mrng.random::<f64>() < spec.p;
            let mut s_ij = 0.0;
            if next < row_corruption.len() && row_corruption[next].0 == j {
                s_ij = row_corruption[next].1;
                next += 1;
                if keep_all_corruption || seen {
                    s_entries.push(Entry::new(i, j, s_ij));
                }
            }
            if seen {
                omega.push((i, j));
                observed.push(Entry::new(i, j, dot(a.row(i), b.row(j)) + s_ij));
            }
        }
    }
    let obs = ObservedMatrix::from_entries(m, n, observed)?;

    let (u_star, sigma_star, v_star) = product_svd(&a, &b)?;
    if sigma_star[r - 1] <= 0.0 {
        return Err(RmcError::ModelCollapsed(
            "generated low-rank part is rank deficient".into(),
        ));
    }
    let l_star = (m * n <= spec.dense_cap).then(|| a.matmul_t(&b)).transpose()?;
    let gt = GroundTruth {
        u_star,
        sigma_star,
        v_star,
        l_star,
        s_star: SparseCorrection {
            entries: s_entries,
            strategy_used: OutlierStrategy::GlobalTopS,
        },
        s_star_complete: keep_all_corruption,
        omega,
        p: spec.p,
        rho: spec.rho,
    };
    Ok((obs, gt))
}

/// `(m / r) · max_i ‖uᵀ e_i‖²` for an orthonormal `m x r` basis.
pub fn incoherence(u: &Matrix) -> Result<f64> {
    let defect = u.orthonormality_defect();
    if defect > 1e-8 {
        return invalid(format!("basis is not orthonormal (defect {defect:.3e})"));
    }
    let max_sq = (0..u.rows())
        .map(|i| dot(u.row(i), u.row(i)))
        .fold(0.0, f64::max);
    Ok(u.rows() as f64 / u.cols() as f64 * max_sq)
}

/// An instance read back from disk. `truth` is `None` when the factor files are absent.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: InstanceSpec,
    pub observed: ObservedMatrix,
    pub truth: Option<GroundTruth>,
}

pub fn write_instance(
    dir: impl AsRef<Path>,
    spec: &InstanceSpec,
    obs: &ObservedMatrix,
    gt: &GroundTruth,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| RmcError::io(dir, e))?;
    write_matrix_market(obs, dir.join(OBSERVED_FILE))?;
    write_triplets(dir.join(S_STAR_FILE), obs.nrows(), obs.ncols(), &gt.s_star.entries)?;
    write_dense(dir.join(U_STAR_FILE), &gt.u_star)?;
    write_vector(dir.join(SIGMA_STAR_FILE), &gt.sigma_star)?;
    write_dense(dir.join(V_STAR_FILE), &gt.v_star)?;
    let mut kv = spec.to_manifest();
    kv.push("s_star_complete", gt.s_star_complete);
    kv.write(dir.join(MANIFEST_FILE))
}

pub fn read_instance(dir: impl AsRef<Path>) -> Result<Instance> {
    let dir = dir.as_ref();
    let kv = KeyValues::read(dir.join(MANIFEST_FILE))?;
    let spec = InstanceSpec::from_manifest(&kv)?;
    let observed = crate::obsmat::read_matrix_market(dir.join(OBSERVED_FILE))?;
    if (observed.nrows(), observed.ncols()) != (spec.d_rows, spec.d_cols) {
        return invalid(format!(
            "observed matrix is {}x{} but the manifest says {}x{}",
            observed.nrows(),
            observed.ncols(),
            spec.d_rows,
            spec.d_cols
        ));
    }
    let truth_files = [U_STAR_FILE, SIGMA_STAR_FILE, V_STAR_FILE, S_STAR_FILE];
    let truth = if truth_files.iter().all(|f| dir.join(f).exists()) {
        Some(read_truth(dir, &spec, &kv, &observed)?)
    } else {
        None
    };
    Ok(Instance {
        spec,
        observed,
        truth,
    })
}

fn read_truth(
    dir: &Path,
    spec: &InstanceSpec,
    kv: &KeyValues,
    observed: &ObservedMatrix,
) -> Result<GroundTruth> {
    let u_star = read_dense(dir.join(U_STAR_FILE))?;
    let sigma_star = read_vector(dir.join(SIGMA_STAR_FILE))?;
    let v_star = read_dense(dir.join(V_STAR_FILE))?;
    let (sm, sn, s_entries) = read_triplets(dir.join(S_STAR_FILE))?;
    let (m, n) = (spec.d_rows, spec.d_cols);
    if u_star.rows() != m || v_star.rows() != n || (sm, sn) != (m, n) {
        return invalid("ground-truth files disagree with the manifest shape");
    }
    if u_star.cols() != sigma_star.len() || v_star.cols() != sigma_star.len() {
        return invalid("ground-truth factor widths disagree");
    }
    let l_star = (m * n <= spec.dense_cap)
        .then(|| u_star.scale_columns(&sigma_star).matmul_t(&v_star))
        .transpose()?;
    let s_star_complete = match kv.get("s_star_complete") {
        Some(_) => kv.parse_value("s_star_complete")?,
        None => true,
    };
    Ok(GroundTruth {
        u_star,
        sigma_star,
        v_star,
        l_star,
        s_star: sorted_correction(m, n, s_entries)?,
        s_star_complete,
        omega: observed.entries().iter().map(|e| (e.row, e.col)).collect(),
        p: spec.p,
        rho: spec.rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::random_orthonormal;

    #[test]
    fn tiny_full_observation() {
        let (obs, gt) = generate(&InstanceSpec::square(4, 1, 1.0, 0.0, 7)).unwrap();
        assert_eq!(obs.nnz(), 16);
        assert!(gt.s_star.is_empty());
        assert_eq!(gt.rank(), 1);
        assert!(gt.sigma_star[0] > 0.0);
        let l = gt.l_star.as_ref().unwrap();
        let rebuilt = gt.u_star.scale_columns(&gt.sigma_star).matmul_t(&gt.v_star).unwrap();
        assert!(rebuilt.sub(l).unwrap().max_abs() <= 1e-12 * l.max_abs().max(1.0));
    }

    #[test]
    fn binomial_counts() {
        let spec = InstanceSpec::square(1000, 10, 0.1, 0.1, 1);
        let (obs, gt) = generate(&spec).unwrap();
        let total = 1e6;
        let nnz = obs.nnz() as f64;
        let sd = (total * 0.1 * 0.9f64).sqrt();
        assert!((nnz - 1e5).abs() <= 3.0 * sd, "nnz {nnz}");
        let omega: std::collections::HashSet<_> = gt.omega.iter().copied().collect();
        let hit = gt
            .s_star
            .entries
            .iter()
            .filter(|e| omega.contains(&(e.row, e.col)))
            .count() as f64;
        let sd = (nnz * 0.1 * 0.9).sqrt();
        assert!((hit - 0.1 * nnz).abs() <= 3.0 * sd, "hit {hit}");
        let half = 10.0 / 2000.0;
        assert!(gt.s_star.entries.iter().all(|e| e.value.abs() <= half));
    }

    #[test]
    fn same_seed_same_instance() {
        let spec = InstanceSpec::new(30, 20, 3, 0.5, 0.1, 11);
        let (o1, g1) = generate(&spec).unwrap();
        let (o2, g2) = generate(&spec).unwrap();
        assert_eq!(o1, o2);
        assert_eq!(g1.u_star, g2.u_star);
        assert_eq!(g1.s_star, g2.s_star);
    }

    #[test]
    fn mask_independent_of_rho() {
        let (_, a) = generate(&InstanceSpec::square(40, 2, 0.3, 0.0, 5)).unwrap();
        let (_, b) = generate(&InstanceSpec::square(40, 2, 0.3, 0.2, 5)).unwrap();
        assert_eq!(a.omega, b.omega);
        assert_eq!(a.u_star, b.u_star);
    }

    #[test]
    fn strict_rows_have_exact_counts() {
        let mut spec = InstanceSpec::square(20, 2, 1.0, 0.25, 3);
        spec.strict_a2 = true;
        let (_, gt) = generate(&spec).unwrap();
        for i in 0..20 {
            assert_eq!(gt.s_star.entries.iter().filter(|e| e.row == i).count(), 5);
        }
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(generate(&InstanceSpec::square(4, 0, 1.0, 0.0, 1)).is_err());
        assert!(generate(&InstanceSpec::square(4, 1, 0.0, 0.0, 1)).is_err());
        assert!(generate(&InstanceSpec::square(4, 5, 1.0, 0.0, 1)).is_err());
        assert!(generate(&InstanceSpec::square(4, 1, 1.0, 1.0, 1)).is_err());
    }

    #[test]
    fn frobenius_scale_matches_expectation() {
        // E‖L*‖_F² = m n r / d² = r for square instances.
        let (m, r) = (60usize, 3usize);
        let mut sum = 0.0;
        let batch = 40;
        let mut vals = Vec::new();
        for seed in 0..batch {
            let (_, gt) = generate(&InstanceSpec::square(m, r, 0.2, 0.0, seed)).unwrap();
            let f2: f64 = gt.sigma_star.iter().map(|s| s * s).sum();
            sum += f2;
            vals.push(f2);
        }
        let mean = sum / batch as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batch - 1) as f64;
        let se = (var / batch as f64).sqrt();
        assert!((mean - r as f64).abs() <= 5.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn incoherence_cases() {
        let mut spiked = Matrix::zeros(6, 2);
        spiked.set(0, 0, 1.0);
        spiked.set(1, 1, 1.0);
        assert!((incoherence(&spiked).unwrap() - 3.0).abs() < 1e-15);
        let flat = Matrix::from_vec(4, 1, vec![0.5; 4]).unwrap();
        assert!((incoherence(&flat).unwrap() - 1.0).abs() < 1e-15);
        let u = random_orthonormal(100, 5, 8);
        let oracle = (0..100)
            .map(|i| (0..5).map(|c| u.get(i, c).powi(2)).sum::<f64>())
            .fold(0.0, f64::max)
            * 20.0;
        assert_eq!(incoherence(&u).unwrap(), oracle);
        assert!(incoherence(&spiked.scaled(2.0)).is_err());
    }

    #[test]
    fn instance_round_trip() {
        let spec = InstanceSpec::new(25, 18, 2, 0.4, 0.1, 9);
        let (obs, gt) = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_instance(dir.path(), &spec, &obs, &gt).unwrap();
        let back = read_instance(dir.path()).unwrap();
        assert_eq!(back.spec, spec);
        assert_eq!(back.observed, obs);
        let t = back.truth.unwrap();
        assert_eq!(t.u_star, gt.u_star);
        assert_eq!(t.sigma_star, gt.sigma_star);
        assert_eq!(t.s_star, gt.s_star);
        assert_eq!(t.omega, gt.omega);
    }
}
