use super::matrix::{dot, Matrix};
use crate::error::{invalid, Result};

/// Thin QR factors: `q` is `m x k` with orthonormal columns, `r` is `k x k` upper triangular.
#[derive(Debug, Clone)]
pub struct QrResult {
    pub q: Matrix,
    pub r: Matrix,
}

/// Householder reflector `H = I - beta v vᵀ` with `v[0] = 1` mapping `x` onto `head * e1`.
pub(crate) struct Reflector {
    pub v: Vec<f64>,
    pub beta: f64,
    pub head: f64,
}

impl Reflector {
    pub(crate) fn new(x: &[f64]) -> Reflector {
        let alpha = x[0];
        let sigma: f64 = x[1..].iter().map(|v| v * v).sum();
        let mut v = Vec::with_capacity(x.len());
        v.push(1.0);
        if sigma == 0.0 {
            v.extend(std::iter::repeat_n(0.0, x.len() - 1));
            return Reflector {
                v,
                beta: 0.0,
                head: alpha,
            };
        }
        let norm = (alpha * alpha + sigma).sqrt();
        // Cancellation-free choice; yields a nonnegative head.
        let v0 = if alpha <= 0.0 {
            alpha - norm
        } else {
            -sigma / (alpha + norm)
        };
        let beta = 2.0 * v0 * v0 / (sigma + v0 * v0);
        v.extend(x[1..].iter().map(|t| t / v0));
        Reflector {
            v,
            beta,
            head: norm,
        }
    }

    /// Applies `H` in place to a vector aligned with the reflector's support.
    #[inline]
    pub(crate) fn apply(&self, y: &mut [f64]) {
        if self.beta == 0.0 {
            return;
        }
        let w = self.beta * dot(&self.v, y);
        for (yi, vi) in y.iter_mut().zip(&self.v) {
            *yi -= w * vi;
        }
    }
}

/// Thin Householder QR of a tall matrix (`m >= k`).
///
/// The diagonal of `r` is made nonnegative. A rank-deficient input yields
/// correspondingly small diagonal entries in `r`, never an error.
pub fn qr_thin(a: &Matrix) -> Result<QrResult> {
    let (m, k) = a.shape();
    if m < k {
        return invalid(format!("qr_thin needs rows >= cols, got {m}x{k}"));
    }
    // Column-major working copy: row c of `cols` is column c of `a`.
    let mut cols = a.transpose();
    let mut reflectors = Vec::with_capacity(k);
    for j in 0..k {
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
        reflectors.push(refl);
    }

    let mut r = Matrix::zeros(k, k);
    for c in 0..k {
        for i in 0..=c {
            r.set(i, c, cols.get(c, i));
        }
    }

    // Accumulate Q = H_0 ... H_{k-1} [I_k; 0], column by column.
    let mut q_cols = Matrix::zeros(k, m);
    for c in 0..k {
        let qc = q_cols.row_mut(c);
        qc[c] = 1.0;
        for j in (0..k).rev() {
            reflectors[j].apply(&mut qc[j..]);
        }
    }

    for j in 0..k {
        if r.get(j, j) < 0.0 {
            for c in j..k {
                r.set(j, c, -r.get(j, c));
            }
            for t in q_cols.row_mut(j) {
                *t = -*t;
            }
        }
    }

    Ok(QrResult {
        q: q_cols.transpose(),
        r,
    })
}
