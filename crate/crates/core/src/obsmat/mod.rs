//! Observed entries of `M`, working-set masks and residual projection.

mod mtx;

pub use mtx::{
    parse_matrix_market, read_matrix_market, read_triplets, write_matrix_market,
    write_triplets, MATRIX_MARKET_HEADER,
};

use crate::densela::{LinearOperator, Matrix};
use crate::error::{invalid, Result};
use crate::outlier::SparseCorrection;

/// One observed (or corrected) entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl Entry {
    pub fn new(row: usize, col: usize, value: f64) -> Self {
        Entry { row, col, value }
    }
}

/// Observed entries of an `m x n` matrix with row-wise and column-wise index views.
///
/// Entries are stored sorted by `(row, col)`; an entry's position in that order is its
/// entry id. Explicitly observed zeros are kept: absence means unobserved.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    m: usize,
    n: usize,
    entries: Vec<Entry>,
    row_ptr: Vec<usize>,
    col_ptr: Vec<usize>,
    /// Entry ids grouped by column, rows ascending within a column.
    col_ids: Vec<usize>,
}

impl ObservedMatrix {
    /// Builds the store from `(row, col, value)` triplets in any order.
    pub fn from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let entries: Vec<Entry> = triplets
            .iter()
            .map(|&(r, c, v)| Entry::new(r, c, v))
            .collect();
        Self::from_entries(m, n, entries)
    }

    pub fn from_entries(m: usize, n: usize, mut entries: Vec<Entry>) -> Result<Self> {
        if m == 0 || n == 0 {
            return invalid(format!("matrix shape {m}x{n} is empty"));
        }
        for e in &entries {
            if e.row >= m || e.col >= n {
                return invalid(format!(
                    "entry ({}, {}) out of range for a {m}x{n} matrix",
                    e.row, e.col
                ));
            }
            if !e.value.is_finite() {
                return invalid(format!("non-finite value at ({}, {})", e.row, e.col));
            }
        }
        entries.sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)));
        if let Some(w) = entries
            .windows(2)
            .find(|w| (w[0].row, w[0].col) == (w[1].row, w[1].col))
        {
            return invalid(format!("duplicate entry ({}, {})", w[0].row, w[0].col));
        }

        let mut row_ptr = vec![0usize; m + 1];
        let mut col_counts = vec![0usize; n + 1];
        for e in &entries {
            row_ptr[e.row + 1] += 1;
            col_counts[e.col + 1] += 1;
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        for j in 0..n {
            col_counts[j + 1] += col_counts[j];
        }
        let col_ptr = col_counts.clone();
        let mut fill = col_counts;
        let mut col_ids = vec![0usize; entries.len()];
        for (id, e) in entries.iter().enumerate() {
            col_ids[fill[e.col]] = id;
            fill[e.col] += 1;
        }
        Ok(ObservedMatrix {
            m,
            n,
            entries,
            row_ptr,
            col_ptr,
            col_ids,
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.n
    }

    /// Number of observed entries, `|Ω|`.
    #[inline]
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    #[inline]
    pub fn entry(&self, id: usize) -> &Entry {
        &self.entries[id]
    }

    /// `(col, entry id)` pairs of row `i`, columns ascending.
    pub fn row_view(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |id| (self.entries[id].col, id))
    }

    /// `(row, entry id)` pairs of column `j`, rows ascending.
    pub fn col_view(&self, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.col_ids[self.col_ptr[j]..self.col_ptr[j + 1]]
            .iter()
            .map(move |&id| (self.entries[id].row, id))
    }

    pub fn row_len(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn col_len(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    /// Entry id of `(row, col)` if it is observed.
    pub fn entry_id(&self, row: usize, col: usize) -> Option<usize> {
        if row >= self.m {
            return None;
        }
        let lo = self.row_ptr[row];
        let slice = &self.entries[lo..self.row_ptr[row + 1]];
        slice
            .binary_search_by(|e| e.col.cmp(&col))
            .ok()
            .map(|k| lo + k)
    }

    /// `‖Π_Ω(M)‖_F`, accumulated in entry-id order.
    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.value * e.value)
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut d = Matrix::zeros(self.m, self.n);
        for e in &self.entries {
            d.set(e.row, e.col, e.value);
        }
        d
    }

    /// Checks the row/column view consistency invariant.
    pub fn views_consistent(&self) -> bool {
        let rows: usize = (0..self.m).map(|i| self.row_len(i)).sum();
        let cols: usize = (0..self.n).map(|j| self.col_len(j)).sum();
        if rows != self.nnz() || cols != self.nnz() {
            return false;
        }
        let mut seen = vec![false; self.nnz()];
        for j in 0..self.n {
            for (r, id) in self.col_view(j) {
                let e = &self.entries[id];
                if e.row != r || e.col != j || seen[id] {
                    return false;
                }
                seen[id] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// The observed set with a subset of entries removed: `Ω_t = Ω \ supp(S_t)`.
#[derive(Debug, Clone)]
pub struct MaskedView<'a> {
    base: &'a ObservedMatrix,
    excluded: Vec<bool>,
    n_excluded: usize,
}

impl<'a> MaskedView<'a> {
    /// No exclusions: the view equals the base set.
    pub fn full(base: &'a ObservedMatrix) -> Self {
        MaskedView {
            base,
            excluded: vec![false; base.nnz()],
            n_excluded: 0,
        }
    }

    /// Excludes the given entry ids.
    pub fn excluding_ids<I: IntoIterator<Item = usize>>(
        base: &'a ObservedMatrix,
        ids: I,
    ) -> Result<Self> {
        let mut view = MaskedView::full(base);
        for id in ids {
            if id >= base.nnz() {
                return invalid(format!("entry id {id} out of range ({} entries)", base.nnz()));
            }
            if !view.excluded[id] {
                view.excluded[id] = true;
                view.n_excluded += 1;
            }
        }
        Ok(view)
    }

    /// Excludes the support of a sparse correction, which must lie inside `Ω`.
    pub fn excluding(base: &'a ObservedMatrix, correction: &SparseCorrection) -> Result<Self> {
        let mut ids = Vec::with_capacity(correction.entries.len());
        for e in &correction.entries {
            match base.entry_id(e.row, e.col) {
                Some(id) => ids.push(id),
                None => {
                    return invalid(format!(
                        "correction entry ({}, {}) is not observed",
                        e.row, e.col
                    ))
                }
            }
        }
        Self::excluding_ids(base, ids)
    }

    pub fn base(&self) -> &'a ObservedMatrix {
        self.base
    }

    #[inline]
    pub fn is_active(&self, id: usize) -> bool {
        !self.excluded[id]
    }

    pub fn excluded_count(&self) -> usize {
        self.n_excluded
    }

    /// `|Ω_t|`.
    pub fn effective_len(&self) -> usize {
        self.base.nnz() - self.n_excluded
    }

    /// Active `(col, value)` pairs of row `i`.
    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.base
            .row_view(i)
            .filter(move |&(_, id)| self.is_active(id))
            .map(move |(c, id)| (c, self.base.entry(id).value))
    }

    /// Active `(row, value)` pairs of column `j`.
    pub fn col_entries(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.base
            .col_view(j)
            .filter(move |&(_, id)| self.is_active(id))
            .map(move |(r, id)| (r, self.base.entry(id).value))
    }

    pub fn active_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.base.nnz()).filter(move |&id| self.is_active(id))
    }
}

/// Residual `M_ij − x_iᵀ diag(σ) y_j` at one entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualEntry {
    pub id: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Residual over a view's effective set.
#[derive(Debug, Clone)]
pub struct Residual {
    pub entries: Vec<ResidualEntry>,
    pub frobenius_norm: f64,
}

/// Residual of the model `x · diag(sigma) · yᵀ` on the view's effective entries,
/// in entry-id order, with the Frobenius norm accumulated in that same order.
pub fn project_residual(
    view: &MaskedView<'_>,
    x: &Matrix,
    sigma: &[f64],
    y: &Matrix,
) -> Result<Residual> {
    let base = view.base();
    check_factor_shapes(base, x, sigma, y)?;
    let r = sigma.len();
    let mut scaled = vec![0.0; r];
    let mut entries = Vec::with_capacity(view.effective_len());
    let mut sumsq = 0.0;
    for i in 0..base.nrows() {
        let xi = x.row(i);
        for k in 0..r {
            scaled[k] = xi[k] * sigma[k];
        }
        for (col, id) in base.row_view(i) {
            if !view.is_active(id) {
                continue;
            }
            let model: f64 = scaled.iter().zip(y.row(col)).map(|(a, b)| a * b).sum();
            let value = base.entry(id).value - model;
            sumsq += value * value;
            entries.push(ResidualEntry {
                id,
                row: i,
                col,
                value,
            });
        }
    }
    Ok(Residual {
        entries,
        frobenius_norm: sumsq.sqrt(),
    })
}

pub(crate) fn check_factor_shapes(
    base: &ObservedMatrix,
    x: &Matrix,
    sigma: &[f64],
    y: &Matrix,
) -> Result<()> {
    let r = sigma.len();
    if x.rows() != base.nrows() || y.rows() != base.ncols() || x.cols() != r || y.cols() != r {
        return invalid(format!(
            "factor shapes {}x{}, {r}, {}x{} incompatible with a {}x{} observation",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols(),
            base.nrows(),
            base.ncols()
        ));
    }
    Ok(())
}

/// `Π_{Ω_t}(M) · scale` as a linear operator.
pub struct MaskedOperator<'v, 'a> {
    view: &'v MaskedView<'a>,
    scale: f64,
}

impl<'v, 'a> MaskedOperator<'v, 'a> {
    pub fn new(view: &'v MaskedView<'a>, scale: f64) -> Self {
        MaskedOperator { view, scale }
    }
}

impl LinearOperator for MaskedOperator<'_, '_> {
    fn nrows(&self) -> usize {
        self.view.base().nrows()
    }

    fn ncols(&self) -> usize {
        self.view.base().ncols()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.scale * self.view.row_entries(i).map(|(c, v)| v * x[c]).sum::<f64>();
        }
    }

    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj = self.scale * self.view.col_entries(j).map(|(r, v)| v * x[r]).sum::<f64>();
        }
    }

    fn apply_block(&self, b: &Matrix) -> Matrix {
        let k = b.cols();
        let mut out = Matrix::zeros(self.nrows(), k);
        for i in 0..self.nrows() {
            let row = out.row_mut(i);
            for (c, v) in self.view.row_entries(i) {
                let w = self.scale * v;
                for (o, bv) in row.iter_mut().zip(b.row(c)) {
                    *o += w * bv;
                }
            }
        }
        out
    }

    fn apply_transpose_block(&self, b: &Matrix) -> Matrix {
        let k = b.cols();
        let mut out = Matrix::zeros(self.ncols(), k);
        for j in 0..self.ncols() {
            let row = out.row_mut(j);
            for (r, v) in self.view.col_entries(j) {
                let w = self.scale * v;
                for (o, bv) in row.iter_mut().zip(b.row(r)) {
                    *o += w * bv;
                }
            }
        }
        out
    }
}
