//! Hard-threshold outlier selection over a residual.
//!
//! Both detectors rank entries by `|residual|` descending with ties broken by
//! ascending `(row, col)`, so selections are deterministic. A selected entry
//! carries its residual value, which makes the corrected residual vanish there.

use std::cmp::Ordering;

use crate::error::{invalid, Result};
use crate::obsmat::{Entry, ResidualEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierStrategy {
    GlobalTopS,
    RowColIntersect,
}

/// Sparse outlier estimate `S_t`, entries sorted by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCorrection {
    pub entries: Vec<Entry>,
    pub strategy_used: OutlierStrategy,
}

impl SparseCorrection {
    pub fn empty(strategy: OutlierStrategy) -> Self {
        SparseCorrection {
            entries: Vec::new(),
            strategy_used: strategy,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn support(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|e| (e.row, e.col)).collect()
    }
}

/// Which detector to run and with what budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierPolicy {
    GlobalTopS { s: usize },
    RowColIntersect { k: usize, cap: usize },
}

impl OutlierPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OutlierPolicy::RowColIntersect { k: 0, .. } => {
                invalid("row/column outlier rank k must be at least 1")
            }
            _ => Ok(()),
        }
    }

    pub fn budget(&self) -> usize {
        match *self {
            OutlierPolicy::GlobalTopS { s } => s,
            OutlierPolicy::RowColIntersect { cap, .. } => cap,
        }
    }

    pub fn apply(&self, residual: &[ResidualEntry]) -> Result<SparseCorrection> {
        match *self {
            OutlierPolicy::GlobalTopS { s } => threshold_global(residual, s),
            OutlierPolicy::RowColIntersect { k, cap } => Ok(threshold_rowcol(residual, k, cap)),
        }
    }
}

/// Larger magnitude first, then lexicographic `(row, col)`.
fn priority(a: &ResidualEntry, b: &ResidualEntry) -> Ordering {
    b.value
        .abs()
        .total_cmp(&a.value.abs())
        .then(a.row.cmp(&b.row))
        .then(a.col.cmp(&b.col))
}

fn into_correction(mut picked: Vec<ResidualEntry>, strategy: OutlierStrategy) -> SparseCorrection {
    picked.sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)));
    SparseCorrection {
        entries: picked
            .into_iter()
            .map(|r| Entry::new(r.row, r.col, r.value))
            .collect(),
        strategy_used: strategy,
    }
}

/// The `s` entries of largest `|residual|` (zero residuals are never selected).
pub fn threshold_global(residual: &[ResidualEntry], s: usize) -> Result<SparseCorrection> {
    if s > residual.len() {
        return invalid(format!(
            "outlier budget {s} exceeds the {} available entries",
            residual.len()
        ));
    }
    let mut nonzero: Vec<ResidualEntry> = residual
        .iter()
        .filter(|r| r.value != 0.0)
        .copied()
        .collect();
    if s < nonzero.len() {
        if s > 0 {
            nonzero.select_nth_unstable_by(s - 1, priority);
        }
        nonzero.truncate(s);
    }
    Ok(into_correction(nonzero, OutlierStrategy::GlobalTopS))
}

/// Like [`threshold_global`], but an entry is skipped when taking it would leave
/// its row or its column with fewer than `keep` residual entries. Lower-ranked
/// entries take the freed budget.
pub fn threshold_global_keeping(
    residual: &[ResidualEntry],
    s: usize,
    keep: usize,
) -> Result<SparseCorrection> {
    if s > residual.len() {
        return invalid(format!(
            "outlier budget {s} exceeds the {} available entries",
            residual.len()
        ));
    }
    let rows = residual.iter().map(|r| r.row + 1).max().unwrap_or(0);
    let cols = residual.iter().map(|r| r.col + 1).max().unwrap_or(0);
    let mut row_left = vec![0usize; rows];
    let mut col_left = vec![0usize; cols];
    for r in residual {
        row_left[r.row] += 1;
        col_left[r.col] += 1;
    }
    let mut order: Vec<&ResidualEntry> = residual.iter().filter(|r| r.value != 0.0).collect();
    order.sort_by(|a, b| priority(a, b));
    let mut picked = Vec::with_capacity(s.min(order.len()));
    for r in order {
        if picked.len() == s {
            break;
        }
        if row_left[r.row] <= keep || col_left[r.col] <= keep {
            continue;
        }
        row_left[r.row] -= 1;
        col_left[r.col] -= 1;
        picked.push(*r);
    }
    Ok(into_correction(picked, OutlierStrategy::GlobalTopS))
}

/// Entries that are among the top `k` of both their row and their column
/// (unobserved entries count as zero), capped to the `cap` largest.
pub fn threshold_rowcol(residual: &[ResidualEntry], k: usize, cap: usize) -> SparseCorrection {
    if k == 0 || residual.is_empty() {
        return SparseCorrection::empty(OutlierStrategy::RowColIntersect);
    }
    let n = residual.len();
    let mut in_row_top = vec![false; n];
    let mut in_col_top = vec![false; n];

    let mark = |group: fn(&ResidualEntry) -> usize, flags: &mut [bool]| {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            group(&residual[a])
                .cmp(&group(&residual[b]))
                .then_with(|| priority(&residual[a], &residual[b]))
        });
        let mut current = usize::MAX;
        let mut rank = 0;
        for idx in order {
            let g = group(&residual[idx]);
            if g != current {
                current = g;
                rank = 0;
            }
            if rank < k {
                flags[idx] = true;
            }
            rank += 1;
        }
    };
    mark(|r| r.row, &mut in_row_top);
    mark(|r| r.col, &mut in_col_top);

    let mut picked: Vec<ResidualEntry> = residual
        .iter()
        .enumerate()
        .filter(|(i, r)| in_row_top[*i] && in_col_top[*i] && r.value != 0.0)
        .map(|(_, r)| *r)
        .collect();
    if picked.len() > cap {
        picked.sort_by(priority);
        picked.truncate(cap);
    }
    into_correction(picked, OutlierStrategy::RowColIntersect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{double_rank_select, full_sort_top};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn res(list: &[(usize, usize, f64)]) -> Vec<ResidualEntry> {
        list.iter()
            .enumerate()
            .map(|(id, &(row, col, value))| ResidualEntry { id, row, col, value })
            .collect()
    }

    fn triples(c: &SparseCorrection) -> Vec<(usize, usize, f64)> {
        c.entries.iter().map(|e| (e.row, e.col, e.value)).collect()
    }

    #[test]
    fn unique_max() {
        let r = res(&[(0, 0, 5.0), (0, 1, -1.0), (1, 1, 2.0)]);
        let c = threshold_global(&r, 1).unwrap();
        assert_eq!(triples(&c), vec![(0, 0, 5.0)]);
    }

    #[test]
    fn zero_residual_selects_nothing() {
        let r = res(&[(0, 0, 0.0), (0, 1, 0.0), (1, 1, 0.0)]);
        assert!(threshold_global(&r, 3).unwrap().is_empty());
    }

    #[test]
    fn budget_above_support_is_an_error() {
        let r = res(&[(0, 0, 1.0)]);
        assert!(threshold_global(&r, 2).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let r = res(&[(1, 0, 2.0), (0, 1, -2.0), (0, 0, 1.0)]);
        let c = threshold_global(&r, 1).unwrap();
        assert_eq!(triples(&c), vec![(0, 1, -2.0)]);
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let list: Vec<(usize, usize, f64)> = (0..15)
            .flat_map(|i| (0..15).map(move |j| (i, j)))
            .filter(|_| true)
            .map(|(i, j)| (i, j, rng.random_range(-1.0..1.0)))
            .collect();
        let c = threshold_global(&res(&list), 10).unwrap();
        assert_eq!(triples(&c), full_sort_top(&list, 10));
    }

    #[test]
    fn rowcol_two_by_two() {
        let r = res(&[(0, 0, 9.0), (0, 1, 1.0), (1, 0, 2.0), (1, 1, 3.0)]);
        let c = threshold_rowcol(&r, 1, 10);
        assert_eq!(triples(&c), vec![(0, 0, 9.0), (1, 1, 3.0)]);
    }

    #[test]
    fn rowcol_dominant_row() {
        let r = res(&[
            (0, 0, 9.0),
            (0, 1, 8.0),
            (0, 2, 7.0),
            (1, 0, 1.0),
            (1, 1, 2.0),
            (1, 2, 3.0),
        ]);
        let c = threshold_rowcol(&r, 1, 10);
        assert_eq!(triples(&c), vec![(0, 0, 9.0)]);
    }

    #[test]
    fn rowcol_recovers_planted_spikes() {
        let n = 30;
        let rho = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut list = Vec::new();
        let mut planted = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let spike = rng.random::<f64>() < rho;
                let base = rng.random_range(-0.01..0.01);
                let v = if spike {
                    planted.push((i, j));
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sign * rng.random_range(1.0..2.0)
                } else {
                    base
                };
                list.push((i, j, v));
            }
        }
        let k = (rho * n as f64).ceil() as usize + 2;
        let c = threshold_rowcol(&res(&list), k, n * n);
        assert_eq!(triples(&c), double_rank_select(&list, k, n * n));
        let hits = c
            .support()
            .iter()
            .filter(|p| planted.contains(p))
            .count();
        assert!(hits as f64 >= 0.9 * planted.len() as f64, "{hits}/{}", planted.len());
    }

    #[test]
    fn rowcol_cap_keeps_largest() {
        let r = res(&[(0, 0, 5.0), (1, 1, 4.0), (2, 2, 6.0)]);
        let c = threshold_rowcol(&r, 1, 2);
        assert_eq!(triples(&c), vec![(0, 0, 5.0), (2, 2, 6.0)]);
    }

    #[test]
    fn keeping_skips_rows_at_the_floor() {
        let r = res(&[
            (0, 0, 9.0),
            (0, 1, 8.0),
            (0, 2, 7.0),
            (1, 0, 1.0),
            (1, 1, 2.0),
            (1, 2, 3.0),
            (2, 0, 0.5),
            (2, 1, 0.25),
            (2, 2, 0.125),
        ]);
        let c = threshold_global_keeping(&r, 3, 2).unwrap();
        assert_eq!(triples(&c), vec![(0, 0, 9.0), (1, 2, 3.0), (2, 1, 0.25)]);
    }

    #[test]
    fn policy_validation() {
        assert!(OutlierPolicy::RowColIntersect { k: 0, cap: 1 }.validate().is_err());
        assert!(OutlierPolicy::GlobalTopS { s: 0 }.validate().is_ok());
    }

    fn residual_strategy() -> impl Strategy<Value = Vec<(usize, usize, f64)>> {
        proptest::collection::btree_map((0usize..8, 0usize..8), -100i32..100, 1..50).prop_map(
            |m| m.into_iter().map(|((i, j), v)| (i, j, v as f64 * 0.25)).collect(),
        )
    }

    proptest! {
        #[test]
        fn global_budget_and_exactness(list in residual_strategy(), s in 0usize..10) {
            let s = s.min(list.len());
            let r = res(&list);
            let c = threshold_global(&r, s).unwrap();
            prop_assert!(c.len() <= s);
            for e in &c.entries {
                let orig = list.iter().find(|t| t.0 == e.row && t.1 == e.col).unwrap();
                prop_assert_eq!(orig.2 - e.value, 0.0);
            }
            prop_assert_eq!(triples(&c), full_sort_top(&list, s));
        }

        #[test]
        fn global_is_nested_in_budget(list in residual_strategy(), s in 0usize..10) {
            let s = s.min(list.len().saturating_sub(1));
            let r = res(&list);
            let small = threshold_global(&r, s).unwrap().support();
            let big = threshold_global(&r, s + 1).unwrap().support();
            prop_assert!(small.iter().all(|p| big.contains(p)));
        }

        #[test]
        fn selection_is_scale_equivariant(list in residual_strategy(), s in 0usize..10, c in 0.01f64..100.0) {
            let s = s.min(list.len());
            let scaled: Vec<_> = list.iter().map(|&(i, j, v)| (i, j, v * c)).collect();
            let a = threshold_global(&res(&list), s).unwrap().support();
            let b = threshold_global(&res(&scaled), s).unwrap().support();
            prop_assert_eq!(a, b);
            let a = threshold_rowcol(&res(&list), 2, 5).support();
            let b = threshold_rowcol(&res(&scaled), 2, 5).support();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn keeping_zero_is_plain_global(list in residual_strategy(), s in 0usize..10) {
            let s = s.min(list.len());
            let a = threshold_global(&res(&list), s).unwrap();
            let b = threshold_global_keeping(&res(&list), s, 0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn keeping_respects_floor(list in residual_strategy(), s in 0usize..20, keep in 0usize..4) {
            let s = s.min(list.len());
            let c = threshold_global_keeping(&res(&list), s, keep).unwrap();
            prop_assert!(c.len() <= s);
            for i in 0..8 {
                let total = list.iter().filter(|t| t.0 == i).count();
                let taken = c.entries.iter().filter(|e| e.row == i).count();
                prop_assert!(taken == 0 || total - taken >= keep);
                let total = list.iter().filter(|t| t.1 == i).count();
                let taken = c.entries.iter().filter(|e| e.col == i).count();
                prop_assert!(taken == 0 || total - taken >= keep);
            }
        }

        #[test]
        fn rowcol_matches_oracle(list in residual_strategy(), k in 1usize..4, cap in 0usize..12) {
            let c = threshold_rowcol(&res(&list), k, cap);
            prop_assert!(c.len() <= cap);
            prop_assert_eq!(triples(&c), double_rank_select(&list, k, cap));
        }
    }
}
