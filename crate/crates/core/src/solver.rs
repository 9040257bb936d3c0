//! Alternating least-squares solver for robust matrix completion.
//!
//! Each iteration solves one small least-squares problem per row for the left
//! factor, re-orthonormalizes it (optionally dropping rank), solves per column
//! for the right factor, and splits the result back into `X Σ Yᵀ`. Outliers
//! are re-selected from the full residual by hard thresholding.

use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::densela::{lsq_solve, qr_thin, svd_small, truncated_svd, Matrix, SvdResult};
use crate::error::{invalid, Result, RmcError};
use crate::obsmat::{project_residual, Entry, MaskedOperator, MaskedView, ObservedMatrix, ResidualEntry};
use crate::outlier::{threshold_global_keeping, OutlierPolicy, OutlierStrategy, SparseCorrection};

/// Orthonormality tolerance enforced on solver factors.
pub const FACTOR_ORTHONORMAL_TOL: f64 = 1e-10;

/// Current low-rank model `x · diag(sigma) · yᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTriple {
    pub x: Matrix,
    pub sigma: Vec<f64>,
    pub y: Matrix,
}

impl FactorTriple {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.sigma.len();
        if r == 0 || self.x.cols() != r || self.y.cols() != r {
            return invalid("factor widths disagree with the number of singular values");
        }
        if self.sigma.windows(2).any(|w| w[0] < w[1]) || self.sigma.iter().any(|s| *s < 0.0) {
            return invalid("singular values must be nonnegative and nonincreasing");
        }
        for (name, m) in [("x", &self.x), ("y", &self.y)] {
            let defect = m.orthonormality_defect();
            if defect > FACTOR_ORTHONORMAL_TOL {
                return invalid(format!("{name} is not orthonormal (defect {defect:.3e})"));
            }
        }
        Ok(())
    }

    /// Model value at `(i, j)`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        let (xi, yj) = (self.x.row(i), self.y.row(j));
        (0..self.rank()).map(|k| xi[k] * self.sigma[k] * yj[k]).sum()
    }

    fn truncate(&mut self, r: usize) {
        self.x = self.x.leading_columns(r);
        self.y = self.y.leading_columns(r);
        self.sigma.truncate(r);
    }
}

/// Which detector selects outliers, or none at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierMode {
    /// The `s` largest residuals overall.
    GlobalTopS,
    /// Entries in the top `k` of both their row and column, capped at `s`.
    RowColIntersect { k: usize },
    /// Plain matrix completion: nothing is ever removed.
    Disabled,
}

/// When the outlier support is re-selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierSchedule {
    /// Every iteration, from the current residual.
    EveryIteration,
    /// Only at initialization and at stagnation events; values still track the residual.
    OnStagnation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Outlier budget.
    pub s: usize,
    /// Initial rank.
    pub r0: usize,
    /// Singular values with `kappa * sigma_j < sigma_1` are dropped.
    pub kappa: f64,
    /// Stop once the residual norm is at most this.
    pub tol: f64,
    pub max_iters: usize,
    pub stagnation_window: usize,
    pub stagnation_ratio: f64,
    /// At a stagnation event with no `kappa` deficiency, the rank is also cut at
    /// the largest ratio `sigma_j / sigma_{j+1}` when it exceeds this
    /// (`f64::INFINITY` disables the cut).
    pub stagnation_gap: f64,
    /// Rank test every this many iterations (0 disables the periodic test).
    pub rank_check_period: usize,
    /// Rows with fewer than `factor * r` observations are reported as thin.
    pub min_row_obs_factor: f64,
    pub seed: u64,
    /// Solve each row on at most this many random observations (0 = all).
    pub subsample_per_row: usize,
    pub threads: usize,
    pub outlier_mode: OutlierMode,
    pub outlier_schedule: OutlierSchedule,
}

impl SolverConfig {
    pub fn new(s: usize, r0: usize) -> Self {
        SolverConfig {
            s,
            r0,
            kappa: 1e4,
            tol: 1e-7,
            max_iters: 500,
            stagnation_window: 5,
            stagnation_ratio: 0.9,
            stagnation_gap: 2.0,
            rank_check_period: 5,
            min_row_obs_factor: 2.0,
            seed: 0,
            subsample_per_row: 0,
            threads: 1,
            outlier_mode: OutlierMode::GlobalTopS,
            outlier_schedule: OutlierSchedule::OnStagnation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r0 == 0 {
            return invalid("initial rank must be at least 1");
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return invalid(format!("tolerance must be positive, got {}", self.tol));
        }
        if !(self.kappa > 1.0) {
            return invalid(format!("kappa must exceed 1, got {}", self.kappa));
        }
        if !(self.stagnation_ratio > 0.0 && self.stagnation_ratio < 1.0) {
            return invalid(format!(
                "stagnation ratio must lie in (0, 1), got {}",
                self.stagnation_ratio
            ));
        }
        if !(self.stagnation_gap > 1.0) {
            return invalid(format!(
                "stagnation gap must exceed 1, got {}",
                self.stagnation_gap
            ));
        }
        if !(self.min_row_obs_factor >= 1.0) {
            return invalid("min_row_obs_factor must be at least 1");
        }
        if self.max_iters == 0 {
            return invalid("max_iters must be at least 1");
        }
        if self.threads == 0 {
            return invalid("threads must be at least 1");
        }
        if let Some(p) = self.outlier_policy() {
            p.validate()?;
        }
        Ok(())
    }

    pub fn outlier_policy(&self) -> Option<OutlierPolicy> {
        match self.outlier_mode {
            OutlierMode::GlobalTopS => Some(OutlierPolicy::GlobalTopS { s: self.s }),
            OutlierMode::RowColIntersect { k } => {
                Some(OutlierPolicy::RowColIntersect { k, cap: self.s })
            }
            OutlierMode::Disabled => None,
        }
    }

    fn row_options(&self, salt: u64) -> RowSolveOptions {
        RowSolveOptions {
            min_row_obs_factor: self.min_row_obs_factor,
            subsample_per_row: self.subsample_per_row,
            seed: self.seed,
            salt,
            parallel: self.threads > 1,
        }
    }
}

/// Which factor a row-wise solve produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    /// Rows of `X`, one system per matrix row.
    ForX,
    /// Rows of `Y`, one system per matrix column.
    ForY,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThinRowWarning {
    pub axis: Axis,
    pub index: usize,
    pub observed: usize,
    pub required: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowSolveOptions {
    pub min_row_obs_factor: f64,
    pub subsample_per_row: usize,
    pub seed: u64,
    /// Mixed into the subsampling seed so each call draws fresh subsets.
    pub salt: u64,
    pub parallel: bool,
}

impl Default for RowSolveOptions {
    fn default() -> Self {
        RowSolveOptions {
            min_row_obs_factor: 2.0,
            subsample_per_row: 0,
            seed: 0,
            salt: 0,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RowSolve {
    pub factor: Matrix,
    pub warnings: Vec<ThinRowWarning>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Least-squares fit of every row of `X` (or `Y`) against the fixed other factor,
/// using only the view's effective entries. Rows with no entries come back zero.
pub fn solve_rows(
    view: &MaskedView<'_>,
    fixed: &Matrix,
    which: Axis,
    opts: &RowSolveOptions,
) -> Result<RowSolve> {
    let base = view.base();
    let (count, other) = match which {
        Axis::ForX => (base.nrows(), base.ncols()),
        Axis::ForY => (base.ncols(), base.nrows()),
    };
    if fixed.rows() != other {
        return invalid(format!(
            "fixed factor has {} rows, expected {other}",
            fixed.rows()
        ));
    }
    let r = fixed.cols();
    let required = opts.min_row_obs_factor * r as f64;

    let solve_one = |index: usize| -> Result<(Vec<f64>, Option<ThinRowWarning>)> {
        let mut obs: Vec<(usize, f64)> = match which {
            Axis::ForX => view.row_entries(index).collect(),
            Axis::ForY => view.col_entries(index).collect(),
        };
        if opts.subsample_per_row > 0 && obs.len() > opts.subsample_per_row {
            let key = splitmix(opts.seed ^ splitmix(opts.salt ^ splitmix(index as u64 * 2 + which as u64)));
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            let mut picks = sample(&mut rng, obs.len(), opts.subsample_per_row).into_vec();
            picks.sort_unstable();
            obs = picks.into_iter().map(|k| obs[k]).collect();
        }
        let warning = ((obs.len() as f64) < required).then_some(ThinRowWarning {
            axis: which,
            index,
            observed: obs.len(),
            required,
        });
        if obs.is_empty() {
            return Ok((vec![0.0; r], warning));
        }
        let mut coeff = Vec::with_capacity(obs.len() * r);
        let mut rhs = Vec::with_capacity(obs.len());
        for &(k, v) in &obs {
            coeff.extend_from_slice(fixed.row(k));
            rhs.push(v);
        }
        let coeff = Matrix::from_vec(obs.len(), r, coeff)?;
        Ok((lsq_solve(&coeff, &rhs)?, warning))
    };

    let rows: Vec<Result<(Vec<f64>, Option<ThinRowWarning>)>> = if opts.parallel {
        (0..count).into_par_iter().map(solve_one).collect()
    } else {
        (0..count).map(solve_one).collect()
    };
    let mut data = Vec::with_capacity(count * r);
    let mut warnings = Vec::new();
    for row in rows {
        let (x, w) = row?;
        data.extend_from_slice(&x);
        warnings.extend(w);
    }
    Ok(RowSolve {
        factor: Matrix::from_vec(count, r, data)?,
        warnings,
    })
}

/// Number of singular values passing `kappa * sigma_j >= sigma_1`.
pub fn retained_rank(sigma: &[f64], kappa: f64) -> usize {
    match sigma.first() {
        Some(&top) => sigma.iter().filter(|&&s| kappa * s >= top).count(),
        None => 0,
    }
}

/// Number of leading singular values kept by a cut at the largest consecutive
/// ratio, or all of them when no ratio exceeds `gap`.
pub fn gap_rank(sigma: &[f64], gap: f64) -> usize {
    let mut best = (sigma.len(), gap);
    for j in 1..sigma.len() {
        let ratio = sigma[j - 1] / sigma[j];
        if ratio > best.1 {
            best = (j, ratio);
        }
    }
    best.0
}

/// QR of `xt` then SVD of the triangular factor: `xt = Q R`, `R = U Σ Vᵀ`.
fn qr_svd(xt: &Matrix) -> Result<(Matrix, SvdResult)> {
    let qr = qr_thin(xt)?;
    let svd = svd_small(&qr.r)?;
    if svd.sigma[0] == 0.0 {
        return Err(RmcError::ModelCollapsed(
            "every singular value of the factor update is zero".into(),
        ));
    }
    Ok((qr.q, svd))
}

/// Orthonormal basis `[Q U]` of `xt`, truncated by the `kappa` test, together
/// with the SVD of the QR core and the retained rank.
pub fn reorthonormalize_and_truncate(xt: &Matrix, kappa: f64) -> Result<(Matrix, SvdResult, usize)> {
    let (q, svd) = qr_svd(xt)?;
    let keep = retained_rank(&svd.sigma, kappa);
    let basis = q.matmul(&svd.u)?.leading_columns(keep);
    Ok((basis, svd, keep))
}

/// Outcome of one alternating sweep before the residual is evaluated.
#[derive(Debug, Clone)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) struct Sweep {
    pub factors: FactorTriple,
    /// Orthonormal left basis used for the right-factor solve.
    pub x_basis: Matrix,
    /// Unnormalized right-factor solution.
    pub y_tilde: Matrix,
    pub thin_rows: usize,
}

pub(crate) fn sweep(
    view: &MaskedView<'_>,
    y_prev: &Matrix,
    kappa: Option<f64>,
    opts_x: &RowSolveOptions,
    opts_y: &RowSolveOptions,
) -> Result<Sweep> {
    let xs = solve_rows(view, y_prev, Axis::ForX, opts_x)?;
    let (q, svd) = qr_svd(&xs.factor)?;
    let keep = kappa.map_or(svd.sigma.len(), |k| retained_rank(&svd.sigma, k));
    let x_basis = q.matmul(&svd.u)?.leading_columns(keep);

    let ys = solve_rows(view, &x_basis, Axis::ForY, opts_y)?;
    let (y_hat, core) = qr_svd(&ys.factor)?;
    // ỹ = Ŷ R with R = U Σ Vᵀ, so x_basis ỹᵀ = (x_basis V) Σ (Ŷ U)ᵀ.
    let keep = kappa.map_or(core.sigma.len(), |k| retained_rank(&core.sigma, k));
    let factors = FactorTriple {
        x: x_basis.matmul(&core.v)?.leading_columns(keep),
        sigma: core.sigma[..keep].to_vec(),
        y: y_hat.matmul(&core.u)?.leading_columns(keep),
    };
    Ok(Sweep {
        factors,
        x_basis,
        y_tilde: ys.factor,
        thin_rows: xs.warnings.len() + ys.warnings.len(),
    })
}

/// Action taken when the residual stagnates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StagnationRemedy {
    RankDrop,
    OutlierRecompute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub tau: f64,
    pub rank: usize,
    /// Entries that entered the outlier support this iteration.
    pub dropped: usize,
    pub support: usize,
    pub thin_rows: usize,
    pub rank_checked: bool,
    pub remedy: Option<StagnationRemedy>,
    /// Time since the solve started.
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub iter: usize,
    pub factors: FactorTriple,
    pub correction: SparseCorrection,
    pub tau: f64,
    pub rank_history: Vec<(usize, usize)>,
    pub drop_events: Vec<usize>,
    pub trace: Vec<TraceRecord>,
    support_ids: Vec<usize>,
    started: Instant,
}

impl SolverState {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    /// Entry ids of the current outlier support, ascending.
    pub fn support_ids(&self) -> &[usize] {
        &self.support_ids
    }

    /// Iteration of the last rank change, if any.
    pub fn last_rank_change(&self) -> Option<usize> {
        self.rank_history
            .windows(2)
            .filter(|w| w[1].1 != w[0].1)
            .map(|w| w[1].0)
            .last()
    }

    /// Builds a state from given factors as if they were iteration 1.
    pub fn with_factors(obs: &ObservedMatrix, cfg: &SolverConfig, factors: FactorTriple) -> Result<Self> {
        cfg.validate()?;
        factors.validate()?;
        crate::obsmat::check_factor_shapes(obs, &factors.x, &factors.sigma, &factors.y)?;
        let eval = evaluate(obs, cfg, &factors, None)?;
        Ok(Self::first(factors, eval, 0, Instant::now()))
    }

    fn first(factors: FactorTriple, eval: Evaluation, thin_rows: usize, started: Instant) -> Self {
        let rank = factors.rank();
        let record = TraceRecord {
            iter: 1,
            tau: eval.tau,
            rank,
            dropped: eval.support_ids.len(),
            support: eval.support_ids.len(),
            thin_rows,
            rank_checked: false,
            remedy: None,
            elapsed: started.elapsed(),
        };
        SolverState {
            iter: 1,
            factors,
            correction: eval.correction,
            tau: eval.tau,
            rank_history: vec![(1, rank)],
            drop_events: Vec::new(),
            trace: vec![record],
            support_ids: eval.support_ids,
            started,
        }
    }

    fn tau_at(&self, iter: usize) -> Option<f64> {
        let first = self.trace.first()?.iter;
        self.trace.get(iter.checked_sub(first)?).map(|r| r.tau)
    }
}

struct Evaluation {
    correction: SparseCorrection,
    support_ids: Vec<usize>,
    tau: f64,
}

fn newly_added(old: &[usize], new: &[usize]) -> usize {
    new.iter().filter(|id| old.binary_search(id).is_err()).count()
}

fn strategy_of(cfg: &SolverConfig) -> OutlierStrategy {
    match cfg.outlier_mode {
        OutlierMode::RowColIntersect { .. } => OutlierStrategy::RowColIntersect,
        _ => OutlierStrategy::GlobalTopS,
    }
}

/// Residual over `Ω`, outlier support (fresh or held) and `τ`.
fn evaluate(
    obs: &ObservedMatrix,
    cfg: &SolverConfig,
    f: &FactorTriple,
    held: Option<&[usize]>,
) -> Result<Evaluation> {
    let full = MaskedView::full(obs);
    let res = project_residual(&full, &f.x, &f.sigma, &f.y)?;
    let support_ids = match (held, cfg.outlier_policy()) {
        (Some(ids), _) => ids.to_vec(),
        (None, Some(policy)) => ids_of(obs, &select(policy, &res.entries, cfg, f.rank())?)?,
        (None, None) => Vec::new(),
    };
    Ok(summarize(&res.entries, support_ids, strategy_of(cfg)))
}

/// The global detector never strips a row or column below the observation count
/// its least-squares system needs at rank `r`.
fn select(
    policy: OutlierPolicy,
    residual: &[ResidualEntry],
    cfg: &SolverConfig,
    r: usize,
) -> Result<SparseCorrection> {
    match policy {
        OutlierPolicy::GlobalTopS { s } => {
            let keep = (cfg.min_row_obs_factor * r as f64).ceil() as usize;
            threshold_global_keeping(residual, s, keep)
        }
        _ => policy.apply(residual),
    }
}

fn ids_of(obs: &ObservedMatrix, c: &SparseCorrection) -> Result<Vec<usize>> {
    let mut ids = c
        .entries
        .iter()
        .map(|e| {
            obs.entry_id(e.row, e.col).ok_or_else(|| {
                RmcError::InvalidArgument(format!("outlier ({}, {}) is not observed", e.row, e.col))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ids.sort_unstable();
    Ok(ids)
}

/// `residual` must cover every observed entry in id order.
fn summarize(residual: &[ResidualEntry], support_ids: Vec<usize>, strategy: OutlierStrategy) -> Evaluation {
    let mut selected = vec![false; residual.len()];
    for &id in &support_ids {
        selected[id] = true;
    }
    let mut sumsq = 0.0;
    for r in residual {
        if !selected[r.id] {
            sumsq += r.value * r.value;
        }
    }
    let entries = support_ids
        .iter()
        .map(|&id| {
            let r = &residual[id];
            Entry::new(r.row, r.col, r.value)
        })
        .collect();
    Evaluation {
        correction: SparseCorrection {
            entries,
            strategy_used: strategy,
        },
        support_ids,
        tau: sumsq.sqrt(),
    }
}

fn check_problem(obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    let min_dim = obs.nrows().min(obs.ncols());
    if cfg.r0 > min_dim {
        return invalid(format!("initial rank {} exceeds min(m, n) = {min_dim}", cfg.r0));
    }
    if obs.nnz() <= cfg.s {
        return invalid(format!(
            "budget consumes all observations (|Omega| = {}, s = {})",
            obs.nnz(),
            cfg.s
        ));
    }
    Ok(())
}

/// Removes the largest raw observations, then takes a rank-`r0` truncated SVD
/// of the remaining observations rescaled by `mn / (|Ω| − s)`.
pub fn initialize(obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<SolverState> {
    check_problem(obs, cfg)?;
    let started = Instant::now();
    let raw: Vec<ResidualEntry> = obs
        .entries()
        .iter()
        .enumerate()
        .map(|(id, e)| ResidualEntry {
            id,
            row: e.row,
            col: e.col,
            value: e.value,
        })
        .collect();
    let s0 = match cfg.outlier_policy() {
        Some(policy) => ids_of(obs, &select(policy, &raw, cfg, cfg.r0)?)?,
        None => Vec::new(),
    };
    let view = MaskedView::excluding_ids(obs, s0)?;
    let p_eff = (obs.nnz() - cfg.s) as f64 / (obs.nrows() as f64 * obs.ncols() as f64);
    let op = MaskedOperator::new(&view, 1.0 / p_eff);
    let t = truncated_svd(&op, cfg.r0, cfg.seed)?;
    if t.sigma[0] == 0.0 {
        return Err(RmcError::ModelCollapsed(
            "initial truncated SVD is identically zero".into(),
        ));
    }
    let factors = FactorTriple {
        x: t.u,
        sigma: t.sigma,
        y: t.v,
    };
    let eval = evaluate(obs, cfg, &factors, None)?;
    Ok(SolverState::first(factors, eval, 0, started))
}

fn held_support<'s>(state: &'s SolverState, cfg: &SolverConfig) -> Option<&'s [usize]> {
    match cfg.outlier_schedule {
        OutlierSchedule::EveryIteration => None,
        OutlierSchedule::OnStagnation => Some(&state.support_ids),
    }
}

fn advance(mut state: SolverState, obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<SolverState> {
    let t = state.iter + 1;
    let check = cfg.rank_check_period > 0 && t % cfg.rank_check_period == 0;
    let view = MaskedView::excluding_ids(obs, state.support_ids.iter().copied())?;
    let salt = 2 * t as u64;
    let sw = sweep(
        &view,
        &state.factors.y,
        check.then_some(cfg.kappa),
        &cfg.row_options(salt),
        &cfg.row_options(salt + 1),
    )?;
    if sw.thin_rows > 0 {
        log::debug!("iteration {t}: {} thin rows or columns", sw.thin_rows);
    }
    let eval = evaluate(obs, cfg, &sw.factors, held_support(&state, cfg))?;
    let dropped = newly_added(&state.support_ids, &eval.support_ids);
    let rank = sw.factors.rank();
    state.iter = t;
    state.factors = sw.factors;
    state.correction = eval.correction;
    state.tau = eval.tau;
    state.support_ids = eval.support_ids;
    state.rank_history.push((t, rank));
    state.trace.push(TraceRecord {
        iter: t,
        tau: state.tau,
        rank,
        dropped,
        support: state.support_ids.len(),
        thin_rows: sw.thin_rows,
        rank_checked: check,
        remedy: None,
        elapsed: state.started.elapsed(),
    });
    Ok(state)
}

/// One full iteration: both factor solves, re-orthonormalization, the periodic
/// rank test, residual, outlier selection and `τ`.
pub fn step(state: SolverState, obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    advance(state, obs, cfg)
}

/// Applies the stagnation remedies in order: rank test on the current `Σ`
/// (`kappa`, then the dominant gap), then outlier re-selection. Rewrites the
/// current iteration's trace record.
fn remedy(mut state: SolverState, obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<SolverState> {
    let mut keep = retained_rank(&state.factors.sigma, cfg.kappa);
    if keep == state.rank() {
        keep = gap_rank(&state.factors.sigma, cfg.stagnation_gap);
    }
    let (kind, held) = if keep < state.rank() {
        state.factors.truncate(keep);
        (StagnationRemedy::RankDrop, held_support(&state, cfg).map(<[usize]>::to_vec))
    } else {
        state.drop_events.push(state.iter);
        (StagnationRemedy::OutlierRecompute, None)
    };
    let eval = evaluate(obs, cfg, &state.factors, held.as_deref())?;
    let added = newly_added(&state.support_ids, &eval.support_ids);
    state.correction = eval.correction;
    state.tau = eval.tau;
    state.support_ids = eval.support_ids;
    let rank = state.rank();
    if let Some(last) = state.rank_history.last_mut() {
        last.1 = rank;
    }
    if let Some(rec) = state.trace.last_mut() {
        rec.tau = state.tau;
        rec.rank = rank;
        rec.dropped += added;
        rec.support = state.support_ids.len();
        rec.rank_checked = true;
        rec.remedy = Some(kind);
    }
    log::info!("iteration {}: stagnation, remedy {:?}", state.iter, kind);
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Converged,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: RunOutcome,
    pub state: SolverState,
}

impl RunResult {
    pub fn factors(&self) -> &FactorTriple {
        &self.state.factors
    }

    pub fn correction(&self) -> &SparseCorrection {
        &self.state.correction
    }
}

/// Initializes and iterates until `τ <= tol` or `max_iters` iterations.
pub fn run(obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<RunResult> {
    with_pool(cfg, || {
        let state = initialize(obs, cfg)?;
        iterate(state, obs, cfg)
    })
}

/// Continues iterating from an existing state.
pub fn run_from(state: SolverState, obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<RunResult> {
    cfg.validate()?;
    with_pool(cfg, || iterate(state, obs, cfg))
}

fn with_pool<T: Send>(cfg: &SolverConfig, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if cfg.threads <= 1 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| RmcError::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(f)
}

fn iterate(mut state: SolverState, obs: &ObservedMatrix, cfg: &SolverConfig) -> Result<RunResult> {
    let mut window_start = state.iter;
    while state.tau > cfg.tol && state.iter < cfg.max_iters {
        let before = state.rank();
        state = advance(state, obs, cfg)?;
        if state.rank() != before {
            window_start = state.iter;
            continue;
        }
        let w = cfg.stagnation_window;
        if w == 0 || state.iter < window_start + w || state.tau <= cfg.tol {
            continue;
        }
        let past = state.tau_at(state.iter - w).unwrap_or(f64::INFINITY);
        if past > 0.0 && state.tau / past > cfg.stagnation_ratio {
            state = remedy(state, obs, cfg)?;
            window_start = state.iter;
        }
    }
    let outcome = if state.tau <= cfg.tol {
        RunOutcome::Converged
    } else {
        RunOutcome::MaxIters
    };
    Ok(RunResult { outcome, state })
}
