//! Command-line front end: `synth`, `solve` and `eval`.
//!
//! Exit codes: 0 converged (or success), 2 iteration limit reached, 1 for usage,
//! I/O and parse errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::densela::Matrix;
use crate::error::{invalid, Result, RmcError};
use crate::metrics::{recovery_error, stable_rank_operator, theorem1_check, THEOREM1_DIM_CAP};
use crate::obsmat::{
    project_residual, read_matrix_market, read_triplets, write_triplets, Entry, MaskedOperator,
    MaskedView, ObservedMatrix,
};
use crate::outlier::{OutlierStrategy, SparseCorrection};
use crate::solver::{run, FactorTriple, OutlierMode, OutlierSchedule, RunOutcome, SolverConfig};
use crate::synth::{self, InstanceSpec};
use crate::textio::{fmt_f64, read_dense, read_vector, write_dense, write_vector, KeyValues};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_MAX_ITERS: i32 = 2;

pub const TRACE_FILE: &str = "trace.csv";
pub const TRACE_HEADER: &str = "iter,tau,rank,dropped,wall_ms";
pub const X_FILE: &str = "x.txt";
pub const SIGMA_FILE: &str = "sigma.txt";
pub const Y_FILE: &str = "y.txt";
pub const S_FILE: &str = "s.mtx";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "nleq-rmc", version, about = "Robust matrix completion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic instance with ground truth.
    Synth(SynthArgs),
    /// Run the solver on an instance directory.
    Solve(SolveArgs),
    /// Compare a solver run against the instance ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    #[arg(long)]
    pub rank: usize,
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corrupt exactly floor(rho * cols) entries in every row.
    #[arg(long)]
    pub strict_a2: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutlierArg {
    Global,
    Rowcol,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    /// Hold the support between stagnation events.
    Stagnation,
    /// Re-select the support after every iteration.
    Every,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Outlier budget [default: ceil(1.2 * rho * |Omega|) from the manifest]
    #[arg(long)]
    pub s: Option<usize>,
    /// Initial rank [default: min(2r, min(m, n)) from the manifest]
    #[arg(long)]
    pub r0: Option<usize>,
    #[arg(long, default_value_t = 1e4)]
    pub kappa: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 5)]
    pub stagnation_window: usize,
    #[arg(long, default_value_t = 0.9)]
    pub stagnation_ratio: f64,
    /// Singular-value gap that cuts the rank at a stagnation event (`inf` disables).
    #[arg(long, default_value_t = 2.0)]
    pub stagnation_gap: f64,
    #[arg(long, default_value_t = 5)]
    pub rank_check_period: usize,
    #[arg(long, default_value_t = 2.0)]
    pub min_row_obs_factor: f64,
    #[arg(long, default_value_t = 0)]
    pub subsample_per_row: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = OutlierArg::Global)]
    pub outliers: OutlierArg,
    /// Per-row/column rank for `--outliers rowcol`
    #[arg(long, default_value_t = 1)]
    pub rowcol_k: usize,
    #[arg(long, value_enum, default_value_t = ScheduleArg::Stagnation)]
    pub outlier_schedule: ScheduleArg,
    /// Record real wall time in the trace and manifest (otherwise written as 0).
    #[arg(long)]
    pub wall_clock: bool,
    /// Echo the run manifest to stdout.
    #[arg(long)]
    pub manifest: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub instance: PathBuf,
    /// Also write the report as a one-row CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses arguments, dispatches, and maps the result to an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_FAILURE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => cmd_synth(a).map(|_| EXIT_OK),
        Command::Solve(a) => cmd_solve(a).map(|m| match m.outcome {
            RunOutcome::Converged => EXIT_OK,
            RunOutcome::MaxIters => EXIT_MAX_ITERS,
        }),
        Command::Eval(a) => {
            let report = cmd_eval(a)?;
            print!("{}", report.render());
            Ok(EXIT_OK)
        }
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = InstanceSpec {
        strict_a2: a.strict_a2,
        ..InstanceSpec::new(a.rows, a.cols, a.rank, a.p, a.rho, a.seed)
    };
    let (obs, gt) = synth::generate(&spec)?;
    synth::write_instance(&a.out, &spec, &obs, &gt)?;
    log::info!(
        "wrote {}x{} instance with {} observations to {}",
        a.rows,
        a.cols,
        obs.nnz(),
        a.out.display()
    );
    Ok(())
}

/// Summary of a finished `solve`.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub outcome: RunOutcome,
    pub final_tau: f64,
    pub final_rank: usize,
    pub iterations: usize,
    pub entries: KeyValues,
}

fn outcome_name(o: RunOutcome) -> &'static str {
    match o {
        RunOutcome::Converged => "converged",
        RunOutcome::MaxIters => "max_iters",
    }
}

fn solver_config(a: &SolveArgs, obs: &ObservedMatrix, manifest: Option<&KeyValues>) -> Result<SolverConfig> {
    let s = match (a.s, manifest) {
        (Some(s), _) => s,
        (None, Some(kv)) => {
            let rho: f64 = kv.parse_value("rho")?;
            (1.2 * rho * obs.nnz() as f64).ceil() as usize
        }
        (None, None) => return invalid("--s is required when the instance has no manifest"),
    };
    let r0 = match (a.r0, manifest) {
        (Some(r0), _) => r0,
        (None, Some(kv)) => {
            let r: usize = kv.parse_value("r")?;
            (2 * r).min(obs.nrows().min(obs.ncols()))
        }
        (None, None) => return invalid("--r0 is required when the instance has no manifest"),
    };
    let cfg = SolverConfig {
        kappa: a.kappa,
        tol: a.tol,
        max_iters: a.max_iters,
        stagnation_window: a.stagnation_window,
        stagnation_ratio: a.stagnation_ratio,
        stagnation_gap: a.stagnation_gap,
        rank_check_period: a.rank_check_period,
        min_row_obs_factor: a.min_row_obs_factor,
        seed: a.seed,
        subsample_per_row: a.subsample_per_row,
        threads: a.threads,
        outlier_mode: match a.outliers {
            OutlierArg::Global => OutlierMode::GlobalTopS,
            OutlierArg::Rowcol => OutlierMode::RowColIntersect { k: a.rowcol_k },
            OutlierArg::Off => OutlierMode::Disabled,
        },
        outlier_schedule: match a.outlier_schedule {
            ScheduleArg::Stagnation => OutlierSchedule::OnStagnation,
            ScheduleArg::Every => OutlierSchedule::EveryIteration,
        },
        ..SolverConfig::new(s, r0)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| RmcError::io(path, e))
}

pub fn cmd_solve(a: &SolveArgs) -> Result<RunManifest> {
    let obs = read_matrix_market(a.instance.join(synth::OBSERVED_FILE))?;
    let manifest_path = a.instance.join(synth::MANIFEST_FILE);
    let manifest = if manifest_path.exists() {
        Some(KeyValues::read(&manifest_path)?)
    } else {
        None
    };
    let cfg = solver_config(a, &obs, manifest.as_ref())?;
    let result = run(&obs, &cfg)?;
    let state = &result.state;

    fs::create_dir_all(&a.out).map_err(|e| RmcError::io(&a.out, e))?;
    let ms = |d: std::time::Duration| if a.wall_clock { d.as_secs_f64() * 1e3 } else { 0.0 };
    let mut csv = String::from(TRACE_HEADER);
    csv.push('\n');
    for rec in &state.trace {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            rec.iter,
            fmt_f64(rec.tau),
            rec.rank,
            rec.dropped,
            fmt_f64(ms(rec.elapsed))
        ));
    }
    let trace_path = a.out.join(TRACE_FILE);
    write_text(&trace_path, &csv)?;
    let f = result.factors();
    write_dense(a.out.join(X_FILE), &f.x)?;
    write_vector(a.out.join(SIGMA_FILE), &f.sigma)?;
    write_dense(a.out.join(Y_FILE), &f.y)?;
    write_triplets(
        a.out.join(S_FILE),
        obs.nrows(),
        obs.ncols(),
        &result.correction().entries,
    )?;

    let total = state.trace.last().map(|r| r.elapsed).unwrap_or_default();
    let mut kv = KeyValues::default();
    kv.push("instance", a.instance.display());
    kv.push("observed", a.instance.join(synth::OBSERVED_FILE).display());
    kv.push("s", cfg.s);
    kv.push("r0", cfg.r0);
    kv.push("kappa", fmt_f64(cfg.kappa));
    kv.push("tol", fmt_f64(cfg.tol));
    kv.push("max_iters", cfg.max_iters);
    kv.push("stagnation_window", cfg.stagnation_window);
    kv.push("stagnation_ratio", fmt_f64(cfg.stagnation_ratio));
    kv.push("stagnation_gap", fmt_f64(cfg.stagnation_gap));
    kv.push("rank_check_period", cfg.rank_check_period);
    kv.push("min_row_obs_factor", fmt_f64(cfg.min_row_obs_factor));
    kv.push("subsample_per_row", cfg.subsample_per_row);
    kv.push("threads", cfg.threads);
    kv.push("seed", cfg.seed);
    kv.push("outliers", format!("{:?}", cfg.outlier_mode));
    kv.push("outlier_schedule", format!("{:?}", cfg.outlier_schedule));
    kv.push("outcome", outcome_name(result.outcome));
    kv.push("iterations", state.iter);
    kv.push("final_tau", fmt_f64(state.tau));
    kv.push("final_rank", state.rank());
    kv.push("outlier_count", result.correction().len());
    kv.push(
        "drop_events",
        state
            .drop_events
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    kv.push("wall_ms", fmt_f64(ms(total)));
    kv.push("trace", trace_path.display());
    kv.write(a.out.join(RUN_MANIFEST_FILE))?;
    if a.manifest {
        print!("{}", kv.render());
    }
    log::info!(
        "{} after {} iterations: tau = {:.3e}, rank = {}",
        outcome_name(result.outcome),
        state.iter,
        state.tau,
        state.rank()
    );
    Ok(RunManifest {
        outcome: result.outcome,
        final_tau: state.tau,
        final_rank: state.rank(),
        iterations: state.iter,
        entries: kv,
    })
}

fn read_run(dir: &Path) -> Result<(FactorTriple, Vec<Entry>)> {
    let x = read_dense(dir.join(X_FILE))?;
    let sigma = read_vector(dir.join(SIGMA_FILE))?;
    let y = read_dense(dir.join(Y_FILE))?;
    let (_, _, s) = read_triplets(dir.join(S_FILE))?;
    if x.cols() != sigma.len() || y.cols() != sigma.len() {
        return invalid("run factors have inconsistent widths");
    }
    Ok((FactorTriple { x, sigma, y }, s))
}

/// Merges two sorted entry lists into `a − b`, dropping exact zeros.
fn sparse_difference(a: &[Entry], b: &[Entry]) -> Vec<Entry> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len() + b.len());
    while i < a.len() || j < b.len() {
        let ka = a.get(i).map(|e| (e.row, e.col));
        let kb = b.get(j).map(|e| (e.row, e.col));
        let e = match (ka, kb) {
            (Some(x), Some(y)) if x == y => {
                i += 1;
                j += 1;
                Entry::new(x.0, x.1, a[i - 1].value - b[j - 1].value)
            }
            (Some(x), Some(y)) if x < y => {
                i += 1;
                a[i - 1]
            }
            (Some(_), None) => {
                i += 1;
                a[i - 1]
            }
            _ => {
                j += 1;
                Entry::new(b[j - 1].row, b[j - 1].col, -b[j - 1].value)
            }
        };
        if e.value != 0.0 {
            out.push(e);
        }
    }
    out
}

pub fn cmd_eval(a: &EvalArgs) -> Result<KeyValues> {
    let inst = synth::read_instance(&a.instance)?;
    let (factors, mut s_entries) = read_run(&a.run)?;
    s_entries.sort_by_key(|e| (e.row, e.col));
    let obs = &inst.observed;
    let correction = SparseCorrection {
        entries: s_entries,
        strategy_used: OutlierStrategy::GlobalTopS,
    };
    let view = MaskedView::excluding(obs, &correction)?;
    let res = project_residual(&view, &factors.x, &factors.sigma, &factors.y)?;

    let mut kv = KeyValues::default();
    kv.push("rank", factors.rank());
    kv.push("tau", fmt_f64(res.frobenius_norm));
    kv.push(
        "relative_residual",
        fmt_f64(res.frobenius_norm / obs.frobenius_norm()),
    );
    kv.push("outlier_count", correction.len());

    let Some(gt) = inst.truth else {
        eprintln!("warning: ground truth not found in {}; residual-only report", a.instance.display());
        kv.push("warning", "ground truth missing, residual-only report");
        return finish_eval(a, kv);
    };

    let rep = recovery_error(&factors, &gt)?;
    kv.push("true_rank", gt.rank());
    kv.push("rank_mismatch", rep.rank_mismatch);
    kv.push("rel_frobenius", fmt_f64(rep.rel_frobenius));
    kv.push("max_norm", fmt_f64(rep.max_norm));
    kv.push("angle_x", fmt_f64(rep.angle_x.spectral()));
    kv.push("angle_y", fmt_f64(rep.angle_y.spectral()));
    kv.push("theta_x", fmt_f64(rep.angle_x.theta_max));
    kv.push("theta_y", fmt_f64(rep.angle_y.theta_max));

    let diff = sparse_difference(&correction.entries, &gt.s_star.entries);
    let fro = diff.iter().map(|e| e.value * e.value).sum::<f64>().sqrt();
    let sr = if diff.is_empty() {
        f64::NAN
    } else {
        let dm = ObservedMatrix::from_entries(obs.nrows(), obs.ncols(), diff)?;
        let full = MaskedView::full(&dm);
        stable_rank_operator(&MaskedOperator::new(&full, 1.0), fro)?
    };
    kv.push("s_error_frobenius", fmt_f64(fro));
    kv.push("stable_rank_s_error", fmt_f64(sr));

    if gt.l_star.is_some() && gt.s_star_complete && obs.nrows().min(obs.ncols()) <= THEOREM1_DIM_CAP {
        let t = theorem1_check(&gt)?;
        kv.push("theorem1_cond_a_lhs", fmt_f64(t.cond_a_lhs));
        kv.push("theorem1_cond_a_rhs", fmt_f64(t.cond_a_rhs));
        kv.push("theorem1_cond_b_lhs", fmt_f64(t.cond_b_lhs));
        kv.push("theorem1_cond_b_rhs", fmt_f64(t.cond_b_rhs));
        kv.push("theorem1_eta", fmt_f64(t.eta));
        kv.push("theorem1_holds", t.holds);
    }
    finish_eval(a, kv)
}

fn finish_eval(a: &EvalArgs, kv: KeyValues) -> Result<KeyValues> {
    if let Some(path) = &a.csv {
        let header: Vec<&str> = kv.0.iter().map(|(k, _)| k.as_str()).collect();
        let values: Vec<&str> = kv.0.iter().map(|(_, v)| v.as_str()).collect();
        let text = format!("{}\n{}\n", header.join(","), values.join(","));
        write_text(path, &text)?;
    }
    Ok(kv)
}

/// Dense view of a run's model, for small problems and tests.
pub fn run_model_dense(dir: &Path) -> Result<Matrix> {
    let (f, _) = read_run(dir)?;
    f.x.scale_columns(&f.sigma).matmul_t(&f.y)
}
