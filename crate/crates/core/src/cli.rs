//! `bregaccel` command-line front end.
//!
//! Exit codes: 0 converged, 1 usage or input error, 2 iteration cap reached,
//! 3 numerical failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;

use crate::admm::{admm_solve_stacked, AdmmConfig};
use crate::driver::{solve, Mode, Safeguard, SolveReport, SolverConfig, Termination};
use crate::error::Error;
use crate::io::{self, PortfolioMeta, ProblemFile};
use crate::model::{stack, ConstrainedL1Problem, StackedProblem};
use crate::portfolio::{self, CovDivisor, MomentOptions, PortfolioMetrics, DEFAULT_EPS};
use crate::synth::{self, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable capping the worker threads used by `compare`.
pub const THREADS_ENV: &str = "BREGACCEL_THREADS";

const DEFAULT_WINDOW: usize = 60;
const DEFAULT_STRIDE: usize = 12;
const DEFAULT_TAU: f64 = 1e-2;

#[derive(Parser, Debug)]
#[command(name = "bregaccel", version, about = "Split Bregman solvers for fused-lasso constrained problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem with one solver and write a report.
    Solve(SolveArgs),
    /// Run all four solvers on the same problem and print a comparison table.
    Compare(CompareArgs),
    /// Write a seeded random portfolio problem file.
    Synth(SynthArgs),
    /// Portfolio metrics of a stored solution.
    Metrics(MetricsArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Sbsa,
    #[value(name = "sbsa_lsa", alias = "sbsa-lsa")]
    SbsaLsa,
    Sb,
    Admm,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [SolverKind::Sbsa, SolverKind::SbsaLsa, SolverKind::Sb, SolverKind::Admm];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Sbsa => "sbsa",
            SolverKind::SbsaLsa => "sbsa_lsa",
            SolverKind::Sb => "sb",
            SolverKind::Admm => "admm",
        }
    }
}

impl FromStr for SolverKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SafeguardArg {
    Heuristic,
    Strict,
}

impl FromStr for SafeguardArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum DivisorArg {
    Unbiased,
    Window,
}

impl FromStr for DivisorArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        <Self as ValueEnum>::from_str(s, true)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum TableFormat {
    Text,
    Csv,
}

#[derive(Args, Debug, Default)]
struct InputArgs {
    /// Returns CSV (`date,ASSET1,ASSET2,...`).
    #[arg(long, conflicts_with = "problem")]
    data: Option<PathBuf>,
    /// Problem file written by `synth` or by a previous run.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Flat `key=value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Returns in the CSV are percentages.
    #[arg(long)]
    percent: bool,
    /// Number of rebalancing dates (default: as many as the data allows).
    #[arg(long)]
    years: Option<usize>,
    /// Estimation window in data periods.
    #[arg(long)]
    window: Option<usize>,
    /// Data periods between rebalancing dates.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum)]
    cov_divisor: Option<DivisorArg>,
    /// Add this multiple of the identity to every covariance block.
    #[arg(long)]
    ridge: Option<f64>,
    /// Drop the k assets with the largest full-sample volatility.
    #[arg(long)]
    drop_volatile: Option<usize>,
    #[arg(long)]
    xi_ini: Option<f64>,
    #[arg(long)]
    tau1: Option<f64>,
    #[arg(long)]
    tau2: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct SolverArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tol_b: Option<f64>,
    #[arg(long)]
    tol_f: Option<f64>,
    #[arg(long)]
    tol_cg: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
    /// FISTA iteration cap per subproblem.
    #[arg(long)]
    max_inner: Option<usize>,
    #[arg(long)]
    admm_max_iters: Option<usize>,
    #[arg(long)]
    warmstart: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long, value_enum)]
    safeguard: Option<SafeguardArg>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum)]
    mode: Option<SolverKind>,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
    /// Report destination (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the per-iteration violation trace as CSV.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Write the final `u`, one value per line.
    #[arg(long)]
    solution: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum, default_value = "text")]
    format: TableFormat,
    /// Table destination (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write the table as CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    assets: usize,
    #[arg(long, default_value_t = 3)]
    periods: usize,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau1: f64,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    tau2: f64,
    #[arg(long, default_value_t = 1e-4)]
    eig_min: f64,
    #[arg(long, default_value_t = 1e-1)]
    eig_max: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    ret_low: f64,
    #[arg(long, default_value_t = 0.02, allow_negative_numbers = true)]
    ret_high: f64,
    #[arg(long, default_value_t = 1.0)]
    xi_ini: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Problem file with portfolio data.
    #[arg(long)]
    problem: PathBuf,
    /// Holdings `u` (or a stacked `[u; d]`), one value per line.
    #[arg(long)]
    solution: PathBuf,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long, value_enum, default_value = "text")]
    format: ReportFormat,
}

/// A message plus the exit code it maps to.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: EXIT_INPUT,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_INPUT,
        msg: msg.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Metrics(a) => cmd_metrics(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            eprintln!("bregaccel: {}", f.msg);
            f.code
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "mode",
    "tau1",
    "tau2",
    "lambda",
    "tol_b",
    "tol_f",
    "tol_cg",
    "max_outer",
    "max_inner",
    "admm_max_iters",
    "warmstart",
    "eta",
    "gamma0",
    "safeguard",
    "eps1",
    "eps2",
    "window",
    "stride",
    "years",
    "cov_divisor",
    "ridge",
    "drop_volatile",
    "xi_ini",
    "percent",
];

/// Flat `key=value` settings; `#` starts a comment, keys accept `-` or `_`.
#[derive(Debug, Default)]
struct ConfigFile {
    path: String,
    entries: HashMap<String, (String, usize)>,
}

impl ConfigFile {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn parse(text: &str, source: &str) -> CliResult<Self> {
        let mut entries = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(usage(format!("{source}:{}: expected key=value", i + 1)));
            };
            let key = k.trim().to_ascii_lowercase().replace('-', "_");
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(usage(format!("{source}:{}: unknown key {key:?}", i + 1)));
            }
            entries.insert(key, (v.trim().to_string(), i + 1));
        }
        Ok(Self {
            path: source.to_string(),
            entries,
        })
    }

    /// The flag if given, else the file value, else `None`.
    fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("{}:{line}: invalid value {v:?} for {key}: {e}", self.path))),
        }
    }

    fn flag(&self, flag: bool, key: &str) -> CliResult<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}

/// Everything the solver commands need after input resolution.
struct Loaded {
    problem: ConstrainedL1Problem,
    portfolio: Option<PortfolioContext>,
}

struct PortfolioContext {
    n_assets: usize,
    u_naive: DVector<f64>,
}

fn portfolio_context(meta: &PortfolioMeta) -> PortfolioContext {
    let naive = portfolio::naive_wealth(&meta.return_vectors(), meta.n_assets, meta.xi_ini);
    PortfolioContext {
        n_assets: meta.n_assets,
        u_naive: naive.u,
    }
}

fn load_input(input: &InputArgs, cfg: &ConfigFile) -> CliResult<Loaded> {
    let tau1 = cfg.pick(input.tau1, "tau1")?;
    let tau2 = cfg.pick(input.tau2, "tau2")?;
    match (&input.data, &input.problem) {
        (Some(data), None) => {
            let mut panel = io::read_returns_csv(data, cfg.flag(input.percent, "percent")?)?;
            if let Some(k) = cfg.pick(input.drop_volatile, "drop_volatile")? {
                if k > 0 {
                    panel = panel.drop_most_volatile(k)?;
                }
            }
            let window = cfg.pick(input.window, "window")?.unwrap_or(DEFAULT_WINDOW);
            let stride = cfg.pick(input.stride, "stride")?.unwrap_or(DEFAULT_STRIDE);
            let m = match cfg.pick(input.years, "years")? {
                Some(m) => m,
                None if panel.n_periods() >= window && stride > 0 => (panel.n_periods() - window) / stride + 1,
                None => {
                    return Err(usage(format!(
                        "{}: {} periods are fewer than the window of {window}",
                        data.display(),
                        panel.n_periods()
                    )))
                }
            };
            let divisor = match cfg.pick(input.cov_divisor, "cov_divisor")? {
                Some(DivisorArg::Window) => CovDivisor::Window,
                _ => CovDivisor::Unbiased,
            };
            let moments = portfolio::estimate_moments(
                &panel,
                &MomentOptions {
                    window,
                    stride,
                    m,
                    divisor,
                    ridge: cfg.pick(input.ridge, "ridge")?,
                },
            )?;
            let xi_ini = cfg.pick(input.xi_ini, "xi_ini")?.unwrap_or(1.0);
            let n_a = panel.n_assets();
            let naive = portfolio::naive_wealth(&moments.r, n_a, xi_ini);
            let model = portfolio::build_model(
                &moments.c_blocks,
                &moments.r,
                xi_ini,
                naive.xi_naive,
                tau1.unwrap_or(DEFAULT_TAU),
                tau2.unwrap_or(DEFAULT_TAU),
            )?;
            Ok(Loaded {
                problem: model.problem,
                portfolio: Some(PortfolioContext {
                    n_assets: n_a,
                    u_naive: naive.u,
                }),
            })
        }
        (None, Some(path)) => {
            let file = io::read_problem_file(path)?;
            let mut problem = file.to_problem()?;
            if tau1.is_some() || tau2.is_some() {
                problem = problem.with_weights(tau1.unwrap_or(problem.tau1()), tau2.unwrap_or(problem.tau2()))?;
            }
            Ok(Loaded {
                portfolio: file.portfolio.as_ref().map(portfolio_context),
                problem,
            })
        }
        (None, None) => Err(usage("one of --data or --problem is required")),
        (Some(_), Some(_)) => Err(usage("--data and --problem are mutually exclusive")),
    }
}

struct Settings {
    solver: SolverConfig,
    admm: AdmmConfig,
    eps1: f64,
    eps2: f64,
}

fn resolve_settings(a: &SolverArgs, cfg: &ConfigFile, record_trace: bool) -> CliResult<Settings> {
    let mut s = SolverConfig::default();
    if let Some(v) = cfg.pick(a.lambda, "lambda")? {
        s.lambda = v;
    }
    if let Some(v) = cfg.pick(a.tol_b, "tol_b")? {
        s.tol_b = v;
    }
    if let Some(v) = cfg.pick(a.tol_f, "tol_f")? {
        s.fista.tol_f = v;
    }
    if let Some(v) = cfg.pick(a.tol_cg, "tol_cg")? {
        s.tol_cg = v;
    }
    if let Some(v) = cfg.pick(a.max_outer, "max_outer")? {
        s.max_outer = v;
    }
    if let Some(v) = cfg.pick(a.max_inner, "max_inner")? {
        s.fista.max_iters = v;
    }
    if let Some(v) = cfg.pick(a.warmstart, "warmstart")? {
        s.warmstart_iters = v;
    }
    if let Some(v) = cfg.pick(a.eta, "eta")? {
        s.eta = v;
    }
    if let Some(v) = cfg.pick(a.gamma0, "gamma0")? {
        s.gamma0 = v;
    }
    if let Some(v) = cfg.pick(a.safeguard, "safeguard")? {
        s.safeguard = match v {
            SafeguardArg::Heuristic => Safeguard::HeuristicAccept,
            SafeguardArg::Strict => Safeguard::StrictReject,
        };
    }
    s.record_trace = record_trace;
    s.validate()?;
    let mut admm = AdmmConfig::from_solver(&s);
    if let Some(v) = cfg.pick(a.admm_max_iters, "admm_max_iters")? {
        admm.max_iters = v;
    }
    admm.validate()?;
    let eps1 = cfg.pick(a.eps1, "eps1")?.unwrap_or(DEFAULT_EPS);
    let eps2 = cfg.pick(a.eps2, "eps2")?.unwrap_or(DEFAULT_EPS);
    if !(eps1 > 0.0 && eps2 > 0.0) {
        return Err(usage(format!("eps1 and eps2 must be positive (got {eps1}, {eps2})")));
    }
    Ok(Settings {
        solver: s,
        admm,
        eps1,
        eps2,
    })
}

/// Runs one solver on a prepared stacked problem.
pub fn run_solver(
    kind: SolverKind,
    sp: &StackedProblem,
    cfg: &SolverConfig,
    admm: &AdmmConfig,
) -> crate::error::Result<SolveReport> {
    let mode = match kind {
        SolverKind::Sbsa => Mode::Sbsa,
        SolverKind::SbsaLsa => Mode::SbsaLsa,
        SolverKind::Sb => Mode::Sb,
        SolverKind::Admm => return admm_solve_stacked(sp, admm),
    };
    solve(
        sp,
        &SolverConfig {
            mode,
            ..cfg.clone()
        },
    )
}

fn exit_code(t: Termination) -> i32 {
    match t {
        Termination::Converged => EXIT_OK,
        Termination::MaxOuter => EXIT_NOT_CONVERGED,
        Termination::NumericalError => EXIT_NUMERICAL,
    }
}

fn metrics_for(loaded: &Loaded, u: &DVector<f64>, eps1: f64, eps2: f64) -> CliResult<Option<PortfolioMetrics>> {
    let Some(ctx) = &loaded.portfolio else {
        return Ok(None);
    };
    Ok(Some(portfolio::compute_metrics(
        u,
        &ctx.u_naive,
        loaded.problem.c(),
        ctx.n_assets,
        eps1,
        eps2,
    )?))
}

fn emit(output: Option<&Path>, text: &str) -> CliResult<()> {
    match output {
        Some(p) => fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn push_metric_lines(out: &mut String, prefix: &str, m: &portfolio::MetricSet) {
    let _ = writeln!(out, "{prefix}ratio={}", m.ratio);
    let _ = writeln!(out, "{prefix}density_pct={}", m.density_pct);
    let _ = writeln!(out, "{prefix}shorts={}", m.shorts);
    let _ = writeln!(out, "{prefix}t_cost={}", m.t_cost);
    let _ = writeln!(out, "{prefix}v_norm1={}", m.v_norm1);
    let _ = writeln!(out, "{prefix}v_norm_inf={}", m.v_norm_inf);
}

fn text_report(kind: SolverKind, problem: &ConstrainedL1Problem, r: &SolveReport, metrics: Option<&PortfolioMetrics>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "solver={}", kind.name());
    let _ = writeln!(out, "solver_description={}", r.solver);
    let _ = writeln!(out, "n={}", problem.n());
    let _ = writeln!(out, "q={}", problem.q());
    let _ = writeln!(out, "constraints={}", problem.m());
    let _ = writeln!(out, "termination={}", r.termination.name());
    let _ = writeln!(out, "outer_iters={}", r.outer_iters);
    let _ = writeln!(out, "accel_steps_taken={}", r.accel_steps_taken);
    let _ = writeln!(out, "accel_steps_rejected={}", r.accel_steps_rejected);
    let _ = writeln!(out, "inner_fista={}", r.inner.fista);
    let _ = writeln!(out, "inner_cg={}", r.inner.cg);
    let _ = writeln!(out, "violation_a={:e}", r.violation_a);
    let _ = writeln!(out, "violation_d={:e}", r.violation_d);
    let _ = writeln!(out, "objective={:e}", r.objective);
    let _ = writeln!(out, "wall_time={:.6}", r.wall_time);
    if let Some(m) = metrics {
        push_metric_lines(&mut out, "", &m.thresholded);
        push_metric_lines(&mut out, "raw_", &m.raw);
    }
    out
}

#[derive(Serialize)]
struct JsonReport<'a> {
    solver: SolverKind,
    n: usize,
    q: usize,
    constraints: usize,
    report: &'a SolveReport,
    metrics: Option<&'a PortfolioMetrics>,
}

fn cmd_solve(a: &SolveArgs) -> CliResult<i32> {
    let cfg = ConfigFile::load(a.input.config.as_deref())?;
    let loaded = load_input(&a.input, &cfg)?;
    let settings = resolve_settings(&a.solver, &cfg, a.plot.is_some())?;
    let kind = cfg.pick(a.mode, "mode")?.unwrap_or(SolverKind::Sbsa);
    let sp = stack(&loaded.problem)?;
    let report = run_solver(kind, &sp, &settings.solver, &settings.admm)?;
    let u = report.u(loaded.problem.n());
    let metrics = metrics_for(&loaded, &u, settings.eps1, settings.eps2)?;

    let text = match a.format {
        ReportFormat::Text => text_report(kind, &loaded.problem, &report, metrics.as_ref()),
        ReportFormat::Json => {
            let doc = JsonReport {
                solver: kind,
                n: loaded.problem.n(),
                q: loaded.problem.q(),
                constraints: loaded.problem.m(),
                report: &report,
                metrics: metrics.as_ref(),
            };
            let mut s = serde_json::to_string_pretty(&doc).map_err(|e| usage(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    emit(a.output.as_deref(), &text)?;
    if let Some(path) = &a.plot {
        let mut buf = Vec::new();
        io::write_trace_csv(&mut buf, report.trace.as_deref().unwrap_or(&[])).map_err(|e| usage(e.to_string()))?;
        fs::write(path, buf).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(path) = &a.solution {
        io::write_vector(path, u.as_slice())?;
    }
    Ok(exit_code(report.termination))
}

/// Worker threads for `compare`: `BREGACCEL_THREADS` if set, else the
/// available parallelism, never more than the number of solvers.
fn compare_threads() -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let requested = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok());
    requested.unwrap_or(available).clamp(1, SolverKind::ALL.len())
}

struct Row {
    kind: SolverKind,
    outcome: Result<(SolveReport, Option<PortfolioMetrics>), String>,
}

const FAILED: &str = "---";

fn table_cells(row: &Row, with_metrics: bool) -> Vec<String> {
    let mut cells = vec![row.kind.name().to_string()];
    let n_rest = if with_metrics { 9 } else { 3 };
    match &row.outcome {
        Ok((r, m)) if r.termination == Termination::Converged => {
            cells.push(format!("{:.3}", r.wall_time));
            cells.push(r.outer_iters.to_string());
            cells.push(format!("{:.10e}", r.objective));
            if let Some(m) = m.as_ref().filter(|_| with_metrics) {
                let (t, w) = (&m.thresholded, &m.raw);
                cells.push(format!("{:.6}", t.ratio));
                cells.push(format!("{:.2} ({:.2})", t.density_pct, w.density_pct));
                cells.push(format!("{} ({})", t.shorts, w.shorts));
                cells.push(format!("{} ({})", t.t_cost, w.t_cost));
                cells.push(format!("{} ({})", t.v_norm1, w.v_norm1));
                cells.push(format!("{} ({})", t.v_norm_inf, w.v_norm_inf));
            }
        }
        _ => cells.extend(std::iter::repeat_n(FAILED.to_string(), n_rest)),
    }
    cells
}

fn csv_cells(row: &Row, with_metrics: bool) -> Vec<String> {
    let mut cells = vec![row.kind.name().to_string()];
    match &row.outcome {
        Ok((r, m)) => {
            cells.push(r.termination.name().to_string());
            cells.push(format!("{:.6}", r.wall_time));
            cells.push(r.outer_iters.to_string());
            cells.push(format!("{:.10e}", r.objective));
            if with_metrics {
                match m {
                    Some(m) => {
                        for s in [&m.thresholded, &m.raw] {
                            cells.push(format!("{:.6}", s.ratio));
                            cells.push(format!("{:.4}", s.density_pct));
                            cells.push(s.shorts.to_string());
                            cells.push(s.t_cost.to_string());
                            cells.push(s.v_norm1.to_string());
                            cells.push(s.v_norm_inf.to_string());
                        }
                    }
                    None => cells.extend(std::iter::repeat_n(String::new(), 12)),
                }
            }
        }
        Err(_) => {
            cells.push("error".into());
            cells.extend(std::iter::repeat_n(FAILED.to_string(), if with_metrics { 15 } else { 3 }));
        }
    }
    cells
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn csv_text(rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        let _ = w.write_record(r);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

fn cmd_compare(a: &CompareArgs) -> CliResult<i32> {
    let cfg = ConfigFile::load(a.input.config.as_deref())?;
    let loaded = load_input(&a.input, &cfg)?;
    let settings = resolve_settings(&a.solver, &cfg, false)?;
    let sp = stack(&loaded.problem)?;

    let slots: Mutex<Vec<Option<Row>>> = Mutex::new((0..SolverKind::ALL.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..compare_threads() {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&kind) = SolverKind::ALL.get(i) else { break };
                let outcome = run_solver(kind, &sp, &settings.solver, &settings.admm)
                    .map_err(|e| e.to_string())
                    .and_then(|r| {
                        let u = r.u(loaded.problem.n());
                        let m = metrics_for(&loaded, &u, settings.eps1, settings.eps2).map_err(|f| f.msg)?;
                        Ok((r, m))
                    });
                slots.lock().expect("result slots")[i] = Some(Row { kind, outcome });
            });
        }
    });
    let rows: Vec<Row> = slots.into_inner().expect("result slots").into_iter().flatten().collect();

    let with_metrics = loaded.portfolio.is_some();
    let mut header: Vec<String> = ["solver", "time_s", "outer", "objective"].map(String::from).to_vec();
    if with_metrics {
        header.extend(["ratio", "density", "shorts", "T", "V_1", "V_inf"].map(String::from));
    }
    let mut table = vec![header];
    table.extend(rows.iter().map(|r| table_cells(r, with_metrics)));

    let mut csv_header: Vec<String> = ["solver", "termination", "time_s", "outer", "objective"].map(String::from).to_vec();
    if with_metrics {
        for p in ["", "raw_"] {
            for k in ["ratio", "density_pct", "shorts", "t_cost", "v_norm1", "v_norm_inf"] {
                csv_header.push(format!("{p}{k}"));
            }
        }
    }
    let mut csv_rows = vec![csv_header];
    csv_rows.extend(rows.iter().map(|r| csv_cells(r, with_metrics)));

    for r in &rows {
        if let Err(msg) = &r.outcome {
            eprintln!("bregaccel: {} failed: {msg}", r.kind.name());
        }
    }
    let text = match a.format {
        TableFormat::Text => aligned(&table),
        TableFormat::Csv => csv_text(&csv_rows),
    };
    emit(a.output.as_deref(), &text)?;
    if let Some(p) = &a.csv {
        fs::write(p, csv_text(&csv_rows)).map_err(|e| usage(format!("{}: {e}", p.display())))?;
    }

    let worst = rows
        .iter()
        .map(|r| match &r.outcome {
            Ok((rep, _)) => exit_code(rep.termination),
            Err(_) => EXIT_NUMERICAL,
        })
        .max()
        .unwrap_or(EXIT_OK);
    Ok(worst)
}

fn cmd_synth(a: &SynthArgs) -> CliResult<i32> {
    let inst = synth::generate(&SynthConfig {
        seed: a.seed,
        n_assets: a.assets,
        periods: a.periods,
        eig_min: a.eig_min,
        eig_max: a.eig_max,
        ret_low: a.ret_low,
        ret_high: a.ret_high,
        xi_ini: a.xi_ini,
        tau1: a.tau1,
        tau2: a.tau2,
    })?;
    let model = &inst.model;
    let meta = PortfolioMeta {
        n_assets: model.n_assets(),
        periods: model.periods(),
        returns: model.r.iter().map(|r| r.as_slice().to_vec()).collect(),
        xi_ini: model.xi_ini,
        xi_fin: model.xi_fin,
    };
    io::write_problem_file(&a.output, &ProblemFile::new(&model.problem, Some(meta)))?;
    let p = &model.problem;
    println!("wrote {} (n={}, q={}, constraints={})", a.output.display(), p.n(), p.q(), p.m());
    Ok(EXIT_OK)
}

fn cmd_metrics(a: &MetricsArgs) -> CliResult<i32> {
    let file = io::read_problem_file(&a.problem)?;
    let problem = file.to_problem()?;
    let Some(meta) = &file.portfolio else {
        return Err(usage(format!("{}: no portfolio data in problem file", a.problem.display())));
    };
    let v = io::read_vector(&a.solution)?;
    let n = problem.n();
    if v.len() != n && v.len() != n + problem.q() {
        return Err(usage(format!(
            "{}: expected {n} or {} values, found {}",
            a.solution.display(),
            n + problem.q(),
            v.len()
        )));
    }
    let u = v.rows(0, n).into_owned();
    let ctx = portfolio_context(meta);
    let eps1 = a.eps1.unwrap_or(DEFAULT_EPS);
    let eps2 = a.eps2.unwrap_or(DEFAULT_EPS);
    let m = portfolio::compute_metrics(&u, &ctx.u_naive, problem.c(), ctx.n_assets, eps1, eps2)?;
    let text = match a.format {
        ReportFormat::Text => {
            let mut out = String::new();
            let _ = writeln!(out, "objective={:e}", problem.objective(&u));
            let _ = writeln!(out, "violation_a={:e}", (problem.a() * &u - problem.b()).norm());
            push_metric_lines(&mut out, "", &m.thresholded);
            push_metric_lines(&mut out, "raw_", &m.raw);
            out
        }
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&m).map_err(|e| usage(e.to_string()))?;
            s.push('\n');
            s
        }
    };
    print!("{text}");
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let c = ConfigFile::parse("# comment\ntol-b = 1e-6\nmode=sb # trailing\n\n", "cfg").unwrap();
        assert_eq!(c.pick::<f64>(None, "tol_b").unwrap(), Some(1e-6));
        assert_eq!(c.pick::<f64>(Some(2.0), "tol_b").unwrap(), Some(2.0));
        assert_eq!(c.pick::<SolverKind>(None, "mode").unwrap(), Some(SolverKind::Sb));
        assert!(ConfigFile::parse("bogus=1\n", "cfg").is_err());
        assert!(ConfigFile::parse("tol_b\n", "cfg").is_err());
        let bad = ConfigFile::parse("eta=abc\n", "cfg").unwrap();
        let err = bad.pick::<f64>(None, "eta").unwrap_err();
        assert!(err.msg.contains("cfg:1"));
    }

    #[test]
    fn solver_names_parse() {
        for k in SolverKind::ALL {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
        }
    }

    #[test]
    fn alignment_pads_columns() {
        let t = aligned(&[vec!["a".into(), "1".into()], vec!["long".into(), "22".into()]]);
        assert_eq!(t, "a      1\nlong  22\n");
    }
}
