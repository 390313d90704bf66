//! The `dwl` command line: `converge`, `decay`, `eig`, `modal` and `steady`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure or (with
//! `--strict`) a violated check.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{ConvergenceTable, Verdict};
use crate::error::{Error, Result};
use crate::fdm::fd_mode_eigenvalue;
use crate::harness::{
    parse_domain, parse_levels, parse_real, run_convergence, run_decay, run_modal, run_steady, write_rows_csv,
    write_table, write_table_csv, write_trace_csv, DecayOptions, ExperimentConfig, KRule, LambdaSource,
};
use crate::sparse::STEP_RTOL;
use crate::stepper::{BackendHandles, BackendKind, InitMode};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dwl", version, about = "Strongly damped wave equation laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Refinement study: errors and rates at the final time.
    Converge(ExperimentArgs),
    /// Energy trace, fitted decay rate and decay-inequality checks.
    Decay(DecayArgs),
    /// Smallest eigenvalue of the discrete Laplacian pencil.
    Eig(EigArgs),
    /// Finite difference stepper against the per-mode scalar recurrence.
    Modal(ModalArgs),
    /// Decay towards the discrete steady state of a forced problem.
    Steady(SteadyArgs),
}

/// Experiment selection shared by the study commands; flags override the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// Built-in experiment: ex1, ex2, ex3i, ex3ii, tv, sv, forced.
    #[arg(long)]
    pub experiment: Option<String>,
    /// key = value experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// fem or fd.
    #[arg(long)]
    pub backend: Option<String>,
    /// Cells per side, comma separated for refinement studies.
    #[arg(long = "N", value_name = "N")]
    pub n: Option<String>,
    /// Time-step rule: 2/n2, 2h2, h or a number.
    #[arg(long)]
    pub k: Option<String>,
    /// Final time.
    #[arg(long = "T", value_name = "T")]
    pub t: Option<String>,
    /// unit, pi or x0,x1,y0,y1.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    /// Start mode: exact or taylor.
    #[arg(long)]
    pub mode: Option<String>,
    /// CSV output path; the CSV goes to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Exit with code 2 when a check is violated.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// δ for the extended energy and the decay bound.
    #[arg(long)]
    pub delta: Option<String>,
    /// λ₁ for the bounds: discrete or continuous.
    #[arg(long, default_value = "discrete")]
    pub lambda: String,
    /// Fit window `t0,t1`.
    #[arg(long)]
    pub window: Option<String>,
    /// Also record E_A.
    #[arg(long)]
    pub energy_a: bool,
}

#[derive(Debug, Args)]
pub struct EigArgs {
    #[arg(long, default_value = "fem")]
    pub backend: String,
    #[arg(long = "N", value_name = "N", default_value = "32")]
    pub n: String,
    #[arg(long, default_value = "unit")]
    pub domain: String,
    #[arg(long, default_value = "1e-10")]
    pub tol: String,
}

#[derive(Debug, Args)]
pub struct ModalArgs {
    /// Grid cells per side.
    #[arg(long = "N", value_name = "N", default_value = "16")]
    pub n: String,
    #[arg(long, default_value = "unit")]
    pub domain: String,
    /// Modes `p,q[,amplitude]`, separated by `;`.
    #[arg(long, default_value = "1,1")]
    pub modes: String,
    #[arg(long, default_value = "pi")]
    pub alpha: String,
    #[arg(long, default_value = "1/pi")]
    pub beta: String,
    /// Time step; defaults to 2/N².
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long, default_value = "500")]
    pub steps: String,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Exit with code 2 when the relative deviation exceeds 1e-8.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SteadyArgs {
    #[command(flatten)]
    pub exp: ExperimentArgs,
    /// Relative tolerance of the step solves.
    #[arg(long)]
    pub rtol: Option<String>,
}

/// Runs the command line on `args` (including the program name).
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match dispatch(&cli.command, out) {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            let _ = writeln!(err, "error: check violated (--strict)");
            EXIT_NUMERICAL
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

/// Returns `Ok(false)` when `--strict` found a violation.
fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<bool> {
    match cmd {
        Command::Converge(a) => converge(a, out),
        Command::Decay(a) => decay(a, out),
        Command::Eig(a) => eig(a, out),
        Command::Modal(a) => modal(a, out),
        Command::Steady(a) => steady(a, out),
    }
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        let flags = ExperimentConfig {
            experiment: self.experiment.clone(),
            domain: self.domain.as_deref().map(parse_domain).transpose()?,
            alpha: self.alpha.as_deref().map(parse_real).transpose()?,
            beta: self.beta.as_deref().map(parse_real).transpose()?,
            levels: self.n.as_deref().map(parse_levels).transpose()?,
            t_final: self.t.as_deref().map(parse_real).transpose()?,
            k_rule: self.k.as_deref().map(str::parse::<KRule>).transpose()?,
            backend: self.backend.as_deref().map(str::parse::<BackendKind>).transpose()?,
            mode: self.mode.as_deref().map(str::parse::<InitMode>).transpose()?,
            delta: None,
        };
        Ok(base.merged(flags))
    }
}

fn single_level(levels: &[usize]) -> Result<usize> {
    match levels {
        [n] => Ok(*n),
        _ => Err(Error::invalid(format!("expected a single N, got {levels:?}"))),
    }
}

fn verdict_line(out: &mut dyn Write, name: &str, v: &Verdict) -> Result<()> {
    let text = match v {
        Verdict::Holds => format!("{:<32} PASS", name),
        Verdict::Violated { step, t, detail } => format!("{:<32} FAIL at step {step}, t = {t:.6}: {detail}", name),
        Verdict::NotApplicable(why) => format!("{:<32} N/A ({why})", name),
    };
    writeln!(out, "{text}").map_err(io_err)
}

fn print_table(out: &mut dyn Write, t: &ConvergenceTable) -> Result<()> {
    let rate = |r: Option<f64>| r.map_or("-".to_string(), |v| format!("{v:.4}"));
    writeln!(
        out,
        "{:>4}  {:>12} {:>7}  {:>12} {:>7}  {:>12} {:>7}",
        "N", "L2", "rate", "Linf", "rate", "H1", "rate"
    )
    .map_err(io_err)?;
    for r in &t.rows {
        writeln!(
            out,
            "{:>4}  {:>12.4e} {:>7}  {:>12.4e} {:>7}  {:>12.4e} {:>7}",
            r.n,
            r.l2,
            rate(r.rate_l2),
            r.linf,
            rate(r.rate_linf),
            r.h1,
            rate(r.rate_h1)
        )
        .map_err(io_err)?;
    }
    Ok(())
}

fn converge(a: &ExperimentArgs, out: &mut dyn Write) -> Result<bool> {
    let exp = a.config()?.build()?;
    let table = run_convergence(&exp)?;
    match &a.output {
        Some(path) => {
            write_table_csv(&table, path)?;
            writeln!(
                out,
                "experiment {} ({}), backend {}, k = {}, T = {}",
                exp.name, exp.description, exp.backend, exp.k_rule, exp.t_final
            )
            .map_err(io_err)?;
            print_table(out, &table)?;
        }
        None => write_table(&table, &mut *out).map_err(|e| Error::invalid(format!("csv error: {e}")))?,
    }
    Ok(true)
}

fn decay(a: &DecayArgs, out: &mut dyn Write) -> Result<bool> {
    let cfg = a.exp.config()?;
    let exp = cfg.build()?;
    let n = match &cfg.levels {
        Some(l) => single_level(l)?,
        None => 32,
    };
    let window = match &a.window {
        Some(w) => {
            let v: Vec<f64> = w.split(',').map(parse_real).collect::<Result<_>>()?;
            match v.as_slice() {
                [t0, t1] if t0 < t1 => Some((*t0, *t1)),
                _ => return Err(Error::invalid(format!("bad window '{w}' (expected t0,t1 with t0 < t1)"))),
            }
        }
        None => None,
    };
    let opts = DecayOptions {
        k: None,
        t_final: None,
        delta: a.delta.as_deref().map(parse_real).transpose()?.or(cfg.delta),
        lambda: a.lambda.parse::<LambdaSource>()?,
        window,
        energy_a: a.energy_a,
    };
    let r = run_decay(&exp, n, &opts)?;
    writeln!(out, "experiment {} ({}), backend {}, N = {n}", exp.name, exp.description, exp.backend).map_err(io_err)?;
    writeln!(out, "k = {:.6e}, T = {}, steps = {}", r.trace.meta.k, exp.t_final, r.trace.rows.len() - 1).map_err(io_err)?;
    writeln!(out, "lambda1 = {:.10e} ({:?})", r.lambda1, opts.lambda).map_err(io_err)?;
    if let Some((c, d)) = r.bounds {
        writeln!(out, "delta_cont = {c:.6e}, delta_disc = {d:.6e}").map_err(io_err)?;
    }
    if let Some(d) = r.delta {
        writeln!(out, "delta used = {d:.6e}, delta*k = {:.6e}", d * r.trace.meta.k).map_err(io_err)?;
    }
    match &r.fit {
        Ok(f) => writeln!(
            out,
            "fit on [{}, {}]: slope = {:.6e}, delta_fit = {:.6e} ({} samples)",
            r.window.0, r.window.1, f.slope, f.delta, f.samples
        ),
        Err(e) => writeln!(out, "fit on [{}, {}]: unavailable ({e})", r.window.0, r.window.1),
    }
    .map_err(io_err)?;
    for (name, v) in r.verdicts() {
        verdict_line(out, name, v)?;
    }
    if let Some(path) = &a.exp.output {
        write_trace_csv(&r.trace, path)?;
    }
    Ok(!a.exp.strict || r.all_hold())
}

fn eig(a: &EigArgs, out: &mut dyn Write) -> Result<bool> {
    let backend: BackendKind = a.backend.parse()?;
    let n = single_level(&parse_levels(&a.n)?)?;
    let rect = parse_domain(&a.domain)?;
    let tol = parse_real(&a.tol)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let b = BackendHandles::build(backend, rect, n)?;
    let lam = b.lambda1(tol)?;
    writeln!(out, "backend {backend}, N = {n}, h = {:.6e}, dofs = {}", b.h(), b.dofs()).map_err(io_err)?;
    writeln!(out, "lambda1_h = {lam:.10e}").map_err(io_err)?;
    let exact = rect.lambda1();
    writeln!(out, "lambda1 (continuous) = {exact:.10e}, relative difference {:.3e}", (lam - exact) / exact).map_err(io_err)?;
    if backend == BackendKind::Fd {
        let closed = fd_mode_eigenvalue(b.h(), rect.width(), 1, 1);
        writeln!(out, "lambda1 (5-point closed form) = {closed:.10e}, relative difference {:.3e}", (lam - closed) / closed)
            .map_err(io_err)?;
    }
    Ok(true)
}

fn parse_modes(s: &str) -> Result<Vec<(usize, usize, f64)>> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let f: Vec<&str> = p.split(',').map(str::trim).collect();
            let idx = |v: &str| {
                v.parse::<usize>()
                    .ok()
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| Error::invalid(format!("bad mode index '{v}'")))
            };
            match f.as_slice() {
                [p, q] => Ok((idx(p)?, idx(q)?, 1.0)),
                [p, q, a] => Ok((idx(p)?, idx(q)?, parse_real(a)?)),
                _ => Err(Error::invalid(format!("bad mode '{p}' (expected p,q or p,q,amplitude)"))),
            }
        })
        .collect()
}

fn modal(a: &ModalArgs, out: &mut dyn Write) -> Result<bool> {
    let m = single_level(&parse_levels(&a.n)?)?;
    let rect = parse_domain(&a.domain)?;
    let modes = parse_modes(&a.modes)?;
    let alpha = parse_real(&a.alpha)?;
    let beta = parse_real(&a.beta)?;
    if alpha < 0.0 || beta < 0.0 {
        return Err(Error::invalid("alpha and beta must be non-negative"));
    }
    let k = match &a.k {
        Some(k) => parse_real(k)?,
        None => 2.0 / (m as f64 * m as f64),
    };
    if !(k > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let steps: usize = a
        .steps
        .trim()
        .parse()
        .ok()
        .filter(|s| *s >= 1)
        .ok_or_else(|| Error::invalid(format!("bad step count '{}'", a.steps)))?;
    for &(p, q, _) in &modes {
        if p >= m || q >= m {
            return Err(Error::invalid(format!("mode ({p},{q}) is not resolved on a grid with N = {m}")));
        }
    }
    let r = run_modal(rect, m, &modes, alpha, beta, k, steps)?;
    writeln!(out, "fd grid N = {m}, k = {k:.6e}, steps = {steps}, alpha = {alpha:.6e}, beta = {beta:.6e}").map_err(io_err)?;
    for (&(p, q, amp), lam) in modes.iter().zip(&r.lambdas) {
        writeln!(out, "mode ({p},{q}) amplitude {amp:.6e}, lambda_h = {lam:.10e}").map_err(io_err)?;
    }
    writeln!(out, "max relative deviation stepper vs recurrence = {:.3e}", r.max_rel_dev).map_err(io_err)?;
    let last = r.rows.last().expect("at least one step");
    writeln!(
        out,
        "probe at t = {:.6e}: stepper {:.10e}, recurrence {:.10e}, continuous {:.10e}",
        last.t, last.stepper, last.recurrence, last.continuous
    )
    .map_err(io_err)?;
    if let Some(path) = &a.output {
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .map(|row| {
                vec![
                    format!("{:.5e}", row.t),
                    format!("{:.5e}", row.recurrence),
                    format!("{:.5e}", row.stepper),
                    format!("{:.5e}", row.continuous),
                    format!("{:.5e}", row.rel_dev),
                ]
            })
            .collect();
        write_rows_csv(path, &["t", "recurrence", "stepper", "continuous", "rel_dev"], &rows)?;
    }
    Ok(!a.strict || r.max_rel_dev <= 1e-8)
}

fn steady(a: &SteadyArgs, out: &mut dyn Write) -> Result<bool> {
    let mut cfg = a.exp.config()?;
    if cfg.experiment.is_none() {
        cfg.experiment = Some("forced".into());
    }
    let exp = cfg.build()?;
    if exp.params.forcing.as_ref().map_or(true, |f| !f.is_steady()) {
        return Err(Error::invalid(format!("experiment {} has no steady forcing", exp.name)));
    }
    let n = match &cfg.levels {
        Some(l) => single_level(l)?,
        None => 16,
    };
    let rtol = match &a.rtol {
        Some(r) => parse_real(r)?,
        None => STEP_RTOL,
    };
    let r = run_steady(&exp, n, None, None, rtol)?;
    let d0 = r.distances[0].1;
    writeln!(out, "experiment {} ({}), backend {}, N = {n}, T = {}", exp.name, exp.description, exp.backend, exp.t_final)
        .map_err(io_err)?;
    writeln!(out, "|u_inf|_M = {:.10e}, initial distance = {d0:.10e}", r.steady_norm).map_err(io_err)?;
    match r.reached {
        Some(t) => writeln!(out, "distance below {:.0e} of initial at t = {t:.6}", r.threshold),
        None => writeln!(out, "distance never fell below {:.0e} of initial", r.threshold),
    }
    .map_err(io_err)?;
    let (tl, dl) = *r.distances.last().expect("distances");
    writeln!(out, "final distance at t = {tl:.6}: {:.3e} relative", dl / d0).map_err(io_err)?;
    verdict_line(out, "monotone until threshold", &r.monotone)?;
    verdict_line(out, "monotone over the whole run", &r.monotone_full)?;
    if let Some(path) = &a.exp.output {
        let rows: Vec<Vec<String>> = r
            .distances
            .iter()
            .map(|(t, d)| vec![format!("{t:.5e}"), format!("{d:.5e}")])
            .collect();
        write_rows_csv(path, &["t", "distance"], &rows)?;
    }
    Ok(!a.exp.strict || (r.monotone.passed() && r.reached.is_some()))
}
