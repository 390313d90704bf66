//! Experiments: the built-in manufactured-solution problems, refinement and
//! decay studies, steady-state and modal checks, CSV output and `key = value`
//! experiment files.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::diagnostics::{
    check_decay_bound, check_dissipation, check_sandwich, convergence_rates, decay_bound_curve, decay_bounds,
    fit_decay_rate, ConvergenceInput, ConvergenceTable, DecayFit, EnergyTrace, Verdict,
};
use crate::error::{Error, Result};
use crate::exact::{snapshot, velocity, ExactSolution, ModalSolution, SineProductSolution};
use crate::fdm::fd_norms;
use crate::fem::ErrorNorms;
use crate::field::{Forcing, ScalarField};
use crate::mesh::Rectangle;
use crate::oracle::{modal_continuous, modal_recurrence, Mode};
use crate::stepper::{
    init_state, run, run_steps, steady_state, steps_for, BackendHandles, BackendKind, Coefficient, Discretization,
    InitMode, ModelParams, Stepper, StepperState, TraceOptions,
};

/// Refinement levels of the reference tables.
pub const TABLE_LEVELS: [usize; 6] = [5, 10, 15, 20, 25, 30];

/// Slack for the per-step dissipation check.
pub const DISSIPATION_SLACK: f64 = 1e-10;

/// Tolerance of the PDE residual guard.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Environment variable capping the worker count of refinement studies.
pub const THREADS_ENV: &str = "DWL_THREADS";

/// Time step as a function of the mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KRule {
    /// `k = 2/N²`: `2h²` with the normalized width `h = 1/N`.
    TwoOverNSquared,
    /// `k = 2h²` with the mesh width `h = side/N`.
    TwoHSquared,
    /// `k = h`.
    H,
    Fixed(f64),
}

impl KRule {
    /// Step for a mesh of width `h` with `n` cells per side.
    pub fn step(&self, h: f64, n: usize) -> f64 {
        match self {
            KRule::TwoOverNSquared => 2.0 / (n as f64 * n as f64),
            KRule::TwoHSquared => 2.0 * h * h,
            KRule::H => h,
            KRule::Fixed(k) => *k,
        }
    }
}

impl FromStr for KRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "2/n2" | "2/n^2" | "2/n²" => Ok(KRule::TwoOverNSquared),
            "2h2" | "2h^2" | "2h²" => Ok(KRule::TwoHSquared),
            "h" => Ok(KRule::H),
            _ => match t.parse::<f64>() {
                Ok(k) if k > 0.0 && k.is_finite() => Ok(KRule::Fixed(k)),
                _ => Err(Error::invalid(format!("bad time-step rule '{s}' (expected 2/n2, 2h2, h or a positive number)"))),
            },
        }
    }
}

impl fmt::Display for KRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KRule::TwoOverNSquared => f.write_str("2/n2"),
            KRule::TwoHSquared => f.write_str("2h2"),
            KRule::H => f.write_str("h"),
            KRule::Fixed(k) => write!(f, "{k}"),
        }
    }
}

/// A complete problem: domain, coefficients, data, optional exact solution
/// and the defaults of a study.
#[derive(Clone)]
pub struct Experiment {
    pub name: String,
    pub description: String,
    pub domain: Rectangle,
    pub params: ModelParams,
    pub exact: Option<Arc<dyn ExactSolution>>,
    pub refinements: Vec<usize>,
    pub k_rule: KRule,
    pub t_final: f64,
    pub backend: BackendKind,
    pub init: InitMode,
}

impl fmt::Debug for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Experiment")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .field("alpha", &self.params.alpha)
            .field("beta", &self.params.beta)
            .field("exact", &self.exact.is_some())
            .field("refinements", &self.refinements)
            .field("k_rule", &self.k_rule)
            .field("t_final", &self.t_final)
            .field("backend", &self.backend)
            .field("init", &self.init)
            .finish()
    }
}

impl Experiment {
    /// True for constant coefficients and no forcing.
    pub fn is_homogeneous_constant(&self) -> bool {
        self.params.constant_pair().is_some() && self.params.forcing.is_none()
    }

    pub fn backend_for(&self, n: usize) -> Result<BackendHandles> {
        BackendHandles::build(self.backend, self.domain, n)?.with_params(&self.params)
    }
}

/// Experiment with exact solution `e^{−πt} φ₁₁`, data taken from it.
fn sine_experiment(name: &str, description: &str, rect: Rectangle, alpha: Coefficient, beta: Coefficient) -> Experiment {
    let exact: Arc<dyn ExactSolution> = Arc::new(SineProductSolution::fundamental(&rect, PI));
    let params = ModelParams::new(alpha, beta, snapshot(&exact, 0.0), velocity(&exact, 0.0))
        .expect("built-in coefficients are admissible");
    Experiment {
        name: name.into(),
        description: description.into(),
        domain: rect,
        params,
        exact: Some(exact),
        refinements: TABLE_LEVELS.to_vec(),
        k_rule: KRule::TwoOverNSquared,
        t_final: 1.0,
        backend: BackendKind::Fem,
        init: InitMode::Exact,
    }
}

/// Adds the forcing that makes `exp.exact` a solution.
fn manufacture(mut exp: Experiment) -> Experiment {
    let exact = exp.exact.clone().expect("manufactured experiments carry an exact solution");
    let params = exp.params.clone();
    exp.params.forcing = Some(Forcing::transient(move |x, y, t| {
        operator_terms(&params, exact.as_ref(), x, y, t).unwrap_or(f64::NAN)
    }));
    exp
}

/// Constant-coefficient experiment whose exact solution is the fundamental mode
/// of `rect` under the closed-form modal evolution.
pub fn modal_experiment(name: &str, rect: Rectangle, alpha: f64, beta: f64) -> Result<Experiment> {
    let exact: Arc<dyn ExactSolution> = Arc::new(ModalSolution::new(rect, 1, 1, alpha, beta, 1.0, -PI));
    let params = ModelParams::constant(alpha, beta, snapshot(&exact, 0.0), velocity(&exact, 0.0))?;
    Ok(Experiment {
        name: name.into(),
        description: format!("fundamental mode, alpha = {alpha}, beta = {beta}"),
        domain: rect,
        params,
        exact: Some(exact),
        refinements: TABLE_LEVELS.to_vec(),
        k_rule: KRule::TwoOverNSquared,
        t_final: 1.0,
        backend: BackendKind::Fem,
        init: InitMode::Exact,
    })
}

/// Zero initial data driven by `f = λ₁ φ₁₁`, whose steady state is `φ₁₁`.
pub fn forced_experiment(rect: Rectangle, alpha: f64, beta: f64) -> Result<Experiment> {
    let lam = rect.lambda1();
    let f = ScalarField::sine_product(lam, PI / rect.width(), PI / rect.height(), rect.x0, rect.y0);
    let params = ModelParams::constant(alpha, beta, ScalarField::zero(), ScalarField::zero())?
        .with_forcing(Forcing::steady(f));
    Ok(Experiment {
        name: "forced".into(),
        description: "zero data, steady forcing by the fundamental mode".into(),
        domain: rect,
        params,
        exact: None,
        refinements: vec![16],
        k_rule: KRule::TwoOverNSquared,
        t_final: 30.0,
        backend: BackendKind::Fem,
        init: InitMode::Taylor,
    })
}

/// The four reference examples followed by the time-varying, space-varying and
/// forced extras.
pub fn builtin_experiments() -> Vec<Experiment> {
    let unit = Rectangle::unit();
    let pis = Rectangle::pi_square();
    let c = Coefficient::Constant;
    let pi2 = PI * PI;
    vec![
        sine_experiment("ex1", "unit square, alpha = pi, beta = 1/pi", unit, c(PI), c(1.0 / PI)),
        sine_experiment(
            "ex2",
            "(0,pi)^2, alpha = (pi^2+4)/(2pi), beta = pi/4",
            pis,
            c((pi2 + 4.0) / (2.0 * PI)),
            c(PI / 4.0),
        ),
        sine_experiment("ex3i", "(0,pi)^2, alpha = (pi^2+2)/pi, beta = 0", pis, c((pi2 + 2.0) / PI), c(0.0)),
        sine_experiment("ex3ii", "(0,pi)^2, alpha = 0, beta = (pi^2+2)/(2pi)", pis, c(0.0), c((pi2 + 2.0) / (2.0 * PI))),
        manufacture(sine_experiment(
            "tv",
            "unit square, alpha(t) = pi(2 - exp(-t)), beta = 1/pi, manufactured forcing",
            unit,
            Coefficient::schedule(|t| PI * (2.0 - (-t).exp())),
            c(1.0 / PI),
        )),
        manufacture(sine_experiment(
            "sv",
            "unit square, alpha(x,y) = pi(1 + sin(pi x) sin(pi y)/2), beta = 1/pi, manufactured forcing",
            unit,
            Coefficient::Field(ScalarField::with_gradient(
                |x, y| PI * (1.0 + 0.5 * (PI * x).sin() * (PI * y).sin()),
                |x, y| {
                    let a = 0.5 * PI * PI;
                    [a * (PI * x).cos() * (PI * y).sin(), a * (PI * x).sin() * (PI * y).cos()]
                },
            )),
            c(1.0 / PI),
        )),
        forced_experiment(unit, 1.0, 1.0).expect("forced experiment is admissible"),
    ]
}

/// Looks up a built-in experiment by name (case-insensitive).
pub fn builtin(name: &str) -> Result<Experiment> {
    let key = name.trim().to_ascii_lowercase();
    builtin_experiments().into_iter().find(|e| e.name == key).ok_or_else(|| {
        let names: Vec<String> = builtin_experiments().into_iter().map(|e| e.name).collect();
        Error::invalid(format!("unknown experiment '{name}' (known: {})", names.join(", ")))
    })
}

/// `u_tt + A_β u_t + α u_t + A u` at a point, with `A_β v = −∇·(β∇v)`.
fn operator_terms(params: &ModelParams, u: &dyn ExactSolution, x: f64, y: f64, t: f64) -> Result<f64> {
    let alpha = params.alpha.value_at(x, y, t);
    let beta = params.beta.value_at(x, y, t);
    let mut damping = -beta * u.laplacian_dt(x, y, t);
    if let Coefficient::Field(b) = &params.beta {
        let g = b
            .gradient(x, y)
            .ok_or_else(|| Error::invalid("space-varying beta needs a gradient for the residual"))?;
        let gu = u.dt_gradient(x, y, t);
        damping -= g[0] * gu[0] + g[1] * gu[1];
    }
    Ok(u.dtt(x, y, t) + damping + alpha * u.dt(x, y, t) - u.laplacian(x, y, t))
}

/// PDE residual of the exact solution of `exp` at `(x, y, t)`.
pub fn pde_residual(exp: &Experiment, x: f64, y: f64, t: f64) -> Result<f64> {
    let u = exp
        .exact
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("experiment {} has no exact solution", exp.name)))?;
    let f = exp.params.forcing.as_ref().map_or(0.0, |f| f.at(t).eval(x, y));
    Ok(operator_terms(&exp.params, u.as_ref(), x, y, t)? - f)
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

/// Deterministic space-time sample points (Halton sequence in bases 2, 3, 5).
pub fn sample_points(rect: &Rectangle, t_final: f64, count: usize) -> Vec<[f64; 3]> {
    (1..=count)
        .map(|i| {
            [
                rect.x0 + rect.width() * radical_inverse(i, 2),
                rect.y0 + rect.height() * radical_inverse(i, 3),
                t_final * radical_inverse(i, 5),
            ]
        })
        .collect()
}

/// Largest absolute PDE residual over `count` sample points.
pub fn max_residual(exp: &Experiment, count: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for [x, y, t] in sample_points(&exp.domain, exp.t_final, count) {
        let r = pde_residual(exp, x, y, t)?;
        if !r.is_finite() {
            return Err(Error::invalid(format!("non-finite residual at ({x}, {y}, {t})")));
        }
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Worker count for refinement studies, capped by `DWL_THREADS`.
pub fn worker_threads() -> usize {
    let default = std::thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => default,
    }
}

fn pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(worker_threads())
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

/// Errors of the discrete `u` against `exact` on either backend. For finite
/// differences the norms are the grid norms of the nodal error, with
/// `h1 = (‖e‖²_{0,h} + ‖e‖²_{1,h})^{1/2}`.
pub fn backend_errors(backend: &BackendHandles, u: &[f64], exact: &ScalarField) -> Result<ErrorNorms> {
    match &backend.disc {
        Discretization::Fem(space) => space.error_norms(u, exact),
        Discretization::Fd(op) => {
            if u.len() != op.dofs() {
                return Err(Error::DimensionMismatch {
                    expected: op.dofs(),
                    got: u.len(),
                });
            }
            let e: Vec<f64> = (0..op.dofs())
                .map(|d| {
                    let p = op.grid.coords(d);
                    exact.eval(p[0], p[1]) - u[d]
                })
                .collect();
            let (l2, semi) = fd_norms(&op.grid, &e)?;
            Ok(ErrorNorms {
                l2,
                linf: e.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
                h1: (l2 * l2 + semi * semi).sqrt(),
            })
        }
    }
}

/// One refinement level: errors at `T` on the `n`-cell mesh.
///
/// The step is shrunk to `k = T/⌈T/k_rule⌉` so the last state sits exactly at `T`.
pub fn run_level(exp: &Experiment, n: usize) -> Result<ErrorNorms> {
    let exact = exp
        .exact
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("experiment {} has no exact solution", exp.name)))?;
    let ctx = |e: Error| e.context(format!("experiment {}, N = {n}", exp.name));
    let backend = exp.backend_for(n).map_err(ctx)?;
    let n_t = steps_for(exp.t_final, exp.k_rule.step(backend.h(), n)).max(1);
    let k = exp.t_final / n_t as f64;
    let init = init_state(&backend, &exp.params, k, exp.init, Some(exact)).map_err(ctx)?;
    let (state, _) = run_steps(&backend, &exp.params, init, n_t - 1, TraceOptions::default(), &mut []).map_err(ctx)?;
    backend_errors(&backend, &state.u_curr, &snapshot(exact, exp.t_final)).map_err(ctx)
}

/// Errors and rates over `exp.refinements`, levels run concurrently.
pub fn run_convergence(exp: &Experiment) -> Result<ConvergenceTable> {
    exp.params.validate(exp.t_final)?;
    let levels = &exp.refinements;
    if levels.is_empty() {
        return Err(Error::invalid("no refinement levels given"));
    }
    let errors: Vec<ErrorNorms> = pool()?.install(|| levels.par_iter().map(|&n| run_level(exp, n)).collect::<Result<_>>())?;
    let rows: Vec<ConvergenceInput> = levels
        .iter()
        .zip(errors)
        .map(|(&n, errors)| ConvergenceInput { n, errors })
        .collect();
    convergence_rates(&rows)
}

/// Where λ₁ for the decay bounds comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaSource {
    /// Smallest eigenvalue of the discrete pencil.
    #[default]
    Discrete,
    /// `(π/Lx)² + (π/Ly)²`.
    Continuous,
}

impl FromStr for LambdaSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "discrete" => Ok(LambdaSource::Discrete),
            "continuous" => Ok(LambdaSource::Continuous),
            other => Err(Error::invalid(format!("unknown lambda source '{other}' (expected discrete or continuous)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecayOptions {
    /// Overrides the experiment's step rule.
    pub k: Option<f64>,
    pub t_final: Option<f64>,
    /// Overrides `δ_disc` for the extended energy and the bound.
    pub delta: Option<f64>,
    pub lambda: LambdaSource,
    /// Fit window; defaults to `[0.2 T, 0.8 T]`.
    pub window: Option<(f64, f64)>,
    pub energy_a: bool,
}

#[derive(Debug)]
pub struct DecayReport {
    pub trace: EnergyTrace,
    pub lambda1: f64,
    /// `(δ_cont, δ_disc)` for constant coefficients.
    pub bounds: Option<(f64, f64)>,
    /// δ used for `Ẽ` and the bound curve.
    pub delta: Option<f64>,
    pub fit: Result<DecayFit>,
    pub window: (f64, f64),
    pub dissipation: Verdict,
    pub sandwich: Verdict,
    pub decay_bound: Verdict,
    /// `δ_fit ≥ δ_disc/15 − 1e−6`.
    pub rate_floor: Verdict,
}

impl DecayReport {
    pub fn verdicts(&self) -> [(&'static str, &Verdict); 4] {
        [
            ("energy dissipation", &self.dissipation),
            ("extended energy sandwich", &self.sandwich),
            ("exponential decay bound", &self.decay_bound),
            ("fitted rate above proven rate", &self.rate_floor),
        ]
    }

    /// True when no check was violated.
    pub fn all_hold(&self) -> bool {
        self.verdicts().iter().all(|(_, v)| !matches!(v, Verdict::Violated { .. }))
    }
}

/// Composite 3-point Gauss–Legendre rule on `cells × cells` sub-rectangles.
pub fn integrate_rect(rect: &Rectangle, cells: usize, f: impl Fn(f64, f64) -> f64) -> f64 {
    let g = (0.6f64).sqrt();
    let nodes = [-g, 0.0, g];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let (hx, hy) = (rect.width() / cells as f64, rect.height() / cells as f64);
    let mut sum = 0.0;
    for j in 0..cells {
        let yc = rect.y0 + (j as f64 + 0.5) * hy;
        for i in 0..cells {
            let xc = rect.x0 + (i as f64 + 0.5) * hx;
            for (a, wa) in nodes.iter().zip(&weights) {
                for (b, wb) in nodes.iter().zip(&weights) {
                    sum += wa * wb * f(xc + 0.5 * hx * a, yc + 0.5 * hy * b);
                }
            }
        }
    }
    sum * 0.25 * hx * hy
}

/// `E(u)(t) = ½(‖u_t‖² + |u|₁²)` by quadrature of the analytic derivatives.
pub fn continuous_energy(u: &dyn ExactSolution, rect: &Rectangle, t: f64) -> f64 {
    0.5 * integrate_rect(rect, 24, |x, y| {
        let v = u.dt(x, y, t);
        let g = u.gradient(x, y, t);
        v * v + g[0] * g[0] + g[1] * g[1]
    })
}

/// Runs `exp` on the `n`-cell mesh, recording energies and checking the decay
/// inequalities at every step.
pub fn run_decay(exp: &Experiment, n: usize, opts: &DecayOptions) -> Result<DecayReport> {
    let ctx = |e: Error| e.context(format!("experiment {}, N = {n}", exp.name));
    let t_final = opts.t_final.unwrap_or(exp.t_final);
    exp.params.validate(t_final)?;
    let backend = exp.backend_for(n).map_err(ctx)?;
    let lambda1 = match opts.lambda {
        LambdaSource::Discrete => backend.lambda1(1e-10).map_err(ctx)?,
        LambdaSource::Continuous => exp.domain.lambda1(),
    };
    let homogeneous = exp.is_homogeneous_constant();
    let bounds = match exp.params.constant_pair() {
        Some((a, b)) if homogeneous => Some(decay_bounds(a, b, lambda1)?),
        _ => None,
    };
    let delta = opts.delta.or(bounds.map(|b| b.1));
    if let Some(d) = delta {
        if !(d > 0.0) {
            return Err(Error::invalid(format!("delta must be positive, got {d}")));
        }
    }
    let k = opts.k.unwrap_or_else(|| exp.k_rule.step(backend.h(), n));
    let init = init_state(&backend, &exp.params, k, exp.init, exp.exact.as_ref()).map_err(ctx)?;
    let (_, mut trace) = run(
        &backend,
        &exp.params,
        init,
        t_final,
        TraceOptions {
            delta,
            energy_a: opts.energy_a,
        },
        &mut [],
    )
    .map_err(ctx)?;
    trace.meta.lambda1 = Some(lambda1);
    if let Some(u) = &exp.exact {
        for row in trace.rows.iter_mut() {
            row.continuous = Some(continuous_energy(u.as_ref(), &exp.domain, row.t));
        }
    }

    let window = opts.window.unwrap_or((0.2 * t_final, 0.8 * t_final));
    let fit = fit_decay_rate(&trace, window.0, window.1);
    let not_homogeneous = || Verdict::NotApplicable("forced or variable coefficients".into());
    let dissipation = if homogeneous {
        check_dissipation(&trace, DISSIPATION_SLACK)
    } else {
        not_homogeneous()
    };
    let sandwich = if homogeneous { check_sandwich(&trace) } else { not_homogeneous() };
    let decay_bound = match delta {
        Some(d) if homogeneous => check_decay_bound(&trace, d),
        _ => not_homogeneous(),
    };
    let rate_floor = match (&fit, bounds) {
        (Ok(f), Some((_, d))) => {
            let floor = d / 15.0 - 1e-6;
            if f.delta >= floor {
                Verdict::Holds
            } else {
                Verdict::Violated {
                    step: trace.rows.len(),
                    t: t_final,
                    detail: format!("fitted rate {:.6e} below {floor:.6e}", f.delta),
                }
            }
        }
        (Err(e), _) => Verdict::NotApplicable(format!("no fit: {e}")),
        (_, None) => not_homogeneous(),
    };
    Ok(DecayReport {
        trace,
        lambda1,
        bounds,
        delta,
        fit,
        window,
        dissipation,
        sandwich,
        decay_bound,
        rate_floor,
    })
}

#[derive(Debug, Clone)]
pub struct SteadyReport {
    /// Discrete steady state `K u_∞ = F`.
    pub steady: Vec<f64>,
    pub steady_norm: f64,
    /// `(t_n, ‖U^n − u_∞‖_M)` for every state, starting at `U⁰`.
    pub distances: Vec<(f64, f64)>,
    /// First time the distance drops below `threshold · ‖U⁰ − u_∞‖_M`.
    pub reached: Option<f64>,
    pub threshold: f64,
    /// Non-increase of the distance until it first drops below the threshold.
    pub monotone: Verdict,
    /// Non-increase over the whole run, including the solver-noise floor.
    pub monotone_full: Verdict,
}

/// Runs a steadily forced experiment and tracks the distance to the discrete
/// steady state.
pub fn run_steady(exp: &Experiment, n: usize, k: Option<f64>, t_final: Option<f64>, rtol: f64) -> Result<SteadyReport> {
    let ctx = |e: Error| e.context(format!("experiment {}, N = {n}", exp.name));
    let t_final = t_final.unwrap_or(exp.t_final);
    let backend = exp.backend_for(n).map_err(ctx)?;
    let steady = steady_state(&backend, &exp.params).map_err(ctx)?;
    let k = k.unwrap_or_else(|| exp.k_rule.step(backend.h(), n));
    let mut state = init_state(&backend, &exp.params, k, exp.init, exp.exact.as_ref()).map_err(ctx)?;
    let dist = |u: &[f64]| {
        let d: Vec<f64> = u.iter().zip(&steady).map(|(a, b)| a - b).collect();
        backend.mass_norm(&d)
    };
    let mut distances = vec![(0.0, dist(&state.u_prev)), (k, dist(&state.u_curr))];
    let mut stepper = Stepper::new(&backend, &exp.params).map_err(ctx)?.with_rtol(rtol);
    for _ in 0..steps_for(t_final, k) {
        state = stepper.step(&state).map_err(ctx)?;
        distances.push((state.time(), dist(&state.u_curr)));
    }
    let threshold = 1e-6;
    let d0 = distances[0].1;
    let reached = distances.iter().find(|(_, d)| *d <= threshold * d0).map(|(t, _)| *t);
    let first_increase = |rows: &[(f64, f64)]| {
        rows.windows(2)
            .enumerate()
            .find(|(_, w)| w[1].1 > w[0].1)
            .map_or(Verdict::Holds, |(i, w)| Verdict::Violated {
                step: i + 1,
                t: w[1].0,
                detail: format!("distance {:.6e} after {:.6e}", w[1].1, w[0].1),
            })
    };
    let cut = distances
        .iter()
        .position(|(_, d)| *d <= threshold * d0)
        .map_or(distances.len(), |i| i + 1);
    let monotone = first_increase(&distances[..cut]);
    let monotone_full = first_increase(&distances);
    Ok(SteadyReport {
        steady_norm: backend.mass_norm(&steady),
        steady,
        distances,
        reached,
        threshold,
        monotone,
        monotone_full,
    })
}

#[derive(Debug, Clone)]
pub struct ModalRow {
    pub t: f64,
    /// Sum of the per-mode recurrence amplitudes times the modes, at the centre-most node.
    pub recurrence: f64,
    pub stepper: f64,
    /// Closed-form continuous amplitude sum at the same node.
    pub continuous: f64,
    /// `max |U^n − Σ a_n φ| / max |Σ a_n φ|`.
    pub rel_dev: f64,
}

#[derive(Debug, Clone)]
pub struct ModalReport {
    pub rows: Vec<ModalRow>,
    pub max_rel_dev: f64,
    pub lambdas: Vec<f64>,
}

/// Finite difference stepper started from a sum of sine modes, compared at
/// every step with the per-mode scalar recurrences.
///
/// `modes` holds `(p, q, amplitude)`; `U¹` takes each mode's closed-form
/// amplitude at `t = k` with initial velocity zero.
pub fn run_modal(
    rect: Rectangle,
    m: usize,
    modes: &[(usize, usize, f64)],
    alpha: f64,
    beta: f64,
    k: f64,
    n_steps: usize,
) -> Result<ModalReport> {
    if modes.is_empty() {
        return Err(Error::invalid("no modes given"));
    }
    let backend = BackendHandles::build(BackendKind::Fd, rect, m)?;
    let Discretization::Fd(op) = &backend.disc else {
        unreachable!("finite difference backend")
    };
    let params = if alpha == 0.0 && beta == 0.0 {
        ModelParams::undamped(ScalarField::zero(), ScalarField::zero())
    } else {
        ModelParams::constant(alpha, beta, ScalarField::zero(), ScalarField::zero())?
    };
    let side = rect.width();
    let vectors: Vec<Vec<f64>> = modes.iter().map(|&(p, q, _)| op.mode_vector(p, q)).collect();
    let mut lambdas = Vec::new();
    let mut seqs = Vec::new();
    let mut conts = Vec::new();
    for &(p, q, a) in modes {
        let fd = Mode::finite_difference(side, op.grid.h, p, q, a, 0.0);
        let cont = Mode::continuous(&rect, p, q, a, 0.0);
        let u1 = modal_continuous(&fd, alpha, beta, k).0;
        lambdas.push(fd.lambda);
        seqs.push(modal_recurrence(fd.lambda, alpha, beta, k, a, u1, n_steps));
        conts.push(cont);
    }
    let combine = |n: usize| -> Vec<f64> {
        let mut v = vec![0.0; op.dofs()];
        for (s, phi) in seqs.iter().zip(&vectors) {
            v.iter_mut().zip(phi).for_each(|(o, x)| *o += s[n] * x);
        }
        v
    };
    let probe = op.grid.index(m / 2, m / 2).expect("grid has an interior node");
    let mut state = StepperState::new(k, combine(0), combine(1))?;
    let mut stepper = Stepper::new(&backend, &params)?;
    let mut rows = Vec::with_capacity(n_steps);
    let mut max_rel_dev: f64 = 0.0;
    for n in 2..=n_steps + 1 {
        state = stepper.step(&state)?;
        let want = combine(n);
        let scale = want.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        let dev = state.u_curr.iter().zip(&want).fold(0.0, |a: f64, (x, y)| a.max((x - y).abs()));
        let rel_dev = if scale > 0.0 { dev / scale } else { dev };
        max_rel_dev = max_rel_dev.max(rel_dev);
        let t = state.time();
        let [px, py] = op.grid.coords(probe);
        let continuous = conts
            .iter()
            .map(|c| {
                let shape = (c.p as f64 * PI * (px - rect.x0) / side).sin() * (c.q as f64 * PI * (py - rect.y0) / side).sin();
                modal_continuous(c, alpha, beta, t).0 * shape
            })
            .sum();
        rows.push(ModalRow {
            t,
            recurrence: want[probe],
            stepper: state.u_curr[probe],
            continuous,
            rel_dev,
        });
    }
    Ok(ModalReport {
        rows,
        max_rel_dev,
        lambdas,
    })
}

fn sci(v: f64) -> String {
    format!("{v:.5e}")
}

fn opt_sci(v: Option<f64>) -> String {
    v.map(sci).unwrap_or_default()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::invalid(format!("{}: csv error {other:?}", path.display())),
    }
}

/// Convergence table as CSV: `N,l2,rate_l2,linf,rate_linf,h1,rate_h1`.
pub fn write_table<W: Write>(table: &ConvergenceTable, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["N", "l2", "rate_l2", "linf", "rate_linf", "h1", "rate_h1"])?;
    for r in &table.rows {
        w.write_record([
            r.n.to_string(),
            sci(r.l2),
            opt_sci(r.rate_l2),
            sci(r.linf),
            opt_sci(r.rate_linf),
            sci(r.h1),
            opt_sci(r.rate_h1),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Energy trace as CSV: `t,energy,extended_energy,energy_a,bound,continuous_energy`.
pub fn write_trace<W: Write>(trace: &EnergyTrace, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "energy", "extended_energy", "energy_a", "bound", "continuous_energy"])?;
    let e0 = trace.initial_energy();
    for r in &trace.rows {
        let bound = match (trace.delta, e0) {
            (Some(d), Some(e0)) => Some(decay_bound_curve(d, r.t, e0)),
            _ => None,
        };
        w.write_record([
            sci(r.t),
            sci(r.energy),
            opt_sci(r.extended),
            opt_sci(r.energy_a),
            opt_sci(bound),
            opt_sci(r.continuous),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table_csv(table: &ConvergenceTable, path: &Path) -> Result<()> {
    let file = create(path)?;
    write_table(table, file).map_err(csv_err(path))
}

pub fn write_trace_csv(trace: &EnergyTrace, path: &Path) -> Result<()> {
    let file = create(path)?;
    write_trace(trace, file).map_err(csv_err(path))
}

/// Writes `header` then one row per record of already formatted fields.
pub fn write_rows_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let file = create(path)?;
    let mut w = csv::Writer::from_writer(file);
    let on_err = csv_err(path);
    w.write_record(header).map_err(&on_err)?;
    for r in rows {
        w.write_record(r).map_err(&on_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses `unit`, `pi` or `x0,x1,y0,y1`.
pub fn parse_domain(s: &str) -> Result<Rectangle> {
    match s.trim().to_ascii_lowercase().as_str() {
        "unit" => Ok(Rectangle::unit()),
        "pi" => Ok(Rectangle::pi_square()),
        other => {
            let v: Vec<f64> = other
                .split(',')
                .map(|p| parse_real(p.trim()))
                .collect::<Result<_>>()
                .map_err(|_| Error::invalid(format!("bad domain '{s}' (expected unit, pi or x0,x1,y0,y1)")))?;
            match v.as_slice() {
                [x0, x1, y0, y1] => Rectangle::new(*x0, *x1, *y0, *y1),
                _ => Err(Error::invalid(format!("bad domain '{s}' (expected unit, pi or x0,x1,y0,y1)"))),
            }
        }
    }
}

/// Real number, also accepting `pi`, `k*pi` and `pi/k` spellings.
pub fn parse_real(s: &str) -> Result<f64> {
    let t = s.trim().to_ascii_lowercase();
    let bad = || Error::invalid(format!("bad number '{s}'"));
    let v = if t == "pi" {
        PI
    } else if let Some(c) = t.strip_suffix("*pi") {
        c.trim().parse::<f64>().map_err(|_| bad())? * PI
    } else if let Some(c) = t.strip_suffix("/pi") {
        c.trim().parse::<f64>().map_err(|_| bad())? / PI
    } else if let Some(d) = t.strip_prefix("pi/") {
        PI / d.trim().parse::<f64>().map_err(|_| bad())?
    } else {
        t.parse::<f64>().map_err(|_| bad())?
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

/// Comma-separated list of positive integers.
pub fn parse_levels(s: &str) -> Result<Vec<usize>> {
    let levels: Vec<usize> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n >= 1)
                .ok_or_else(|| Error::invalid(format!("bad mesh size '{}' in '{s}'", p.trim())))
        })
        .collect::<Result<_>>()?;
    if levels.is_empty() {
        return Err(Error::invalid("empty mesh-size list"));
    }
    Ok(levels)
}

/// Settings read from an experiment file or the command line; unset fields
/// keep the base experiment's values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub domain: Option<Rectangle>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub levels: Option<Vec<usize>>,
    pub t_final: Option<f64>,
    pub k_rule: Option<KRule>,
    pub backend: Option<BackendKind>,
    pub mode: Option<InitMode>,
    pub delta: Option<f64>,
}

impl ExperimentConfig {
    /// Line-oriented `key = value`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |message: String| Error::Config { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected key = value, got '{line}'")))?;
            let (key, value) = (key.trim().to_ascii_lowercase(), value.trim());
            if value.is_empty() {
                return Err(at(format!("empty value for '{key}'")));
            }
            let wrap = |e: Error| at(e.to_string());
            match key.as_str() {
                "experiment" => cfg.experiment = Some(value.to_string()),
                "domain" => cfg.domain = Some(parse_domain(value).map_err(wrap)?),
                "alpha" => cfg.alpha = Some(parse_real(value).map_err(wrap)?),
                "beta" => cfg.beta = Some(parse_real(value).map_err(wrap)?),
                "n" => cfg.levels = Some(parse_levels(value).map_err(wrap)?),
                "t" | "t_final" => cfg.t_final = Some(parse_real(value).map_err(wrap)?),
                "k" => cfg.k_rule = Some(value.parse().map_err(wrap)?),
                "backend" => cfg.backend = Some(value.parse().map_err(wrap)?),
                "mode" => cfg.mode = Some(value.parse().map_err(wrap)?),
                "delta" => cfg.delta = Some(parse_real(value).map_err(wrap)?),
                other => return Err(at(format!("unknown key '{other}'"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    /// `over` wins field by field.
    pub fn merged(self, over: ExperimentConfig) -> Self {
        Self {
            experiment: over.experiment.or(self.experiment),
            domain: over.domain.or(self.domain),
            alpha: over.alpha.or(self.alpha),
            beta: over.beta.or(self.beta),
            levels: over.levels.or(self.levels),
            t_final: over.t_final.or(self.t_final),
            k_rule: over.k_rule.or(self.k_rule),
            backend: over.backend.or(self.backend),
            mode: over.mode.or(self.mode),
            delta: over.delta.or(self.delta),
        }
    }

    /// Builds the experiment: the named built-in (default `ex1`) with the set
    /// fields applied. Changing the domain, α or β replaces the model by the
    /// constant-coefficient fundamental-mode problem with those values.
    pub fn build(&self) -> Result<Experiment> {
        let base = builtin(self.experiment.as_deref().unwrap_or("ex1"))?;
        let mut exp = if self.domain.is_some() || self.alpha.is_some() || self.beta.is_some() {
            let rect = self.domain.unwrap_or(base.domain);
            let (a0, b0) = base.params.constant_pair().unwrap_or((f64::NAN, f64::NAN));
            let alpha = self.alpha.unwrap_or(a0);
            let beta = self.beta.unwrap_or(b0);
            if alpha.is_nan() || beta.is_nan() {
                return Err(Error::invalid(format!(
                    "experiment {} has variable coefficients; give both alpha and beta to override",
                    base.name
                )));
            }
            let mut e = if base.exact.is_some() {
                modal_experiment(&base.name, rect, alpha, beta)?
            } else {
                forced_experiment(rect, alpha, beta)?
            };
            e.refinements = base.refinements.clone();
            e.t_final = base.t_final;
            e.init = base.init;
            e
        } else {
            base
        };
        if let Some(l) = &self.levels {
            exp.refinements = l.clone();
        }
        if let Some(t) = self.t_final {
            if !(t > 0.0) {
                return Err(Error::invalid(format!("final time must be positive, got {t}")));
            }
            exp.t_final = t;
        }
        if let Some(k) = self.k_rule {
            exp.k_rule = k;
        }
        if let Some(b) = self.backend {
            exp.backend = b;
        }
        if let Some(m) = self.mode {
            if m == InitMode::Exact && exp.exact.is_none() {
                return Err(Error::invalid(format!("experiment {} has no exact solution for an exact start", exp.name)));
            }
            exp.init = m;
        }
        if exp.backend == BackendKind::Fd && !exp.domain.is_square() {
            return Err(Error::invalid("the fd backend needs a square domain"));
        }
        if exp.backend == BackendKind::Fd && (exp.params.alpha.field().is_some() || exp.params.beta.field().is_some()) {
            return Err(Error::invalid(format!("experiment {} has space-varying coefficients; use the fem backend", exp.name)));
        }
        Ok(exp)
    }
}
