//! Fully discrete time stepping for `u″ + βAu′ + αu′ + Au = f`.
//!
//! With `∂_t U^n = (U^{n+1} − U^n)/k`, each step solves
//!
//! ```text
//! [(1/k² + α/k) M + (β/k + 1) K] U^{n+1}
//!     = (2/k²) M U^n − (1/k²) M U^{n−1} + (α/k) M U^n + (β/k) K U^n + F
//! ```
//!
//! where `M`/`K` come from either spatial backend. Space-varying coefficients
//! replace `αM` by `M_α` and `βK` by `K_β`; time schedules are evaluated at `t_n`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::diagnostics::{discrete_energy, energy_ea, extended_energy, EnergyRow, EnergyTrace, TraceMeta};
use crate::error::{Error, Result};
use crate::exact::{snapshot, ExactSolution};
use crate::fdm::FdOperator;
use crate::fem::FemSpace;
use crate::field::{Forcing, ScalarField};
use crate::mesh::{build_fd_grid, build_tri_mesh, Rectangle};
use crate::sparse::{
    cg_solve, cg_solve_from, default_max_iter, smallest_generalized_eigenvalue, solve_spd, SparseMatrix, STEP_RTOL,
};

/// Number of samples used to check schedule monotonicity.
const SCHEDULE_SAMPLES: usize = 1001;

/// A damping coefficient: constant, time schedule or space field.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Schedule(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    Field(ScalarField),
}

impl Coefficient {
    pub fn schedule(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Schedule(Arc::new(f))
    }

    /// Scalar multiplier at time `t`; `None` for space fields.
    pub fn scalar_at(&self, t: f64) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            Coefficient::Schedule(f) => Some(f(t)),
            Coefficient::Field(_) => None,
        }
    }

    /// Pointwise value at `(x, y, t)`.
    pub fn value_at(&self, x: f64, y: f64, t: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Schedule(f) => f(t),
            Coefficient::Field(f) => f.eval(x, y),
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            _ => None,
        }
    }

    pub fn field(&self) -> Option<&ScalarField> {
        match self {
            Coefficient::Field(f) => Some(f),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Schedule(_) => f.write_str("Schedule(..)"),
            Coefficient::Field(_) => f.write_str("Field(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub alpha: Coefficient,
    pub beta: Coefficient,
    pub forcing: Option<Forcing>,
    pub u0: ScalarField,
    pub u1: ScalarField,
}

impl ModelParams {
    /// Damped model; rejects negative constants and `α = β = 0`.
    pub fn new(alpha: Coefficient, beta: Coefficient, u0: ScalarField, u1: ScalarField) -> Result<Self> {
        if alpha.is_zero() && beta.is_zero() {
            return Err(Error::invalid("alpha and beta cannot both vanish"));
        }
        for (name, c) in [("alpha", &alpha), ("beta", &beta)] {
            if let Coefficient::Constant(v) = c {
                if !(*v >= 0.0) || !v.is_finite() {
                    return Err(Error::invalid(format!("{name} must be a finite non-negative number, got {v}")));
                }
            }
        }
        Ok(Self {
            alpha,
            beta,
            forcing: None,
            u0,
            u1,
        })
    }

    /// Constant-coefficient model.
    pub fn constant(alpha: f64, beta: f64, u0: ScalarField, u1: ScalarField) -> Result<Self> {
        Self::new(Coefficient::Constant(alpha), Coefficient::Constant(beta), u0, u1)
    }

    /// The undamped wave equation, for conservation and oracle checks only.
    pub fn undamped(u0: ScalarField, u1: ScalarField) -> Self {
        Self {
            alpha: Coefficient::Constant(0.0),
            beta: Coefficient::Constant(0.0),
            forcing: None,
            u0,
            u1,
        }
    }

    pub fn with_forcing(mut self, f: Forcing) -> Self {
        self.forcing = Some(f);
        self
    }

    /// Constant `(α, β)` when both coefficients are constants.
    pub fn constant_pair(&self) -> Option<(f64, f64)> {
        Some((self.alpha.as_constant()?, self.beta.as_constant()?))
    }

    /// Checks schedules on `[0, t_final]`: values in `[min, max]` with `min >= 0`
    /// and non-decreasing on the sample grid.
    pub fn validate(&self, t_final: f64) -> Result<()> {
        for (name, c) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if let Coefficient::Schedule(f) = c {
                let mut last = f64::NEG_INFINITY;
                for i in 0..SCHEDULE_SAMPLES {
                    let t = t_final * i as f64 / (SCHEDULE_SAMPLES - 1) as f64;
                    let v = f(t);
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::invalid(format!("{name}({t}) = {v} is not a non-negative number")));
                    }
                    if v < last {
                        return Err(Error::invalid(format!("{name} schedule decreases near t = {t}")));
                    }
                    last = v;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Fem,
    Fd,
}

impl FromStr for BackendKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fem" => Ok(BackendKind::Fem),
            "fd" | "fdm" => Ok(BackendKind::Fd),
            other => Err(Error::invalid(format!("unknown backend '{other}' (expected fem or fd)"))),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Fem => "fem",
            BackendKind::Fd => "fd",
        })
    }
}

#[derive(Debug, Clone)]
pub enum Discretization {
    Fem(FemSpace),
    Fd(FdOperator),
}

/// The matrices and assemblers a run needs from a spatial backend.
#[derive(Debug, Clone)]
pub struct BackendHandles {
    pub disc: Discretization,
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    /// `M_α` when α is a space field.
    pub mass_alpha: Option<SparseMatrix>,
    /// `K_β` when β is a space field.
    pub stiffness_beta: Option<SparseMatrix>,
}

impl BackendHandles {
    pub fn fem(space: FemSpace) -> Result<Self> {
        let mass = space.assemble_mass(None)?;
        let stiffness = space.assemble_stiffness(None)?;
        Ok(Self {
            disc: Discretization::Fem(space),
            mass,
            stiffness,
            mass_alpha: None,
            stiffness_beta: None,
        })
    }

    pub fn fd(op: FdOperator) -> Self {
        let mass = op.mass();
        let stiffness = op.stiffness();
        Self {
            disc: Discretization::Fd(op),
            mass,
            stiffness,
            mass_alpha: None,
            stiffness_beta: None,
        }
    }

    /// Builds the backend for `rect` with `n` cells per side.
    pub fn build(kind: BackendKind, rect: Rectangle, n: usize) -> Result<Self> {
        match kind {
            BackendKind::Fem => Self::fem(FemSpace::new(build_tri_mesh(rect, n)?)),
            BackendKind::Fd => Ok(Self::fd(FdOperator::new(build_fd_grid(rect, n)?))),
        }
    }

    /// Attaches weighted matrices for the space-varying coefficients of `params`.
    pub fn with_params(mut self, params: &ModelParams) -> Result<Self> {
        let (fa, fb) = (params.alpha.field(), params.beta.field());
        if fa.is_none() && fb.is_none() {
            return Ok(self);
        }
        let space = match &self.disc {
            Discretization::Fem(s) => s,
            Discretization::Fd(_) => {
                return Err(Error::invalid(
                    "space-varying coefficients need the fem backend",
                ))
            }
        };
        self.mass_alpha = fa.map(|f| space.assemble_mass(Some(f))).transpose()?;
        self.stiffness_beta = fb.map(|f| space.assemble_stiffness(Some(f))).transpose()?;
        Ok(self)
    }

    pub fn kind(&self) -> BackendKind {
        match self.disc {
            Discretization::Fem(_) => BackendKind::Fem,
            Discretization::Fd(_) => BackendKind::Fd,
        }
    }

    pub fn dofs(&self) -> usize {
        self.mass.dim()
    }

    pub fn rect(&self) -> Rectangle {
        match &self.disc {
            Discretization::Fem(s) => s.mesh.rect,
            Discretization::Fd(o) => o.grid.rect,
        }
    }

    pub fn n_per_side(&self) -> usize {
        match &self.disc {
            Discretization::Fem(s) => s.mesh.n_per_side,
            Discretization::Fd(o) => o.grid.n_per_side,
        }
    }

    pub fn h(&self) -> f64 {
        match &self.disc {
            Discretization::Fem(s) => s.mesh.h,
            Discretization::Fd(o) => o.grid.h,
        }
    }

    pub fn dof_coords(&self, dof: usize) -> [f64; 2] {
        match &self.disc {
            Discretization::Fem(s) => s.dof_coords(dof),
            Discretization::Fd(o) => o.grid.coords(dof),
        }
    }

    /// Nodal values of `f` at the unknowns.
    pub fn interpolate(&self, f: &ScalarField) -> Vec<f64> {
        match &self.disc {
            Discretization::Fem(s) => s.interpolate(f),
            Discretization::Fd(_) => (0..self.dofs())
                .map(|d| {
                    let p = self.dof_coords(d);
                    f.eval(p[0], p[1])
                })
                .collect(),
        }
    }

    /// Discrete right-hand side `(f, χ)`.
    pub fn load(&self, f: &ScalarField) -> Result<Vec<f64>> {
        match &self.disc {
            Discretization::Fem(s) => s.load(f),
            Discretization::Fd(o) => {
                let h2 = o.grid.h * o.grid.h;
                Ok(self.interpolate(f).into_iter().map(|v| h2 * v).collect())
            }
        }
    }

    /// Smallest eigenvalue of the pencil `(K, M)`.
    pub fn lambda1(&self, tol: f64) -> Result<f64> {
        smallest_generalized_eigenvalue(&self.stiffness, &self.mass, tol)
    }

    /// `‖v‖_M`.
    pub fn mass_norm(&self, v: &[f64]) -> f64 {
        self.mass.quadratic_form(v).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperState {
    /// Index of `u_curr`.
    pub n: usize,
    pub k: f64,
    /// `U^{n−1}`.
    pub u_prev: Vec<f64>,
    /// `U^n`.
    pub u_curr: Vec<f64>,
}

impl StepperState {
    pub fn new(k: f64, u_prev: Vec<f64>, u_curr: Vec<f64>) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::invalid("time step must be positive"));
        }
        if u_prev.len() != u_curr.len() {
            return Err(Error::DimensionMismatch {
                expected: u_prev.len(),
                got: u_curr.len(),
            });
        }
        Ok(Self { n: 1, k, u_prev, u_curr })
    }

    /// Time of `u_curr`.
    pub fn time(&self) -> f64 {
        self.n as f64 * self.k
    }

    /// `(U^n − U^{n−1}) / k`.
    pub fn velocity(&self) -> Vec<f64> {
        self.u_curr
            .iter()
            .zip(&self.u_prev)
            .map(|(a, b)| (a - b) / self.k)
            .collect()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            k: self.k,
            u_prev: self.u_prev.iter().map(|v| c * v).collect(),
            u_curr: self.u_curr.iter().map(|v| c * v).collect(),
        }
    }
}

/// How `U¹` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// `U¹ = I_h u(·, k)` from an exact solution.
    Exact,
    /// Second-order Taylor start from `u₀`, `u₁` and the equation at `t = 0`.
    Taylor,
}

impl FromStr for InitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(InitMode::Exact),
            "taylor" => Ok(InitMode::Taylor),
            other => Err(Error::invalid(format!("unknown start mode '{other}' (expected exact or taylor)"))),
        }
    }
}

/// Damping operator applied to a vector: `αM v + M_α v` style sums.
fn damping_apply(
    backend: &BackendHandles,
    params: &ModelParams,
    t: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    let mut tmp = vec![0.0; v.len()];
    if let Some(a) = params.alpha.scalar_at(t) {
        if a != 0.0 {
            backend.mass.spmv_into(v, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += a * x);
        }
    } else {
        let ma = backend
            .mass_alpha
            .as_ref()
            .ok_or_else(|| Error::invalid("space-varying alpha needs a weighted mass matrix"))?;
        ma.spmv_into(v, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += x);
    }
    if let Some(b) = params.beta.scalar_at(t) {
        if b != 0.0 {
            backend.stiffness.spmv_into(v, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += b * x);
        }
    } else {
        let kb = backend
            .stiffness_beta
            .as_ref()
            .ok_or_else(|| Error::invalid("space-varying beta needs a weighted stiffness matrix"))?;
        kb.spmv_into(v, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += x);
    }
    Ok(out)
}

/// Builds `(U⁰, U¹)`.
pub fn init_state(
    backend: &BackendHandles,
    params: &ModelParams,
    k: f64,
    mode: InitMode,
    exact: Option<&Arc<dyn ExactSolution>>,
) -> Result<StepperState> {
    if !(k > 0.0) {
        return Err(Error::invalid("time step must be positive"));
    }
    let u0 = backend.interpolate(&params.u0);
    let u1 = match mode {
        InitMode::Exact => {
            let exact = exact.ok_or_else(|| Error::invalid("exact start requested without an exact solution"))?;
            backend.interpolate(&snapshot(exact, k))
        }
        InitMode::Taylor => {
            let v = backend.interpolate(&params.u1);
            // M w = F(0) − (damping) v − K U⁰
            let mut rhs = damping_apply(backend, params, 0.0, &v)?;
            let ku = backend.stiffness.spmv(&u0)?;
            rhs.iter_mut().zip(&ku).for_each(|(r, x)| *r = -*r - x);
            if let Some(f) = &params.forcing {
                let fv = backend.load(&f.at(0.0))?;
                rhs.iter_mut().zip(&fv).for_each(|(r, x)| *r += x);
            }
            let w = solve_spd(&backend.mass, &rhs, STEP_RTOL)?;
            u0.iter()
                .zip(&v)
                .zip(&w)
                .map(|((a, b), c)| a + k * b + 0.5 * k * k * c)
                .collect()
        }
    };
    StepperState::new(k, u0, u1)
}

/// Advances states, caching the system matrix while coefficients stay fixed.
pub struct Stepper<'a> {
    backend: &'a BackendHandles,
    params: &'a ModelParams,
    rtol: f64,
    cache: Option<(f64, u64, u64, SparseMatrix)>,
    steady_load: Option<Vec<f64>>,
}

impl<'a> Stepper<'a> {
    pub fn new(backend: &'a BackendHandles, params: &'a ModelParams) -> Result<Self> {
        let steady_load = match &params.forcing {
            Some(f) if f.is_steady() => Some(backend.load(&f.at(0.0))?),
            _ => None,
        };
        Ok(Self {
            backend,
            params,
            rtol: STEP_RTOL,
            cache: None,
            steady_load,
        })
    }

    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    fn scalars(&self, t: f64) -> (f64, f64) {
        (
            self.params.alpha.scalar_at(t).unwrap_or(0.0),
            self.params.beta.scalar_at(t).unwrap_or(0.0),
        )
    }

    fn system(&mut self, k: f64, a: f64, b: f64) -> Result<&SparseMatrix> {
        let fresh = match &self.cache {
            Some((ck, ca, cb, _)) => *ck != k || *ca != a.to_bits() || *cb != b.to_bits(),
            None => true,
        };
        if fresh {
            let be = self.backend;
            let mut s = SparseMatrix::linear_combination(1.0 / (k * k) + a / k, &be.mass, b / k + 1.0, &be.stiffness)?;
            if let Some(ma) = &be.mass_alpha {
                s = SparseMatrix::linear_combination(1.0, &s, 1.0 / k, ma)?;
            }
            if let Some(kb) = &be.stiffness_beta {
                s = SparseMatrix::linear_combination(1.0, &s, 1.0 / k, kb)?;
            }
            self.cache = Some((k, a.to_bits(), b.to_bits(), s));
        }
        Ok(&self.cache.as_ref().expect("system cached").3)
    }

    /// One step `(U^{n−1}, U^n) → (U^n, U^{n+1})`.
    pub fn step(&mut self, state: &StepperState) -> Result<StepperState> {
        self.step_inner(state).map_err(|e| Error::Step {
            step: state.n,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, state: &StepperState) -> Result<StepperState> {
        if state.n < 1 {
            return Err(Error::invalid("stepping needs n >= 1"));
        }
        let be = self.backend;
        let dim = be.dofs();
        if state.u_curr.len() != dim || state.u_prev.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: state.u_curr.len(),
            });
        }
        let k = state.k;
        let t_n = state.time();
        let (a, b) = self.scalars(t_n);
        let (un, um) = (&state.u_curr, &state.u_prev);

        // M [(2/k² + a/k) U^n − U^{n−1}/k²] + (b/k) K U^n + M_α U^n/k + K_β U^n/k + F
        let c_curr = 2.0 / (k * k) + a / k;
        let c_prev = 1.0 / (k * k);
        let comb: Vec<f64> = un.iter().zip(um).map(|(x, y)| c_curr * x - c_prev * y).collect();
        let mut rhs = vec![0.0; dim];
        be.mass.spmv_into(&comb, &mut rhs);
        let mut tmp = vec![0.0; dim];
        if b != 0.0 {
            be.stiffness.spmv_into(un, &mut tmp);
            rhs.iter_mut().zip(&tmp).for_each(|(r, x)| *r += (b / k) * x);
        }
        if let Some(ma) = &be.mass_alpha {
            ma.spmv_into(un, &mut tmp);
            rhs.iter_mut().zip(&tmp).for_each(|(r, x)| *r += x / k);
        }
        if let Some(kb) = &be.stiffness_beta {
            kb.spmv_into(un, &mut tmp);
            rhs.iter_mut().zip(&tmp).for_each(|(r, x)| *r += x / k);
        }
        if let Some(f) = &self.steady_load {
            rhs.iter_mut().zip(f).for_each(|(r, x)| *r += x);
        } else if let Some(f) = &self.params.forcing {
            let fv = be.load(&f.at(t_n + k))?;
            rhs.iter_mut().zip(&fv).for_each(|(r, x)| *r += x);
        }

        let rtol = self.rtol;
        let s = self.system(k, a, b)?;
        // linear extrapolation as the initial guess
        let mut next: Vec<f64> = un.iter().zip(um).map(|(x, y)| 2.0 * x - y).collect();
        cg_solve_from(s, &rhs, &mut next, rtol, default_max_iter(dim), |_| {})?;
        Ok(StepperState {
            n: state.n + 1,
            k,
            u_prev: state.u_curr.clone(),
            u_curr: next,
        })
    }
}

/// Single step without matrix caching.
pub fn step(state: &StepperState, backend: &BackendHandles, params: &ModelParams) -> Result<StepperState> {
    Stepper::new(backend, params)?.step(state)
}

/// Called after every step with the new state.
pub trait StepObserver {
    fn observe(&mut self, state: &StepperState, backend: &BackendHandles) -> Result<()>;
}

impl<F: FnMut(&StepperState, &BackendHandles) -> Result<()>> StepObserver for F {
    fn observe(&mut self, state: &StepperState, backend: &BackendHandles) -> Result<()> {
        self(state, backend)
    }
}

/// What [`run`] records alongside `E^n`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TraceOptions {
    /// δ for the extended energy.
    pub delta: Option<f64>,
    /// Record `E_A` (one mass solve per step).
    pub energy_a: bool,
}

/// Number of steps [`run`] takes for horizon `t_final`: `⌈T/k⌉`.
pub fn steps_for(t_final: f64, k: f64) -> usize {
    ((t_final / k) - 1e-9).ceil().max(0.0) as usize
}

/// Runs `⌈T/k⌉` steps from `init`, recording `E^n` for every state.
///
/// The trace row for state `(U^n, U^{n+1})` is stamped `t_n = n·k`; the first
/// row is `E⁰` from the initial pair.
pub fn run(
    backend: &BackendHandles,
    params: &ModelParams,
    init: StepperState,
    t_final: f64,
    opts: TraceOptions,
    observers: &mut [&mut dyn StepObserver],
) -> Result<(StepperState, EnergyTrace)> {
    if t_final < init.k * (1.0 - 1e-12) {
        return Err(Error::invalid(format!("final time {t_final} is shorter than one step {}", init.k)));
    }
    let n_steps = steps_for(t_final, init.k);
    run_steps(backend, params, init, n_steps, opts, observers)
}

/// Runs exactly `n_steps` steps from `init`.
pub fn run_steps(
    backend: &BackendHandles,
    params: &ModelParams,
    init: StepperState,
    n_steps: usize,
    opts: TraceOptions,
    observers: &mut [&mut dyn StepObserver],
) -> Result<(StepperState, EnergyTrace)> {
    let mut stepper = Stepper::new(backend, params)?;
    let mut trace = EnergyTrace::new(TraceMeta {
        alpha: params.alpha.as_constant(),
        beta: params.beta.as_constant(),
        lambda1: None,
        k: init.k,
        n_per_side: backend.n_per_side(),
        backend: backend.kind(),
    });
    trace.delta = opts.delta;
    let record = |s: &StepperState, trace: &mut EnergyTrace| -> Result<()> {
        let energy = discrete_energy(s, backend);
        let extended = match opts.delta {
            Some(d) => Some(extended_energy(s, backend, d)?),
            None => None,
        };
        let energy_a = if opts.energy_a { Some(energy_ea(s, backend)?) } else { None };
        trace.push(EnergyRow {
            t: (s.n - 1) as f64 * s.k,
            energy,
            extended,
            energy_a,
            continuous: None,
        })
    };
    record(&init, &mut trace)?;
    let mut state = init;
    for _ in 0..n_steps {
        state = stepper.step(&state)?;
        record(&state, &mut trace)?;
        for obs in observers.iter_mut() {
            obs.observe(&state, backend)?;
        }
    }
    Ok((state, trace))
}

/// Discrete steady state `K u_∞ = F`.
pub fn steady_state(backend: &BackendHandles, params: &ModelParams) -> Result<Vec<f64>> {
    let f = params
        .forcing
        .as_ref()
        .ok_or_else(|| Error::invalid("steady state needs a forcing term"))?;
    if !f.is_steady() {
        return Err(Error::invalid("steady state needs time-independent forcing"));
    }
    let load = backend.load(&f.at(0.0))?;
    cg_solve(&backend.stiffness, &load, 1e-12, default_max_iter(backend.dofs())).map(|(x, _)| x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::SineProductSolution;
    use crate::oracle::modal_recurrence;
    use std::f64::consts::PI;

    fn sine() -> ScalarField {
        ScalarField::sine_product(1.0, PI, PI, 0.0, 0.0)
    }

    fn ex1_params() -> ModelParams {
        ModelParams::constant(PI, 1.0 / PI, sine(), sine().scaled(-PI)).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::constant(0.0, 0.0, sine(), sine()).is_err());
        assert!(ModelParams::constant(-1.0, 1.0, sine(), sine()).is_err());
        let p = ModelParams::new(
            Coefficient::schedule(|t| 2.0 - (-t).exp()),
            Coefficient::Constant(0.0),
            sine(),
            sine(),
        )
        .unwrap();
        assert!(p.validate(5.0).is_ok());
        let p = ModelParams::new(Coefficient::schedule(|t| 2.0 + t.cos()), Coefficient::Constant(0.0), sine(), sine())
            .unwrap();
        assert!(p.validate(5.0).is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 6).unwrap();
        let p = ModelParams::constant(1.0, 1.0, ScalarField::zero(), ScalarField::zero()).unwrap();
        let s0 = init_state(&be, &p, 0.01, InitMode::Taylor, None).unwrap();
        assert!(s0.u_prev.iter().chain(&s0.u_curr).all(|v| *v == 0.0));
        let (fin, _) = run(&be, &p, s0, 0.2, TraceOptions::default(), &mut []).unwrap();
        assert!(fin.u_curr.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn taylor_start_formula() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 5).unwrap();
        let p = ModelParams::undamped(sine(), ScalarField::zero());
        let k = 0.05;
        let s = init_state(&be, &p, k, InitMode::Taylor, None).unwrap();
        let u0 = be.interpolate(&sine());
        let ku = be.stiffness.spmv(&u0).unwrap();
        let (minv_ku, _) = cg_solve(&be.mass, &ku, 1e-13, 1000).unwrap();
        for i in 0..u0.len() {
            let expect = u0[i] - 0.5 * k * k * minv_ku[i];
            assert!((s.u_curr[i] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_start_needs_solution() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 4).unwrap();
        assert!(init_state(&be, &ex1_params(), 0.1, InitMode::Exact, None).is_err());
        let exact: Arc<dyn ExactSolution> = Arc::new(SineProductSolution::fundamental(&Rectangle::unit(), PI));
        let k = 0.03;
        let s = init_state(&be, &ex1_params(), k, InitMode::Exact, Some(&exact)).unwrap();
        for (a, b) in s.u_curr.iter().zip(&s.u_prev) {
            assert!((a - (-PI * k).exp() * b).abs() < 1e-14);
        }
    }

    #[test]
    fn undamped_fd_mode_matches_scalar_recurrence() {
        let be = BackendHandles::build(BackendKind::Fd, Rectangle::unit(), 10).unwrap();
        let op = match &be.disc {
            Discretization::Fd(o) => o.clone(),
            _ => unreachable!(),
        };
        let phi = op.mode_vector(1, 2);
        let lam = op.mode_eigenvalue(1, 2);
        let k = 0.01;
        let p = ModelParams::undamped(ScalarField::zero(), ScalarField::zero());
        let (a0, a1) = (1.0, 0.99);
        let init = StepperState::new(k, phi.iter().map(|v| a0 * v).collect(), phi.iter().map(|v| a1 * v).collect())
            .unwrap();
        let amps = modal_recurrence(lam, 0.0, 0.0, k, a0, a1, 50);
        let mut s = init;
        let mut st = Stepper::new(&be, &p).unwrap();
        for n in 1..=50 {
            s = st.step(&s).unwrap();
            let a = amps[n + 1];
            let err = s.u_curr.iter().zip(&phi).map(|(u, f)| (u - a * f).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-8 * a.abs().max(1e-300), "step {n}: {err}");
        }
    }

    #[test]
    fn linearity_of_step() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 6).unwrap();
        let p = ex1_params();
        let s = init_state(&be, &p, 0.02, InitMode::Taylor, None).unwrap();
        let c = -2.5;
        let a = step(&s.scaled(c), &be, &p).unwrap();
        let b = step(&s, &be, &p).unwrap().scaled(c);
        let scale = b.u_curr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.u_curr.iter().zip(&b.u_curr) {
            assert!((x - y).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn constant_schedule_reproduces_constant_run_exactly() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 8).unwrap();
        let p1 = ex1_params();
        let p2 = ModelParams::new(
            Coefficient::schedule(|_| PI),
            Coefficient::schedule(|_| 1.0 / PI),
            sine(),
            sine().scaled(-PI),
        )
        .unwrap();
        let s = init_state(&be, &p1, 0.02, InitMode::Taylor, None).unwrap();
        let (a, ta) = run(&be, &p1, s.clone(), 0.5, TraceOptions::default(), &mut []).unwrap();
        let (b, tb) = run(&be, &p2, s, 0.5, TraceOptions::default(), &mut []).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.rows, tb.rows);
    }

    #[test]
    fn run_step_count_and_observers() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 4).unwrap();
        let p = ex1_params();
        let s = init_state(&be, &p, 0.1, InitMode::Taylor, None).unwrap();
        let mut count = 0usize;
        let mut obs = |_: &StepperState, _: &BackendHandles| -> Result<()> {
            count += 1;
            Ok(())
        };
        let (fin, trace) = run(&be, &p, s.clone(), 0.1, TraceOptions::default(), &mut [&mut obs]).unwrap();
        assert_eq!(count, 1);
        assert_eq!(fin.n, 2);
        assert_eq!(fin.u_prev, s.u_curr);
        assert_eq!(trace.rows.len(), 2);
        assert!(run(&be, &p, s, 0.05, TraceOptions::default(), &mut []).is_err());
        assert_eq!(steps_for(1.0, 0.1), 10);
        assert_eq!(steps_for(1.0, 0.3), 4);
    }

    #[test]
    fn steady_state_examples() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 8).unwrap();
        let zero = ModelParams::constant(1.0, 1.0, ScalarField::zero(), ScalarField::zero())
            .unwrap()
            .with_forcing(Forcing::steady(ScalarField::zero()));
        assert!(steady_state(&be, &zero).unwrap().iter().all(|v| *v == 0.0));
        let no_force = ModelParams::constant(1.0, 1.0, ScalarField::zero(), ScalarField::zero()).unwrap();
        assert!(steady_state(&be, &no_force).is_err());
        let transient = no_force.clone().with_forcing(Forcing::transient(|_, _, t| t));
        assert!(steady_state(&be, &transient).is_err());
    }

    #[test]
    fn fd_rejects_space_fields() {
        let be = BackendHandles::build(BackendKind::Fd, Rectangle::unit(), 8).unwrap();
        let p = ModelParams::new(
            Coefficient::Field(ScalarField::constant(1.0)),
            Coefficient::Constant(0.0),
            sine(),
            sine(),
        )
        .unwrap();
        assert!(be.with_params(&p).is_err());
    }

    #[test]
    fn space_field_constant_matches_constant_coefficients() {
        let base = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 6).unwrap();
        let pc = ex1_params();
        let pf = ModelParams::new(
            Coefficient::Field(ScalarField::constant(PI)),
            Coefficient::Field(ScalarField::constant(1.0 / PI)),
            sine(),
            sine().scaled(-PI),
        )
        .unwrap();
        let bf = base.clone().with_params(&pf).unwrap();
        let s = init_state(&base, &pc, 0.02, InitMode::Taylor, None).unwrap();
        let (a, _) = run(&base, &pc, s.clone(), 0.4, TraceOptions::default(), &mut []).unwrap();
        let (b, _) = run(&bf, &pf, s, 0.4, TraceOptions::default(), &mut []).unwrap();
        let scale = a.u_curr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.u_curr.iter().zip(&b.u_curr) {
            assert!((x - y).abs() <= 1e-8 * scale);
        }
    }
}
