//! C ABI over `dwl-core`.
//!
//! Every entry point returns a [`DwlStatus`]; on failure the message is kept
//! per thread and read with [`dwl_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use dwl_core::diagnostics::{decay_bounds, discrete_energy, Verdict};
use dwl_core::field::ScalarField;
use dwl_core::harness::{builtin, run_convergence, run_decay, DecayOptions};
use dwl_core::mesh::Rectangle;
use dwl_core::stepper::{BackendHandles, BackendKind, ModelParams, Stepper, StepperState};
use dwl_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NumericalFailure = 3,
    Panic = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwlBackendKind {
    Fem = 0,
    Fd = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwlRect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// One refinement level; missing rates are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwlConvergenceRow {
    pub n: usize,
    pub l2: f64,
    pub linf: f64,
    pub h1: f64,
    pub rate_l2: f64,
    pub rate_linf: f64,
    pub rate_h1: f64,
}

/// Verdict codes: 1 holds, 0 violated, -1 not applicable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwlDecaySummary {
    pub lambda1: f64,
    /// NaN when the bounds do not apply.
    pub delta_cont: f64,
    pub delta_disc: f64,
    /// NaN when the fit failed.
    pub delta_fit: f64,
    pub steps: usize,
    pub dissipation: i32,
    pub sandwich: i32,
    pub decay_bound: i32,
    pub rate_floor: i32,
}

/// Opaque discretization handle.
pub struct DwlBackend {
    inner: Arc<BackendHandles>,
}

/// Opaque time-stepping handle with constant coefficients and no forcing.
pub struct DwlStepper {
    backend: Arc<BackendHandles>,
    params: ModelParams,
    state: StepperState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: DwlStatus, msg: impl Into<String>) -> DwlStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> DwlStatus {
    let status = if e.is_numerical() {
        DwlStatus::NumericalFailure
    } else {
        DwlStatus::InvalidArgument
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), DwlStatus>) -> DwlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DwlStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(DwlStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), DwlStatus> {
    if p.is_null() {
        Err(fail(DwlStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn core<T>(r: dwl_core::Result<T>) -> Result<T, DwlStatus> {
    r.map_err(from_error)
}

fn kind(k: DwlBackendKind) -> BackendKind {
    match k {
        DwlBackendKind::Fem => BackendKind::Fem,
        DwlBackendKind::Fd => BackendKind::Fd,
    }
}

fn verdict_code(v: &Verdict) -> i32 {
    match v {
        Verdict::Holds => 1,
        Verdict::Violated { .. } => 0,
        Verdict::NotApplicable(_) => -1,
    }
}

unsafe fn experiment_name<'a>(name: *const c_char) -> Result<&'a str, DwlStatus> {
    non_null(name, "name")?;
    CStr::from_ptr(name)
        .to_str()
        .map_err(|_| fail(DwlStatus::InvalidArgument, "experiment name is not UTF-8"))
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn dwl_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a discretization with `n` cells per side.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_backend_new(
    backend: DwlBackendKind,
    rect: DwlRect,
    n: usize,
    out: *mut *mut DwlBackend,
) -> DwlStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let r = core(Rectangle::new(rect.x0, rect.x1, rect.y0, rect.y1))?;
        let b = core(BackendHandles::build(kind(backend), r, n))?;
        *out = Box::into_raw(Box::new(DwlBackend { inner: Arc::new(b) }));
        Ok(())
    })
}

/// # Safety
/// `b` must be null or come from [`dwl_backend_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dwl_backend_free(b: *mut DwlBackend) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// # Safety
/// `b` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_backend_dofs(b: *const DwlBackend, out: *mut usize) -> DwlStatus {
    guard(|| {
        non_null(b, "backend")?;
        non_null(out, "out")?;
        *out = (*b).inner.dofs();
        Ok(())
    })
}

/// Writes the coordinates of every unknown into `xs` and `ys`.
///
/// # Safety
/// `xs` and `ys` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_backend_coords(
    b: *const DwlBackend,
    xs: *mut f64,
    ys: *mut f64,
    len: usize,
) -> DwlStatus {
    guard(|| {
        non_null(b, "backend")?;
        non_null(xs, "xs")?;
        non_null(ys, "ys")?;
        let inner = &(*b).inner;
        if len != inner.dofs() {
            return Err(fail(
                DwlStatus::InvalidArgument,
                format!("buffer length {len} does not match {} unknowns", inner.dofs()),
            ));
        }
        for i in 0..len {
            let [x, y] = inner.dof_coords(i);
            *xs.add(i) = x;
            *ys.add(i) = y;
        }
        Ok(())
    })
}

/// Smallest eigenvalue of the discrete pencil.
///
/// # Safety
/// `b` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_backend_lambda1(b: *const DwlBackend, tol: f64, out: *mut f64) -> DwlStatus {
    guard(|| {
        non_null(b, "backend")?;
        non_null(out, "out")?;
        *out = core((*b).inner.lambda1(tol))?;
        Ok(())
    })
}

/// Admissible decay rates `(δ_cont, δ_disc)` for constant `α`, `β`.
///
/// # Safety
/// `delta_cont` and `delta_disc` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_decay_bounds(
    alpha: f64,
    beta: f64,
    lambda1: f64,
    delta_cont: *mut f64,
    delta_disc: *mut f64,
) -> DwlStatus {
    guard(|| {
        non_null(delta_cont, "delta_cont")?;
        non_null(delta_disc, "delta_disc")?;
        let (c, d) = core(decay_bounds(alpha, beta, lambda1))?;
        *delta_cont = c;
        *delta_disc = d;
        Ok(())
    })
}

/// Starts a homogeneous run from the two levels `u_prev`, `u_curr` at
/// `t = 0` and `t = k`. The stepper keeps its own reference to the backend.
///
/// # Safety
/// `b` must be a live handle, `u_prev` and `u_curr` valid for `len` reads and
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_stepper_new(
    b: *const DwlBackend,
    alpha: f64,
    beta: f64,
    k: f64,
    u_prev: *const f64,
    u_curr: *const f64,
    len: usize,
    out: *mut *mut DwlStepper,
) -> DwlStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        non_null(b, "backend")?;
        non_null(u_prev, "u_prev")?;
        non_null(u_curr, "u_curr")?;
        let backend = Arc::clone(&(*b).inner);
        if len != backend.dofs() {
            return Err(fail(
                DwlStatus::InvalidArgument,
                format!("vector length {len} does not match {} unknowns", backend.dofs()),
            ));
        }
        let params = core(ModelParams::constant(alpha, beta, ScalarField::zero(), ScalarField::zero()))?;
        let prev = std::slice::from_raw_parts(u_prev, len).to_vec();
        let curr = std::slice::from_raw_parts(u_curr, len).to_vec();
        let state = core(StepperState::new(k, prev, curr))?;
        *out = Box::into_raw(Box::new(DwlStepper { backend, params, state }));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or come from [`dwl_stepper_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dwl_stepper_free(s: *mut DwlStepper) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Advances `steps` time steps. On failure the state is left unchanged.
///
/// # Safety
/// `s` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn dwl_stepper_advance(s: *mut DwlStepper, steps: usize) -> DwlStatus {
    guard(|| {
        non_null(s, "stepper")?;
        let s = &mut *s;
        let mut stepper = core(Stepper::new(&s.backend, &s.params))?;
        let mut state = s.state.clone();
        for _ in 0..steps {
            state = core(stepper.step(&state))?;
        }
        s.state = state;
        Ok(())
    })
}

/// Time of the current level.
///
/// # Safety
/// `s` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_stepper_time(s: *const DwlStepper, out: *mut f64) -> DwlStatus {
    guard(|| {
        non_null(s, "stepper")?;
        non_null(out, "out")?;
        *out = (*s).state.time();
        Ok(())
    })
}

/// Discrete energy of the current pair of levels.
///
/// # Safety
/// `s` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_stepper_energy(s: *const DwlStepper, out: *mut f64) -> DwlStatus {
    guard(|| {
        non_null(s, "stepper")?;
        non_null(out, "out")?;
        *out = discrete_energy(&(*s).state, &(*s).backend);
        Ok(())
    })
}

/// Copies the current level into `buf`.
///
/// # Safety
/// `s` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_stepper_solution(s: *const DwlStepper, buf: *mut f64, len: usize) -> DwlStatus {
    guard(|| {
        non_null(s, "stepper")?;
        non_null(buf, "buf")?;
        let u = &(*s).state.u_curr;
        if len != u.len() {
            return Err(fail(
                DwlStatus::InvalidArgument,
                format!("buffer length {len} does not match {} unknowns", u.len()),
            ));
        }
        ptr::copy_nonoverlapping(u.as_ptr(), buf, len);
        Ok(())
    })
}

/// Refinement study of a built-in experiment over `levels`; writes one row
/// per level into `rows`.
///
/// # Safety
/// `name` must be a NUL-terminated string, `levels` valid for `count` reads
/// and `rows` valid for `count` writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_run_convergence(
    name: *const c_char,
    levels: *const usize,
    count: usize,
    rows: *mut DwlConvergenceRow,
) -> DwlStatus {
    guard(|| {
        let name = experiment_name(name)?;
        non_null(levels, "levels")?;
        non_null(rows, "rows")?;
        if count == 0 {
            return Err(fail(DwlStatus::InvalidArgument, "no refinement levels"));
        }
        let mut exp = core(builtin(name))?;
        exp.refinements = std::slice::from_raw_parts(levels, count).to_vec();
        let table = core(run_convergence(&exp))?;
        let nan = |r: Option<f64>| r.unwrap_or(f64::NAN);
        for (i, r) in table.rows.iter().enumerate() {
            *rows.add(i) = DwlConvergenceRow {
                n: r.n,
                l2: r.l2,
                linf: r.linf,
                h1: r.h1,
                rate_l2: nan(r.rate_l2),
                rate_linf: nan(r.rate_linf),
                rate_h1: nan(r.rate_h1),
            };
        }
        Ok(())
    })
}

/// Energy decay run of a built-in experiment at `n` cells per side with the
/// default rates and fit window.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dwl_run_decay(name: *const c_char, n: usize, out: *mut DwlDecaySummary) -> DwlStatus {
    guard(|| {
        let name = experiment_name(name)?;
        non_null(out, "out")?;
        let exp = core(builtin(name))?;
        let r = core(run_decay(&exp, n, &DecayOptions::default()))?;
        let (c, d) = r.bounds.unwrap_or((f64::NAN, f64::NAN));
        *out = DwlDecaySummary {
            lambda1: r.lambda1,
            delta_cont: c,
            delta_disc: d,
            delta_fit: r.fit.as_ref().map_or(f64::NAN, |f| f.delta),
            steps: r.trace.rows.len().saturating_sub(1),
            dissipation: verdict_code(&r.dissipation),
            sandwich: verdict_code(&r.sandwich),
            decay_bound: verdict_code(&r.decay_bound),
            rate_floor: verdict_code(&r.rate_floor),
        };
        Ok(())
    })
}
