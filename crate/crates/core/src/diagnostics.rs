//! Energies, decay-rate bounds, fitted decay rates and convergence tables.

use crate::error::{Error, Result};
use crate::fem::ErrorNorms;
use crate::sparse::{dot, solve_spd, STEP_RTOL};
use crate::stepper::{BackendHandles, BackendKind, StepperState};

/// Run metadata carried by a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda1: Option<f64>,
    pub k: f64,
    pub n_per_side: usize,
    pub backend: BackendKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRow {
    pub t: f64,
    pub energy: f64,
    pub extended: Option<f64>,
    pub energy_a: Option<f64>,
    /// Energy of the exact solution at `t`, when known.
    pub continuous: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyTrace {
    pub rows: Vec<EnergyRow>,
    pub delta: Option<f64>,
    pub meta: TraceMeta,
}

impl EnergyTrace {
    pub fn new(meta: TraceMeta) -> Self {
        Self {
            rows: Vec::new(),
            delta: None,
            meta,
        }
    }

    /// Appends a row; times must increase strictly and energies be non-negative.
    pub fn push(&mut self, row: EnergyRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if !(row.t > last.t) {
                return Err(Error::invalid(format!("trace times must increase ({} after {})", row.t, last.t)));
            }
        }
        if !(row.energy >= 0.0) {
            return Err(Error::invalid(format!("negative energy {} at t = {}", row.energy, row.t)));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn initial_energy(&self) -> Option<f64> {
        self.rows.first().map(|r| r.energy)
    }
}

/// `E^n = ½(‖∂_t U^n‖² + |U^{n+1}|²₁)` for the pair held by `state`.
pub fn discrete_energy(state: &StepperState, backend: &BackendHandles) -> f64 {
    let d = state.velocity();
    0.5 * (backend.mass.quadratic_form(&d) + backend.stiffness.quadratic_form(&state.u_curr))
}

/// `Ẽ_δ^n = E^n + δ (∂_t U^n, U^{n+1})`.
pub fn extended_energy(state: &StepperState, backend: &BackendHandles, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta must be positive"));
    }
    let d = state.velocity();
    Ok(discrete_energy(state, backend) + delta * backend.mass.bilinear_form(&d, &state.u_curr))
}

/// `E_A = ½(|∂_t U^n|²₁ + ‖A_h U^{n+1}‖²)` with `M w = K U^{n+1}`.
pub fn energy_ea(state: &StepperState, backend: &BackendHandles) -> Result<f64> {
    let d = state.velocity();
    let ku = backend.stiffness.spmv(&state.u_curr)?;
    let w = solve_spd(&backend.mass, &ku, STEP_RTOL)?;
    Ok(0.5 * (backend.stiffness.quadratic_form(&d) + dot(&w, &ku)))
}

/// Admissible decay rates `(δ_cont, δ_disc)`:
/// `min((α+βλ₁)/2, λ₁/(α+βλ₁))` and `min((α+βλ₁)/2, λ₁/(2(α+βλ₁)))`.
pub fn decay_bounds(alpha: f64, beta: f64, lambda1: f64) -> Result<(f64, f64)> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::invalid("decay bounds need alpha, beta >= 0"));
    }
    if !(lambda1 > 0.0) {
        return Err(Error::invalid("decay bounds need lambda1 > 0"));
    }
    let s = alpha + beta * lambda1;
    if !(s > 0.0) {
        return Err(Error::invalid("decay bounds need alpha + beta > 0"));
    }
    Ok(((0.5 * s).min(lambda1 / s), (0.5 * s).min(lambda1 / (2.0 * s))))
}

/// Step-size condition `δ k ≤ 34/205` for the fully discrete decay bound.
pub fn decay_bound_applies(delta: f64, k: f64) -> bool {
    delta * k <= 34.0 / 205.0
}

/// `3 e^{−δ t/15} E⁰`.
pub fn decay_bound_curve(delta: f64, t: f64, e0: f64) -> f64 {
    3.0 * (-delta * t / 15.0).exp() * e0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    /// Least-squares slope of `log E` against `t`.
    pub slope: f64,
    /// `−slope / 2`, since the energy decays like `e^{−2δt}`.
    pub delta: f64,
    pub samples: usize,
}

/// Fits `log E^n ≈ c + s t_n` over `t ∈ [t0, t1]`.
pub fn fit_decay_rate(trace: &EnergyTrace, t0: f64, t1: f64) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .filter(|r| r.t >= t0 && r.t <= t1)
        .map(|r| (r.t, r.energy))
        .collect();
    if pts.len() < 5 {
        return Err(Error::invalid(format!(
            "decay fit needs at least 5 samples in [{t0}, {t1}], found {}",
            pts.len()
        )));
    }
    if let Some((t, e)) = pts.iter().find(|(_, e)| !(*e > 0.0)) {
        return Err(Error::invalid(format!("non-positive energy {e} at t = {t} in fit window")));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1.ln() - lm)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(DecayFit {
        slope,
        delta: -0.5 * slope,
        samples: pts.len(),
    })
}

/// Outcome of checking an inequality at every recorded step.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Holds,
    Violated { step: usize, t: f64, detail: String },
    NotApplicable(String),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Holds)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Holds => "PASS",
            Verdict::Violated { .. } => "FAIL",
            Verdict::NotApplicable(_) => "N/A",
        }
    }
}

/// `E^n ≤ E^{n−1}(1 + slack)` for every step.
pub fn check_dissipation(trace: &EnergyTrace, slack: f64) -> Verdict {
    for (i, w) in trace.rows.windows(2).enumerate() {
        if w[1].energy > w[0].energy * (1.0 + slack) {
            return Verdict::Violated {
                step: i + 1,
                t: w[1].t,
                detail: format!("E = {:.6e} after {:.6e}", w[1].energy, w[0].energy),
            };
        }
    }
    Verdict::Holds
}

/// `½E^n ≤ Ẽ_δ^n ≤ 3/2 E^n` for every row that recorded `Ẽ`.
pub fn check_sandwich(trace: &EnergyTrace) -> Verdict {
    if trace.delta.is_none() {
        return Verdict::NotApplicable("no extended energy recorded".into());
    }
    let slack = 1e-12;
    for (i, r) in trace.rows.iter().enumerate() {
        if let Some(ext) = r.extended {
            let lo = 0.5 * r.energy;
            let hi = 1.5 * r.energy;
            if ext < lo - slack * r.energy || ext > hi + slack * r.energy {
                return Verdict::Violated {
                    step: i,
                    t: r.t,
                    detail: format!("E~ = {ext:.6e} outside [{lo:.6e}, {hi:.6e}]"),
                };
            }
        }
    }
    Verdict::Holds
}

/// `E^n ≤ 3 e^{−δ t_n/15} E⁰` for every row, when `δ k ≤ 34/205`.
pub fn check_decay_bound(trace: &EnergyTrace, delta: f64) -> Verdict {
    let k = trace.meta.k;
    if !decay_bound_applies(delta, k) {
        return Verdict::NotApplicable(format!("delta*k = {:.4} exceeds 34/205", delta * k));
    }
    let Some(e0) = trace.initial_energy() else {
        return Verdict::NotApplicable("empty trace".into());
    };
    for (i, r) in trace.rows.iter().enumerate() {
        let bound = decay_bound_curve(delta, r.t, e0);
        if r.energy > bound * (1.0 + 1e-12) {
            return Verdict::Violated {
                step: i,
                t: r.t,
                detail: format!("E = {:.6e} above bound {bound:.6e}", r.energy),
            };
        }
    }
    Verdict::Holds
}

/// One refinement level: `N` and its errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceInput {
    pub n: usize,
    pub errors: ErrorNorms,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub l2: f64,
    pub linf: f64,
    pub h1: f64,
    pub rate_l2: Option<f64>,
    pub rate_linf: Option<f64>,
    pub rate_h1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

/// `(log e_i − log e_{i+1}) / log(h_i / h_{i+1})`; `None` when an error is zero.
pub fn rate(e_coarse: f64, e_fine: f64, h_ratio: f64) -> Option<f64> {
    if e_coarse > 0.0 && e_fine > 0.0 {
        Some((e_coarse.ln() - e_fine.ln()) / h_ratio.ln())
    } else {
        None
    }
}

/// Rates between consecutive levels with `h ∝ 1/N`.
pub fn convergence_rates(rows: &[ConvergenceInput]) -> Result<ConvergenceTable> {
    for w in rows.windows(2) {
        if w[1].n <= w[0].n {
            return Err(Error::invalid("refinement levels must have strictly increasing N"));
        }
    }
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let e = r.errors;
        let (rl2, rinf, rh1) = if i == 0 {
            (None, None, None)
        } else {
            let p = rows[i - 1];
            let ratio = r.n as f64 / p.n as f64;
            (
                rate(p.errors.l2, e.l2, ratio),
                rate(p.errors.linf, e.linf, ratio),
                rate(p.errors.h1, e.h1, ratio),
            )
        };
        out.push(ConvergenceRow {
            n: r.n,
            l2: e.l2,
            linf: e.linf,
            h1: e.h1,
            rate_l2: rl2,
            rate_linf: rinf,
            rate_h1: rh1,
        });
    }
    Ok(ConvergenceTable { rows: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use crate::mesh::Rectangle;
    use crate::stepper::{init_state, run, InitMode, ModelParams, TraceOptions};
    use std::f64::consts::PI;

    fn meta() -> TraceMeta {
        TraceMeta {
            alpha: None,
            beta: None,
            lambda1: None,
            k: 0.01,
            n_per_side: 1,
            backend: BackendKind::Fem,
        }
    }

    fn input(n: usize, l2: f64, linf: f64, h1: f64) -> ConvergenceInput {
        ConvergenceInput {
            n,
            errors: ErrorNorms { l2, linf, h1 },
        }
    }

    #[test]
    fn bounds_examples() {
        let (c, d) = decay_bounds(PI, 1.0 / PI, 2.0 * PI * PI).unwrap();
        assert!((c - 2.0 * PI / 3.0).abs() < 1e-14);
        assert!((d - PI / 3.0).abs() < 1e-14);
        let a = (PI * PI + 2.0) / PI;
        let (c, _) = decay_bounds(a, 0.0, 2.0).unwrap();
        assert!((c - 2.0 * PI / (PI * PI + 2.0)).abs() < 1e-14);
        assert!((c - 0.5295).abs() < 5e-4);
        assert!(decay_bounds(0.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn bounds_depend_on_total_damping_only() {
        let lam = 3.7;
        let (a, b) = (0.8, 0.4);
        let x = decay_bounds(a, b, lam).unwrap();
        let y = decay_bounds(b * lam, a / lam, lam).unwrap();
        assert!((x.0 - y.0).abs() < 1e-14 && (x.1 - y.1).abs() < 1e-14);
    }

    #[test]
    fn fit_exact_exponential() {
        let mut tr = EnergyTrace::new(meta());
        for i in 0..100 {
            let t = 0.01 * i as f64;
            tr.push(EnergyRow {
                t,
                energy: (-2.0 * PI * t).exp(),
                extended: None,
                energy_a: None,
                continuous: None,
            })
            .unwrap();
        }
        let f = fit_decay_rate(&tr, 0.2, 0.8).unwrap();
        assert!((f.delta - PI).abs() < 1e-10);
        assert!((f.slope + 2.0 * PI).abs() < 1e-10);
        assert!(fit_decay_rate(&tr, 0.2, 0.23).is_err());
    }

    #[test]
    fn fit_rejects_zero_energy() {
        let mut tr = EnergyTrace::new(meta());
        for i in 0..10 {
            tr.push(EnergyRow {
                t: i as f64,
                energy: if i == 4 { 0.0 } else { 1.0 },
                extended: None,
                energy_a: None,
                continuous: None,
            })
            .unwrap();
        }
        assert!(fit_decay_rate(&tr, 0.0, 9.0).is_err());
    }

    #[test]
    fn trace_invariants() {
        let mut tr = EnergyTrace::new(meta());
        let row = EnergyRow {
            t: 1.0,
            energy: 1.0,
            extended: None,
            energy_a: None,
            continuous: None,
        };
        tr.push(row).unwrap();
        assert!(tr.push(row).is_err());
        assert!(tr.push(EnergyRow { t: 2.0, energy: -1.0, ..row }).is_err());
    }

    #[test]
    fn rates_from_published_rows() {
        let t = convergence_rates(&[input(5, 8.8349e-3, 1.0, 1.0401e-1), input(10, 2.1124e-3, 1.0, 3.4207e-2)]).unwrap();
        assert!(t.rows[0].rate_l2.is_none());
        assert!((t.rows[1].rate_l2.unwrap() - 2.0643).abs() < 5e-5);
        assert!((t.rows[1].rate_h1.unwrap() - 1.6044).abs() < 5e-5);
        let t = convergence_rates(&[input(4, 1.0, 1.0, 1.0), input(8, 0.5, 0.5, 0.5)]).unwrap();
        assert!((t.rows[1].rate_l2.unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rates_edge_cases() {
        assert!(convergence_rates(&[input(8, 1.0, 1.0, 1.0), input(8, 1.0, 1.0, 1.0)]).is_err());
        let t = convergence_rates(&[input(4, 0.0, 0.0, 0.0), input(8, 0.0, 0.0, 0.0)]).unwrap();
        assert!(t.rows[1].rate_l2.is_none());
    }

    #[test]
    fn energies_on_simple_states() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 8).unwrap();
        let z = StepperState::new(0.1, vec![0.0; be.dofs()], vec![0.0; be.dofs()]).unwrap();
        assert_eq!(discrete_energy(&z, &be), 0.0);
        assert_eq!(energy_ea(&z, &be).unwrap(), 0.0);
        let u = be.interpolate(&ScalarField::sine_product(1.0, PI, PI, 0.0, 0.0));
        let s = StepperState::new(0.1, u.clone(), u).unwrap();
        let e = discrete_energy(&s, &be);
        assert_eq!(extended_energy(&s, &be, 0.7).unwrap(), e);
        assert!(extended_energy(&s, &be, 0.0).is_err());
        let moving = StepperState::new(0.1, vec![0.0; be.dofs()], s.u_curr.clone()).unwrap();
        let e = discrete_energy(&moving, &be);
        let tiny = extended_energy(&moving, &be, 1e-12).unwrap();
        assert!((tiny - e).abs() <= 1e-11 * e);
    }

    #[test]
    fn sandwich_and_bound_on_damped_run() {
        let be = BackendHandles::build(BackendKind::Fem, Rectangle::unit(), 8).unwrap();
        let sine = ScalarField::sine_product(1.0, PI, PI, 0.0, 0.0);
        let p = ModelParams::constant(0.5, 0.05, sine.clone(), ScalarField::sine_product(2.0, 2.0 * PI, PI, 0.0, 0.0))
            .unwrap();
        let lam = be.lambda1(1e-10).unwrap();
        let (_, d) = decay_bounds(0.5, 0.05, lam).unwrap();
        let s = init_state(&be, &p, 0.01, InitMode::Taylor, None).unwrap();
        let opts = TraceOptions {
            delta: Some(d),
            energy_a: false,
        };
        let (_, tr) = run(&be, &p, s, 3.0, opts, &mut []).unwrap();
        assert!(check_dissipation(&tr, 1e-10).passed());
        assert!(check_sandwich(&tr).passed());
        assert!(check_decay_bound(&tr, d).passed());
        assert!(matches!(check_decay_bound(&tr, 100.0), Verdict::NotApplicable(_)));
    }
}
