//! Modal ground truth on rectangles.
//!
//! Restricted to one Dirichlet eigenmode with eigenvalue λ, the damped wave
//! equation becomes the scalar oscillator `ü + (α + βλ) u̇ + λ u = 0`, and the
//! fully discrete scheme becomes a three-term recurrence. Both are solved here
//! independently of any matrix code.

use crate::mesh::Rectangle;
use std::f64::consts::PI;

/// Relative discriminant threshold below which the critically damped branch is used.
pub const CRITICAL_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub p: usize,
    pub q: usize,
    pub lambda: f64,
    /// Initial amplitude.
    pub a0: f64,
    /// Initial velocity.
    pub b0: f64,
}

impl Mode {
    /// Mode `(p, q)` with the continuous eigenvalue of −Δ on `rect`.
    pub fn continuous(rect: &Rectangle, p: usize, q: usize, a0: f64, b0: f64) -> Self {
        let lambda = (p as f64 * PI / rect.width()).powi(2) + (q as f64 * PI / rect.height()).powi(2);
        Self { p, q, lambda, a0, b0 }
    }

    /// Mode `(p, q)` with the 5-point eigenvalue on a square of side `side` and spacing `h`.
    pub fn finite_difference(side: f64, h: f64, p: usize, q: usize, a0: f64, b0: f64) -> Self {
        let lambda = crate::fdm::fd_mode_eigenvalue(h, side, p, q);
        Self { p, q, lambda, a0, b0 }
    }
}

/// Closed-form `(u(t), u̇(t))` of `ü + (α + βλ) u̇ + λ u = 0`.
pub fn modal_continuous(mode: &Mode, alpha: f64, beta: f64, t: f64) -> (f64, f64) {
    let lam = mode.lambda;
    let s = alpha + beta * lam;
    let disc = s * s - 4.0 * lam;
    let (a0, b0) = (mode.a0, mode.b0);
    let scale = if s > 0.0 { s * s } else { 4.0 * lam };
    if disc.abs() <= CRITICAL_THRESHOLD * scale {
        let r = -0.5 * s;
        let c2 = b0 - r * a0;
        let e = (r * t).exp();
        let u = (a0 + c2 * t) * e;
        (u, (c2 + r * (a0 + c2 * t)) * e)
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        // stable root pair
        let r1 = if s >= 0.0 { -0.5 * (s + sq) } else { -0.5 * (s - sq) };
        let r2 = lam / r1;
        let c1 = (b0 - r2 * a0) / (r1 - r2);
        let c2 = a0 - c1;
        let (e1, e2) = ((r1 * t).exp(), (r2 * t).exp());
        (c1 * e1 + c2 * e2, c1 * r1 * e1 + c2 * r2 * e2)
    } else {
        let mu = -0.5 * s;
        let omega = 0.5 * (-disc).sqrt();
        let c2 = (b0 - mu * a0) / omega;
        let e = (mu * t).exp();
        let (sn, cs) = (omega * t).sin_cos();
        let u = e * (a0 * cs + c2 * sn);
        let du = mu * u + e * omega * (-a0 * sn + c2 * cs);
        (u, du)
    }
}

/// Energy `½(u̇² + λu²)` of one mode.
pub fn modal_energy(lambda: f64, u: f64, u_dot: f64) -> f64 {
    0.5 * (u_dot * u_dot + lambda * u * u)
}

/// Iterates the per-mode fully discrete recurrence
/// `[(1/k² + α/k) + (β/k + 1)λ] u⁺ = (2/k² + α/k + βλ/k) u − u⁻/k²`.
///
/// Returns `u⁰, u¹, …, u^{n_steps+1}`.
pub fn modal_recurrence(lambda: f64, alpha: f64, beta: f64, k: f64, u0: f64, u1: f64, n_steps: usize) -> Vec<f64> {
    let lhs = (1.0 / (k * k) + alpha / k) + (beta / k + 1.0) * lambda;
    let c_curr = 2.0 / (k * k) + alpha / k + beta * lambda / k;
    let c_prev = 1.0 / (k * k);
    let mut out = Vec::with_capacity(n_steps + 2);
    out.push(u0);
    out.push(u1);
    for n in 1..=n_steps {
        let next = (c_curr * out[n] - c_prev * out[n - 1]) / lhs;
        out.push(next);
    }
    out
}
