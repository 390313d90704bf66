//! Space-time exact solutions used for manufactured-solution studies.

use crate::field::ScalarField;
use crate::mesh::Rectangle;
use crate::oracle::{modal_continuous, Mode};
use std::sync::Arc;

/// A smooth `u(x, y, t)` together with the derivatives needed to evaluate the
/// PDE residual, continuous energies and error norms.
pub trait ExactSolution: Send + Sync {
    fn value(&self, x: f64, y: f64, t: f64) -> f64;
    fn gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2];
    fn dt(&self, x: f64, y: f64, t: f64) -> f64;
    fn dt_gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2];
    fn dtt(&self, x: f64, y: f64, t: f64) -> f64;
    /// `Δu`.
    fn laplacian(&self, x: f64, y: f64, t: f64) -> f64;
    /// `Δu_t`.
    fn laplacian_dt(&self, x: f64, y: f64, t: f64) -> f64;
}

/// `u(·, t)` as a field with gradient.
pub fn snapshot(u: &Arc<dyn ExactSolution>, t: f64) -> ScalarField {
    let (a, b) = (u.clone(), u.clone());
    ScalarField::with_gradient(move |x, y| a.value(x, y, t), move |x, y| b.gradient(x, y, t))
}

/// `u_t(·, t)` as a field with gradient.
pub fn velocity(u: &Arc<dyn ExactSolution>, t: f64) -> ScalarField {
    let (a, b) = (u.clone(), u.clone());
    ScalarField::with_gradient(move |x, y| a.dt(x, y, t), move |x, y| b.dt_gradient(x, y, t))
}

/// `e^{−σt} sin(kx (x − x0)) sin(ky (y − y0))`.
#[derive(Debug, Clone, Copy)]
pub struct SineProductSolution {
    pub decay: f64,
    pub kx: f64,
    pub ky: f64,
    pub x0: f64,
    pub y0: f64,
}

impl SineProductSolution {
    /// Fundamental Dirichlet mode of `rect` decaying at rate `decay`.
    pub fn fundamental(rect: &Rectangle, decay: f64) -> Self {
        let pi = std::f64::consts::PI;
        Self {
            decay,
            kx: pi / rect.width(),
            ky: pi / rect.height(),
            x0: rect.x0,
            y0: rect.y0,
        }
    }

    fn parts(&self, x: f64, y: f64) -> (f64, f64, f64, f64) {
        let (sx, cx) = (self.kx * (x - self.x0)).sin_cos();
        let (sy, cy) = (self.ky * (y - self.y0)).sin_cos();
        (sx, cx, sy, cy)
    }

    fn lambda(&self) -> f64 {
        self.kx * self.kx + self.ky * self.ky
    }
}

impl ExactSolution for SineProductSolution {
    fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        let (sx, _, sy, _) = self.parts(x, y);
        (-self.decay * t).exp() * sx * sy
    }

    fn gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let (sx, cx, sy, cy) = self.parts(x, y);
        let e = (-self.decay * t).exp();
        [e * self.kx * cx * sy, e * self.ky * sx * cy]
    }

    fn dt(&self, x: f64, y: f64, t: f64) -> f64 {
        -self.decay * self.value(x, y, t)
    }

    fn dt_gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        self.gradient(x, y, t).map(|g| -self.decay * g)
    }

    fn dtt(&self, x: f64, y: f64, t: f64) -> f64 {
        self.decay * self.decay * self.value(x, y, t)
    }

    fn laplacian(&self, x: f64, y: f64, t: f64) -> f64 {
        -self.lambda() * self.value(x, y, t)
    }

    fn laplacian_dt(&self, x: f64, y: f64, t: f64) -> f64 {
        self.lambda() * self.decay * self.value(x, y, t)
    }
}

/// A single Dirichlet mode of a rectangle evolving under constant damping,
/// with time dependence from the closed-form modal solution.
#[derive(Debug, Clone, Copy)]
pub struct ModalSolution {
    pub mode: Mode,
    pub rect: Rectangle,
    pub alpha: f64,
    pub beta: f64,
}

impl ModalSolution {
    pub fn new(rect: Rectangle, p: usize, q: usize, alpha: f64, beta: f64, a0: f64, b0: f64) -> Self {
        Self {
            mode: Mode::continuous(&rect, p, q, a0, b0),
            rect,
            alpha,
            beta,
        }
    }

    fn shape(&self, x: f64, y: f64) -> (f64, [f64; 2]) {
        let pi = std::f64::consts::PI;
        let kx = self.mode.p as f64 * pi / self.rect.width();
        let ky = self.mode.q as f64 * pi / self.rect.height();
        let (sx, cx) = (kx * (x - self.rect.x0)).sin_cos();
        let (sy, cy) = (ky * (y - self.rect.y0)).sin_cos();
        (sx * sy, [kx * cx * sy, ky * sx * cy])
    }

    fn amplitude(&self, t: f64) -> (f64, f64) {
        modal_continuous(&self.mode, self.alpha, self.beta, t)
    }
}

impl ExactSolution for ModalSolution {
    fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        self.amplitude(t).0 * self.shape(x, y).0
    }

    fn gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let a = self.amplitude(t).0;
        self.shape(x, y).1.map(|g| a * g)
    }

    fn dt(&self, x: f64, y: f64, t: f64) -> f64 {
        self.amplitude(t).1 * self.shape(x, y).0
    }

    fn dt_gradient(&self, x: f64, y: f64, t: f64) -> [f64; 2] {
        let a = self.amplitude(t).1;
        self.shape(x, y).1.map(|g| a * g)
    }

    fn dtt(&self, x: f64, y: f64, t: f64) -> f64 {
        let (a, da) = self.amplitude(t);
        let lam = self.mode.lambda;
        (-(self.alpha + self.beta * lam) * da - lam * a) * self.shape(x, y).0
    }

    fn laplacian(&self, x: f64, y: f64, t: f64) -> f64 {
        -self.mode.lambda * self.value(x, y, t)
    }

    fn laplacian_dt(&self, x: f64, y: f64, t: f64) -> f64 {
        -self.mode.lambda * self.dt(x, y, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_product_derivatives_match_finite_differences() {
        let u = SineProductSolution::fundamental(&Rectangle::pi_square(), PI);
        let (x, y, t) = (0.7, 1.9, 0.3);
        let e = 1e-5;
        let fd_t = (u.value(x, y, t + e) - u.value(x, y, t - e)) / (2.0 * e);
        assert!((fd_t - u.dt(x, y, t)).abs() < 1e-8);
        let fd_x = (u.value(x + e, y, t) - u.value(x - e, y, t)) / (2.0 * e);
        assert!((fd_x - u.gradient(x, y, t)[0]).abs() < 1e-8);
        let e2 = 1e-4;
        let lap = (u.value(x + e2, y, t) + u.value(x - e2, y, t) + u.value(x, y + e2, t) + u.value(x, y - e2, t)
            - 4.0 * u.value(x, y, t))
            / (e2 * e2);
        assert!((lap - u.laplacian(x, y, t)).abs() < 1e-5);
    }

    #[test]
    fn modal_solution_reduces_to_sine_product() {
        let rect = Rectangle::unit();
        let m = ModalSolution::new(rect, 1, 1, PI, 1.0 / PI, 1.0, -PI);
        let s = SineProductSolution::fundamental(&rect, PI);
        for &(x, y, t) in &[(0.2, 0.3, 0.0), (0.5, 0.9, 0.7), (0.1, 0.6, 1.3)] {
            assert!((m.value(x, y, t) - s.value(x, y, t)).abs() < 1e-13);
            assert!((m.dtt(x, y, t) - s.dtt(x, y, t)).abs() < 1e-11);
            assert!((m.laplacian_dt(x, y, t) - s.laplacian_dt(x, y, t)).abs() < 1e-11);
        }
    }
}
