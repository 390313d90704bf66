//! Scalar functions on the plane, optionally carrying an analytic gradient.

use std::fmt;
use std::sync::Arc;

type ValueFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
type SpaceTimeFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ScalarField {
    value: ValueFn,
    gradient: Option<GradFn>,
}

impl ScalarField {
    pub fn new(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(f),
            gradient: None,
        }
    }

    pub fn with_gradient(
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(f),
            gradient: Some(Arc::new(g)),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::with_gradient(move |_, _| c, |_, _| [0.0, 0.0])
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `amp · sin(p π (x − x0)/Lx) · sin(q π (y − y0)/Ly)` with its gradient.
    pub fn sine_product(amp: f64, kx: f64, ky: f64, x0: f64, y0: f64) -> Self {
        Self::with_gradient(
            move |x, y| amp * (kx * (x - x0)).sin() * (ky * (y - y0)).sin(),
            move |x, y| {
                let (sx, cx) = (kx * (x - x0)).sin_cos();
                let (sy, cy) = (ky * (y - y0)).sin_cos();
                [amp * kx * cx * sy, amp * ky * sx * cy]
            },
        )
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.value)(x, y)
    }

    pub fn gradient(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        self.gradient.as_ref().map(|g| g(x, y))
    }

    pub fn has_gradient(&self) -> bool {
        self.gradient.is_some()
    }

    /// Pointwise scaling of value and gradient.
    pub fn scaled(&self, c: f64) -> Self {
        let v = self.value.clone();
        let value: ValueFn = Arc::new(move |x, y| c * v(x, y));
        let gradient = self.gradient.clone().map(|g| -> GradFn {
            Arc::new(move |x, y| {
                let d = g(x, y);
                [c * d[0], c * d[1]]
            })
        });
        Self { value, gradient }
    }
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("gradient", &self.gradient.is_some())
            .finish()
    }
}

/// Right-hand side `f(x, y, t)`.
#[derive(Clone)]
pub struct Forcing {
    f: SpaceTimeFn,
    steady: bool,
}

impl Forcing {
    pub fn steady(field: ScalarField) -> Self {
        Self {
            f: Arc::new(move |x, y, _| field.eval(x, y)),
            steady: true,
        }
    }

    pub fn transient(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            steady: false,
        }
    }

    pub fn is_steady(&self) -> bool {
        self.steady
    }

    pub fn at(&self, t: f64) -> ScalarField {
        let f = self.f.clone();
        ScalarField::new(move |x, y| f(x, y, t))
    }
}

impl fmt::Debug for Forcing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Forcing").field("steady", &self.steady).finish()
    }
}
