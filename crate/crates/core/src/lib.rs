//! Numerical laboratory for the strongly damped wave equation
//! `u″ + βAu′ + αu′ + Au = f`, `A = −Δ` with homogeneous Dirichlet data.
//!
//! Two spatial backends (P1 finite elements and 5-point finite differences)
//! share one fully discrete time stepper. Diagnostics check the discrete
//! energy decay inequalities step by step, and the harness reproduces
//! manufactured-solution convergence studies.

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod exact;
pub mod fdm;
pub mod fem;
pub mod field;
pub mod harness;
pub mod mesh;
pub mod oracle;
pub mod sparse;
pub mod stepper;

pub use error::{Error, Result};
