//! Numerical kernels shared by every model in the crate: explicit Runge–Kutta
//! integration with dense output, one-dimensional quadrature, and scalar /
//! vector root finding.
//!
//! All kernels are pure functions of their arguments and can be called from
//! parallel drivers without coordination.

mod ode;
mod quadrature;
mod roots;

pub use ode::{flow_map, integrate, FieldFault, IntegratorMethod, IntegratorSpec, Trajectory};
pub use quadrature::{gauss_legendre_nodes, quad, QuadratureMethod, QuadratureSpec};
pub use roots::{find_root_1d, find_root_nd, LinearSolve, NdRoot, RootSpec};

use thiserror::Error;

/// Failures raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("invalid numerical specification: {0}")]
    InvalidSpec(String),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite vector field value at t = {t}")]
    NonFiniteField { t: f64 },
    #[error("vector field refused evaluation at t = {t}: {reason}")]
    FieldFault { t: f64, reason: String },
    #[error("step budget of {0} steps exhausted")]
    StepBudget(usize),
    #[error("non-finite integrand value at x = {x}")]
    NonFiniteIntegrand { x: f64 },
    #[error("quadrature subdivision budget of {budget} panels exhausted")]
    SubdivisionBudget { budget: usize },
    #[error("no sign change on [{a}, {b}]: f(a) = {fa:e}, f(b) = {fb:e}")]
    NoSignChange { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("iteration limit {max_iter} reached with residual {residual:e}")]
    MaxIter { max_iter: usize, residual: f64 },
    #[error("singular Jacobian at iterate {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("Newton iteration diverged at iterate {iteration}")]
    Divergence { iteration: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub(crate) fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
