//! IMEX Runge–Kutta discretizations of ODE-constrained optimal control problems.
//!
//! The crate covers the full discretize-then-optimize pipeline for problems of the form
//!
//! ```text
//! min j(y(T))   s.t.   y' = f(y, u) + g(y, u),   y(0) = y0
//! ```
//!
//! where `f` is integrated explicitly and the stiff part `g` implicitly:
//!
//! * [`tableau`]: IMEX coefficient pairs, builtin schemes, the text file format and
//!   the transformed coefficient families used by the adjoint schemes.
//! * [`order_check`]: order, coupling and symplecticity conditions evaluated on a tableau.
//! * [`problems`]: the control problem contract and the benchmark problems.
//! * [`integrate`]: forward state integration and the interchangeable discrete
//!   adjoint formulations, selected by name through a registry.
//! * [`optimize`]: reduced gradients, finite-difference oracles and the
//!   quasi-Newton optimality-system solver.
//! * [`symplectic`]: Jacobian based 2-form residuals of the coupled state/adjoint step.
//! * [`convergence`]: grid-refinement studies against a fine reference grid.

pub mod convergence;
pub mod error;
pub mod integrate;
pub mod optimize;
pub mod order_check;
pub mod problems;
pub mod report;
pub mod symplectic;
pub mod tableau;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
