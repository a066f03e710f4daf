//! Solvers for obstacle-type quasi-variational inequalities on
//! finite-difference grids, their directional derivatives, and
//! penalty-adjoint optimal control with stationarity audits.

// NaN-rejecting guards are written as `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod linsolve;
pub mod mesh;
pub mod obstacle;
pub mod qvi;
pub mod sensitivity;
pub mod spectral;
pub mod vector;
pub mod vi;

pub use error::{Error, Result};
pub use mesh::{assemble_operator, build_grid, DiscreteOperator, Grid, OperatorSpec};
pub use vector::{DualVector, StateVector};
