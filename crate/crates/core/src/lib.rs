//! Adaptive finite element methods with inexact iterative solvers for
//! second-order elliptic problems on 2D triangular meshes.

pub mod afem;
pub mod bench;
pub mod error;
pub mod estimator;
pub mod fespace;
pub mod goafem;
pub mod iterlin;
pub mod linsolve;
pub mod marking;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod sparse;

pub use error::{AfemError, Result};
