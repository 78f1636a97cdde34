//! Computational companion for Neumann sieves with random holes: capacity
//! cell problems, point-process sieves and their classification, the
//! effective coupling coefficient, the homogenized limit system and a direct
//! thin-domain solver.
//!
//! Grids, linear algebra and the capacity solvers are generic over the
//! scalar type; the crate-root aliases fix it to `f64`.

pub mod capacity;
pub mod effective;
pub mod error;
pub mod grid;
pub mod homogenized;
pub mod linalg;
pub mod point_process;
pub mod scalar;
pub mod sieve_direct;

pub use error::{Result, SieveError};
pub use scalar::Real;

pub type Axis64 = grid::Axis<f64>;
pub type CsrMatrix64 = linalg::CsrMatrix<f64>;
pub type AxisymGrid64 = capacity::axisym::AxisymGrid<f64>;
pub type AxisymSolution64 = capacity::axisym::AxisymSolution<f64>;
pub type HoleSpec64 = capacity::HoleSpec<f64>;
