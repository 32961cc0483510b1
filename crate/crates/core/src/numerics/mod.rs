//! Dense linear algebra, least squares, and the seeded random-number source.

mod lstsq;
mod matrix;
mod rng;

pub use lstsq::{gram_condition_number, solve_least_squares, CONDITION_LIMIT};
pub use matrix::{gemm, Matrix, Transpose};
pub use rng::Rng;
