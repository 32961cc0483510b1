//! Learned lifting linearization of nonlinear controlled systems.
//!
//! The crate identifies low-order linear models over a lifted datum
//! `ξ = (x, ζ*, η, u)` where `x` is the state, `ζ*` are measured observables
//! with their direct input feedthrough removed, `η` are synthetic observables
//! produced by a small neural network, and `u` is the input.
//!
//! Module map:
//!
//! - [`numerics`]: dense matrices, least squares, seeded random numbers.
//! - [`plant`]: the first-order nonlinear RC toy plant and excitation signals.
//! - [`lifting`]: trajectories, datasets, datum assembly, polynomial bases.
//! - [`causality`]: the anticausal filter `ζ* = ζ - D̂u` and the input fold.
//! - [`baselines`]: DMDc, eDMDc, Koopman-with-control and DFL fits.
//! - [`neural`]: MLP with backpropagation and Adam.
//! - [`l3`]: joint training of the network and the linear model.
//! - [`eval`]: open-loop rollout and integrated squared error.

pub mod baselines;
pub mod causality;
mod error;
pub mod eval;
pub mod l3;
pub mod lifting;
pub mod neural;
pub mod numerics;
pub mod plant;

pub use error::{Error, Result};
