//! Removal of direct input feedthrough from measured observables.
//!
//! Measured observables are modelled as `ζ = ζ*(x) + D·u`. On centered data
//! `E[ζ* uᵀ] = 0`, so `D̂ = E[ζ uᵀ] E[u uᵀ]⁻¹` is an ordinary least-squares
//! regression of `ζ` on `u`, and `ζ* = ζ − D̂ u` is the causal part that a
//! lifted model may propagate.

use serde::{Deserialize, Serialize};

use crate::lifting::{DatumBlock, Dataset, LiftedLinearModel, SplitTag, TransitionPair};
use crate::numerics::{gemm, solve_least_squares, Matrix, Transpose};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnticausalFilter {
    /// `z × n` feedthrough estimate.
    pub d_hat: Matrix,
    pub mean_zeta: Vec<f64>,
    pub mean_u: Vec<f64>,
}

impl AnticausalFilter {
    /// Filter that leaves observables unchanged.
    pub fn identity(z: usize, n: usize) -> Self {
        AnticausalFilter {
            d_hat: Matrix::zeros(z, n),
            mean_zeta: vec![0.0; z],
            mean_u: vec![0.0; n],
        }
    }

    pub fn observable_dim(&self) -> usize {
        self.d_hat.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.d_hat.cols()
    }

    /// `ζ* = ζ − D̂ u`. The stored means are not subtracted.
    pub fn clean(&self, zeta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if zeta.len() != self.observable_dim() {
            return Err(Error::dims("filter observable", self.observable_dim(), zeta.len()));
        }
        let du = self.d_hat.matvec(u)?;
        Ok(zeta.iter().zip(du).map(|(z, d)| z - d).collect())
    }

    /// Inverse of [`AnticausalFilter::clean`]: `ζ = ζ* + D̂ u`.
    pub fn restore(&self, zeta_star: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if zeta_star.len() != self.observable_dim() {
            return Err(Error::dims("filter observable", self.observable_dim(), zeta_star.len()));
        }
        let du = self.d_hat.matvec(u)?;
        Ok(zeta_star.iter().zip(du).map(|(z, d)| z + d).collect())
    }

    /// Cleans both ends of a transition, each with its own input sample.
    pub fn clean_pair(&self, pair: &TransitionPair) -> Result<TransitionPair> {
        Ok(TransitionPair {
            zeta: self.clean(&pair.zeta, &pair.u)?,
            zeta_next: self.clean(&pair.zeta_next, &pair.u_next)?,
            ..pair.clone()
        })
    }
}

/// Estimates `D̂` from `N×z` observable samples and `N×n` input samples after
/// centering both by their sample means.
pub fn estimate_filter(zeta: &Matrix, u: &Matrix) -> Result<AnticausalFilter> {
    let n_samples = u.rows();
    if zeta.rows() != n_samples {
        return Err(Error::dims("filter sample count", n_samples, zeta.rows()));
    }
    if n_samples <= u.cols() {
        return Err(Error::InvalidArgument(format!(
            "filter estimation needs more samples ({n_samples}) than inputs ({})",
            u.cols()
        )));
    }
    let mean_zeta = column_means(zeta);
    let mean_u = column_means(u);
    let zeta_c = centered(zeta, &mean_zeta);
    let u_c = centered(u, &mean_u);
    // rows satisfy ζ_cᵀ ≈ u_cᵀ D̂ᵀ
    let d_hat_t = solve_least_squares(&u_c, &zeta_c, 0.0)?;
    Ok(AnticausalFilter {
        d_hat: d_hat_t.transpose(),
        mean_zeta,
        mean_u,
    })
}

/// [`estimate_filter`] over every sample of the training split.
pub fn estimate_filter_from(ds: &Dataset) -> Result<AnticausalFilter> {
    let (zeta, u) = ds.observable_input_samples(SplitTag::Train);
    estimate_filter(&zeta, &u)
}

fn column_means(m: &Matrix) -> Vec<f64> {
    let mut means = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (acc, v) in means.iter_mut().zip(m.row(i)) {
            *acc += v;
        }
    }
    let scale = 1.0 / m.rows() as f64;
    means.iter_mut().for_each(|v| *v *= scale);
    means
}

fn centered(m: &Matrix, means: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] - means[j])
}

/// Rewrites a model trained on cleaned observables so that it consumes raw
/// measured `ζ`: `A_u ← A_u − A_ζ D̂`, `H_u ← H_u − H_ζ D̂`.
///
/// Afterwards `A·(x, ζ, η, u) = A_unfolded·(x, ζ − D̂u, η, u)` for every
/// datum, and likewise for `H`. The predicted observable block is still `ζ*`.
pub fn fold_input(model: &LiftedLinearModel, filter: &AnticausalFilter) -> Result<LiftedLinearModel> {
    if model.is_folded() {
        return Err(Error::AlreadyFolded);
    }
    let dims = model.dims();
    if filter.observable_dim() != dims.z {
        return Err(Error::dims("fold observable width", dims.z, filter.observable_dim()));
    }
    if filter.input_dim() != dims.n {
        return Err(Error::dims("fold input width", dims.n, filter.input_dim()));
    }
    let (dims, mut a, mut h, _) = model.clone().into_parts();
    let u_cols = dims.columns(DatumBlock::Input);
    for m in [&mut a, &mut h] {
        let zeta_block = m.block(0, dims.l, m.rows(), dims.z);
        let mut u_block = m.block(0, u_cols.start, m.rows(), dims.n);
        gemm(-1.0, &zeta_block, Transpose::No, &filter.d_hat, Transpose::No, 1.0, &mut u_block);
        m.set_block(0, u_cols.start, &u_block);
    }
    LiftedLinearModel::from_parts_folded(dims, a, h)
}
