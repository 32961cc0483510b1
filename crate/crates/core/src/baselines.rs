//! Least-squares benchmark models: DMDc, eDMDc, Koopman-with-control and DFL.
//!
//! Every fit regresses next-step targets on the lifted datum
//! `ξ_t = (x, ζ, η, u)_t` over the training transitions. They differ in the
//! lift `η` and in which rows of the model are regressed:
//!
//! - DMDc: no lift, every row regressed.
//! - eDMDc and Koopman: `η` is a polynomial basis over `(x, ζ)`, small for
//!   eDMDc and large for Koopman.
//! - DFL: no lift, the state rows fixed by physical structure and only the
//!   observable rows regressed.

use serde::{Deserialize, Serialize};

use crate::causality::{estimate_filter_from, fold_input, AnticausalFilter};
use crate::lifting::{transition_pairs, Dataset, LiftDims, LiftedLinearModel, PolyBasis, SplitTag, TransitionPair};
use crate::numerics::{solve_least_squares, Matrix};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Dmdc,
    Edmdc,
    KoopmanWithControl,
    Dfl,
}

/// Options shared by every fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Estimate the anticausal filter on the training split and regress on
    /// cleaned observables. The returned model is folded for raw ones.
    pub use_filter: bool,
    /// Tikhonov weight; 0 reports ill-conditioned regressions as errors.
    pub ridge: f64,
}

/// A fitted baseline: linear model, optional polynomial lift over
/// `(x, ζ*)`, and the filter it was fitted with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub linear: LiftedLinearModel,
    pub basis: Option<PolyBasis>,
    pub filter: Option<AnticausalFilter>,
}

impl BaselineModel {
    /// Lifted dimension as conventionally reported: the datum length `p`,
    /// except for Koopman, which counts state plus features.
    pub fn reported_dimension(&self) -> usize {
        let d = self.linear.dims();
        match self.kind {
            BaselineKind::KoopmanWithControl => d.l + d.m,
            _ => d.p(),
        }
    }
}

/// Training pairs with the filter applied when requested.
fn training_pairs(ds: &Dataset, options: &FitOptions) -> Result<(Vec<TransitionPair>, Option<AnticausalFilter>)> {
    let pairs = transition_pairs(ds, SplitTag::Train)?;
    if !options.use_filter || ds.observable_dim() == 0 {
        return Ok((pairs, None));
    }
    let filter = estimate_filter_from(ds)?;
    let cleaned = pairs.iter().map(|p| filter.clean_pair(p)).collect::<Result<_>>()?;
    Ok((cleaned, Some(filter)))
}

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    parts.concat()
}

/// Datum rows `ξ_t` and targets `((x, ζ)_{t+1}, η_{t+1})`.
fn regression_data(pairs: &[TransitionPair], dims: &LiftDims, basis: Option<&PolyBasis>) -> Result<(Matrix, Matrix)> {
    let lift = |x: &[f64], zeta: &[f64]| -> Result<Vec<f64>> {
        match basis {
            Some(b) => b.features(&concat(&[x, zeta])),
            None => Ok(Vec::new()),
        }
    };
    let k = dims.a_rows() + dims.m;
    let mut xs = Matrix::zeros(pairs.len(), dims.p());
    let mut ys = Matrix::zeros(pairs.len(), k);
    for (i, pair) in pairs.iter().enumerate() {
        let eta = lift(&pair.x, &pair.zeta)?;
        let eta_next = lift(&pair.x_next, &pair.zeta_next)?;
        xs.row_mut(i)
            .copy_from_slice(&concat(&[&pair.x, &pair.zeta, &eta, &pair.u]));
        ys.row_mut(i)
            .copy_from_slice(&concat(&[&pair.x_next, &pair.zeta_next, &eta_next]));
    }
    Ok((xs, ys))
}

fn fit_lifted(ds: &Dataset, kind: BaselineKind, basis: Option<PolyBasis>, options: &FitOptions) -> Result<BaselineModel> {
    let m = basis.as_ref().map_or(0, PolyBasis::len);
    if let Some(b) = &basis {
        if b.dim() != ds.state_dim() + ds.observable_dim() {
            return Err(Error::dims("basis input", ds.state_dim() + ds.observable_dim(), b.dim()));
        }
    }
    let dims = LiftDims::new(ds.state_dim(), ds.observable_dim(), m, ds.input_dim());
    let (pairs, filter) = training_pairs(ds, options)?;
    let (xs, ys) = regression_data(&pairs, &dims, basis.as_ref())?;
    let w = solve_least_squares(&xs, &ys, options.ridge)?.transpose();
    let d = dims.a_rows();
    let linear = LiftedLinearModel::new(dims, w.block(0, 0, d, dims.p()), w.block(d, 0, m, dims.p()))?;
    finish(kind, linear, basis, filter)
}

fn finish(
    kind: BaselineKind,
    linear: LiftedLinearModel,
    basis: Option<PolyBasis>,
    filter: Option<AnticausalFilter>,
) -> Result<BaselineModel> {
    let linear = match &filter {
        Some(f) => fold_input(&linear, f)?,
        None => linear,
    };
    Ok(BaselineModel {
        kind,
        linear,
        basis,
        filter,
    })
}

/// `(x, ζ, u)_t ↦ (x, ζ)_{t+1}` by least squares.
pub fn fit_dmdc(ds: &Dataset, options: &FitOptions) -> Result<BaselineModel> {
    fit_lifted(ds, BaselineKind::Dmdc, None, options)
}

/// Lift by `basis` over `(x, ζ)` and regress both `A` and `H`.
pub fn fit_edmdc(ds: &Dataset, basis: PolyBasis, options: &FitOptions) -> Result<BaselineModel> {
    fit_lifted(ds, BaselineKind::Edmdc, Some(basis), options)
}

/// The two lowest graded-lex monomials of degree at least 2 over `(x, ζ)`.
pub fn default_edmdc_basis(state_dim: usize, observable_dim: usize) -> Result<PolyBasis> {
    PolyBasis::graded_lex(state_dim + observable_dim, 2, 2)
}

/// eDMDc over the first `feature_count` graded-lex monomials of degree at
/// least 2 over `(x, ζ)`.
pub fn fit_koopman(ds: &Dataset, feature_count: usize, options: &FitOptions) -> Result<BaselineModel> {
    if feature_count == 0 {
        return Err(Error::InvalidArgument("Koopman needs at least one feature".into()));
    }
    let basis = PolyBasis::graded_lex(ds.state_dim() + ds.observable_dim(), 2, feature_count)?;
    fit_lifted(ds, BaselineKind::KoopmanWithControl, Some(basis), options)
}

/// State rows fixed to `structural_a` (`l × (l+z+n)` over the cleaned datum
/// `(x, ζ*, u)`), observable rows regressed.
pub fn fit_dfl(ds: &Dataset, structural_a: &Matrix, options: &FitOptions) -> Result<BaselineModel> {
    let dims = LiftDims::new(ds.state_dim(), ds.observable_dim(), 0, ds.input_dim());
    if structural_a.shape() != (dims.l, dims.p()) {
        return Err(Error::dims("structural A columns", dims.p(), structural_a.cols()));
    }
    let (pairs, filter) = training_pairs(ds, options)?;
    let (xs, ys) = regression_data(&pairs, &dims, None)?;
    let a = if dims.z > 0 {
        let targets = ys.block(0, dims.l, ys.rows(), dims.z);
        let h = solve_least_squares(&xs, &targets, options.ridge)?.transpose();
        Matrix::vstack(&[structural_a, &h])?
    } else {
        structural_a.clone()
    };
    let linear = LiftedLinearModel::new(dims, a, Matrix::zeros(0, dims.p()))?;
    finish(BaselineKind::Dfl, linear, None, filter)
}

/// Forward-Euler state row `q_{t+1} = q_t + Δt·f_t` for the toy plant,
/// written over the cleaned datum `(q, f*, e_C, u)` where `f = f* + D̂_f u`.
pub fn toy_structural_a(dt: f64, filter: Option<&AnticausalFilter>) -> Matrix {
    let d_f = filter.map_or(0.0, |f| f.d_hat[(0, 0)]);
    Matrix::from_rows(&[[1.0, dt, 0.0, dt * d_f]]).expect("fixed shape")
}

/// DFL on the toy plant with its structural state row.
pub fn fit_toy_dfl(ds: &Dataset, options: &FitOptions) -> Result<BaselineModel> {
    if (ds.state_dim(), ds.observable_dim(), ds.input_dim()) != (1, 2, 1) {
        return Err(Error::InvalidArgument(
            "the toy structural A needs l = 1, z = 2, n = 1; supply one for this dataset".into(),
        ));
    }
    let filter = if options.use_filter {
        Some(estimate_filter_from(ds)?)
    } else {
        None
    };
    fit_dfl(ds, &toy_structural_a(ds.dt(), filter.as_ref()), options)
}
