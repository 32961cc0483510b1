//! Trajectories, datasets, lifted datum vectors and polynomial bases.
//!
//! The lifted datum is always ordered `ξ = (x, ζ*, η, u)` and every block of
//! `A` and `H` is a column slice under that convention.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::numerics::{Matrix, Rng};
use crate::{Error, Result};

/// Uniformly sampled record of states, inputs, and measured observables.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dt: f64,
    states: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    observables: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(
        dt: f64,
        states: Vec<Vec<f64>>,
        inputs: Vec<Vec<f64>>,
        observables: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("sample period must be positive, got {dt}")));
        }
        let len = states.len();
        if len < 2 {
            return Err(Error::InvalidArgument(format!(
                "a trajectory needs at least 2 samples, got {len}"
            )));
        }
        if inputs.len() != len {
            return Err(Error::dims("trajectory input count", len, inputs.len()));
        }
        if observables.len() != len {
            return Err(Error::dims("trajectory observable count", len, observables.len()));
        }
        for (series, context) in [
            (&states, "state width"),
            (&inputs, "input width"),
            (&observables, "observable width"),
        ] {
            let width = series[0].len();
            for row in series {
                if row.len() != width {
                    return Err(Error::dims(context, width, row.len()));
                }
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument("trajectory contains non-finite values".into()));
                }
            }
        }
        Ok(Trajectory {
            dt,
            states,
            inputs,
            observables,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn observable_dim(&self) -> usize {
        self.observables[0].len()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn observables(&self) -> &[Vec<f64>] {
        &self.observables
    }

    /// Same trajectory with the observable channel removed (`z = 0`).
    pub fn without_observables(&self) -> Trajectory {
        Trajectory {
            dt: self.dt,
            states: self.states.clone(),
            inputs: self.inputs.clone(),
            observables: vec![Vec::new(); self.len()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
        }
    }
}

/// Per-channel means over the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub observable: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
    split: Vec<SplitTag>,
    centering: Centering,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, split: Vec<SplitTag>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::InvalidArgument("dataset has no trajectories".into()));
        }
        if split.len() != trajectories.len() {
            return Err(Error::dims("split tag count", trajectories.len(), split.len()));
        }
        let first = &trajectories[0];
        let (l, n, z, dt) = (first.state_dim(), first.input_dim(), first.observable_dim(), first.dt());
        for t in &trajectories {
            if t.state_dim() != l {
                return Err(Error::dims("dataset state width", l, t.state_dim()));
            }
            if t.input_dim() != n {
                return Err(Error::dims("dataset input width", n, t.input_dim()));
            }
            if t.observable_dim() != z {
                return Err(Error::dims("dataset observable width", z, t.observable_dim()));
            }
            if (t.dt() - dt).abs() > 1e-9 * dt {
                return Err(Error::InvalidArgument(format!(
                    "trajectories disagree on sample period: {} vs {}",
                    dt,
                    t.dt()
                )));
            }
        }
        for tag in [SplitTag::Train, SplitTag::Validation] {
            if !split.contains(&tag) {
                return Err(Error::EmptySplit(tag.name()));
            }
        }
        let centering = centering_of(&trajectories, &split, l, n, z);
        Ok(Dataset {
            trajectories,
            split,
            centering,
        })
    }

    /// Random 80/20 train/validation split by trajectory; at least one
    /// trajectory lands in each part, so `count >= 2` is required.
    pub fn with_random_split(trajectories: Vec<Trajectory>, rng: &mut Rng) -> Result<Self> {
        let count = trajectories.len();
        if count < 2 {
            return Err(Error::InvalidArgument(format!(
                "a train/validation split needs at least 2 trajectories, got {count}"
            )));
        }
        let n_train = (count * 4 / 5).clamp(1, count - 1);
        let mut order: Vec<usize> = (0..count).collect();
        rng.shuffle(&mut order);
        let mut split = vec![SplitTag::Validation; count];
        for &i in &order[..n_train] {
            split[i] = SplitTag::Train;
        }
        Dataset::new(trajectories, split)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn split(&self) -> &[SplitTag] {
        &self.split
    }

    pub fn centering(&self) -> &Centering {
        &self.centering
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.trajectories[0].input_dim()
    }

    pub fn observable_dim(&self) -> usize {
        self.trajectories[0].observable_dim()
    }

    pub fn dt(&self) -> f64 {
        self.trajectories[0].dt()
    }

    pub fn in_split(&self, tag: SplitTag) -> impl Iterator<Item = &Trajectory> {
        self.trajectories
            .iter()
            .zip(&self.split)
            .filter(move |(_, &t)| t == tag)
            .map(|(traj, _)| traj)
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.split.iter().filter(|&&t| t == tag).count()
    }

    /// Observables and inputs of every sample in a split, as `N×z` and `N×n`.
    pub fn observable_input_samples(&self, tag: SplitTag) -> (Matrix, Matrix) {
        let mut zeta = Vec::new();
        let mut u = Vec::new();
        let mut rows = 0;
        for t in self.in_split(tag) {
            for (obs, inp) in t.observables().iter().zip(t.inputs()) {
                zeta.extend_from_slice(obs);
                u.extend_from_slice(inp);
                rows += 1;
            }
        }
        (
            Matrix::from_vec(rows, self.observable_dim(), zeta).expect("consistent widths"),
            Matrix::from_vec(rows, self.input_dim(), u).expect("consistent widths"),
        )
    }

    /// Same dataset with the observable channel removed (`z = 0`).
    pub fn without_observables(&self) -> Dataset {
        let trajectories: Vec<_> = self.trajectories.iter().map(Trajectory::without_observables).collect();
        let split = self.split.clone();
        let mut centering = self.centering.clone();
        centering.observable.clear();
        Dataset {
            trajectories,
            split,
            centering,
        }
    }
}

fn centering_of(trajectories: &[Trajectory], split: &[SplitTag], l: usize, n: usize, z: usize) -> Centering {
    let mut state = vec![0.0; l];
    let mut input = vec![0.0; n];
    let mut observable = vec![0.0; z];
    let mut count = 0usize;
    for (t, _) in trajectories.iter().zip(split).filter(|(_, &s)| s == SplitTag::Train) {
        for k in 0..t.len() {
            accumulate(&mut state, &t.states()[k]);
            accumulate(&mut input, &t.inputs()[k]);
            accumulate(&mut observable, &t.observables()[k]);
            count += 1;
        }
    }
    let scale = 1.0 / count as f64;
    for v in state.iter_mut().chain(&mut input).chain(&mut observable) {
        *v *= scale;
    }
    Centering {
        state,
        input,
        observable,
    }
}

fn accumulate(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// Two consecutive samples of one trajectory.
///
/// `zeta` fields hold whatever observable channel the producer chose: raw
/// measurements from [`transition_pairs`], or cleaned values after
/// [`crate::causality::AnticausalFilter::clean_pair`].
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionPair {
    pub x: Vec<f64>,
    pub zeta: Vec<f64>,
    pub u: Vec<f64>,
    pub x_next: Vec<f64>,
    pub zeta_next: Vec<f64>,
    pub u_next: Vec<f64>,
}

/// All consecutive-sample pairs of every trajectory in `tag`, in trajectory
/// then time order. Pairs never straddle two trajectories.
pub fn transition_pairs(ds: &Dataset, tag: SplitTag) -> Result<Vec<TransitionPair>> {
    if ds.count(tag) == 0 {
        return Err(Error::EmptySplit(tag.name()));
    }
    let mut pairs = Vec::new();
    for t in ds.in_split(tag) {
        for k in 0..t.len() - 1 {
            pairs.push(TransitionPair {
                x: t.states()[k].clone(),
                zeta: t.observables()[k].clone(),
                u: t.inputs()[k].clone(),
                x_next: t.states()[k + 1].clone(),
                zeta_next: t.observables()[k + 1].clone(),
                u_next: t.inputs()[k + 1].clone(),
            });
        }
    }
    Ok(pairs)
}

/// Block sizes of the lifted datum: state `l`, measured observables `z`,
/// synthetic observables `m`, inputs `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftDims {
    pub l: usize,
    pub z: usize,
    pub m: usize,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatumBlock {
    State,
    Observable,
    Synthetic,
    Input,
}

impl LiftDims {
    pub fn new(l: usize, z: usize, m: usize, n: usize) -> Self {
        LiftDims { l, z, m, n }
    }

    /// Datum length `p = l + z + m + n`.
    pub fn p(&self) -> usize {
        self.l + self.z + self.m + self.n
    }

    /// Rows of `A`: the predicted `(x, ζ*)` block.
    pub fn a_rows(&self) -> usize {
        self.l + self.z
    }

    pub fn columns(&self, block: DatumBlock) -> Range<usize> {
        let (l, z, m, n) = (self.l, self.z, self.m, self.n);
        match block {
            DatumBlock::State => 0..l,
            DatumBlock::Observable => l..l + z,
            DatumBlock::Synthetic => l + z..l + z + m,
            DatumBlock::Input => l + z + m..l + z + m + n,
        }
    }
}

/// Concatenates `(x, ζ*, η, u)` after checking each block against `dims`.
pub fn assemble_datum(dims: &LiftDims, x: &[f64], zeta: &[f64], eta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if x.len() != dims.l {
        return Err(Error::dims("datum state block", dims.l, x.len()));
    }
    if zeta.len() != dims.z {
        return Err(Error::dims("datum observable block", dims.z, zeta.len()));
    }
    if eta.len() != dims.m {
        return Err(Error::dims("datum synthetic block", dims.m, eta.len()));
    }
    if u.len() != dims.n {
        return Err(Error::dims("datum input block", dims.n, u.len()));
    }
    let mut xi = Vec::with_capacity(dims.p());
    xi.extend_from_slice(x);
    xi.extend_from_slice(zeta);
    xi.extend_from_slice(eta);
    xi.extend_from_slice(u);
    Ok(xi)
}

/// Linear model over the lifted datum:
/// `(x, ζ*)_{t+1} = A ξ_t`, `η_{t+1} = H ξ_t`.
///
/// `folded` records whether the input fold has been applied, i.e. whether the
/// observable columns consume raw measured `ζ` rather than cleaned `ζ*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLinearModel")]
pub struct LiftedLinearModel {
    dims: LiftDims,
    a: Matrix,
    h: Matrix,
    folded: bool,
}

#[derive(Deserialize)]
struct RawLinearModel {
    dims: LiftDims,
    a: Matrix,
    h: Matrix,
    folded: bool,
}

impl TryFrom<RawLinearModel> for LiftedLinearModel {
    type Error = Error;

    fn try_from(raw: RawLinearModel) -> Result<Self> {
        let mut model = LiftedLinearModel::new(raw.dims, raw.a, raw.h)?;
        model.folded = raw.folded;
        Ok(model)
    }
}

impl LiftedLinearModel {
    pub fn new(dims: LiftDims, a: Matrix, h: Matrix) -> Result<Self> {
        let p = dims.p();
        if a.shape() != (dims.a_rows(), p) {
            return Err(Error::dims("A shape (rows*cols)", dims.a_rows() * p, a.rows() * a.cols()));
        }
        if h.shape() != (dims.m, p) {
            return Err(Error::dims("H shape (rows*cols)", dims.m * p, h.rows() * h.cols()));
        }
        if !a.is_finite() || !h.is_finite() {
            return Err(Error::InvalidArgument("model matrices must be finite".into()));
        }
        Ok(LiftedLinearModel {
            dims,
            a,
            h,
            folded: false,
        })
    }

    pub fn dims(&self) -> LiftDims {
        self.dims
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    pub fn is_folded(&self) -> bool {
        self.folded
    }

    pub(crate) fn into_parts(self) -> (LiftDims, Matrix, Matrix, bool) {
        (self.dims, self.a, self.h, self.folded)
    }

    pub(crate) fn from_parts_folded(dims: LiftDims, a: Matrix, h: Matrix) -> Result<Self> {
        let mut m = LiftedLinearModel::new(dims, a, h)?;
        m.folded = true;
        Ok(m)
    }

    /// `A` restricted to the columns of one datum block.
    pub fn a_block(&self, block: DatumBlock) -> Matrix {
        let cols = self.dims.columns(block);
        self.a.block(0, cols.start, self.a.rows(), cols.len())
    }

    pub fn h_block(&self, block: DatumBlock) -> Matrix {
        let cols = self.dims.columns(block);
        self.h.block(0, cols.start, self.h.rows(), cols.len())
    }

    /// One-step prediction: returns `(A ξ, H ξ)`.
    pub fn predict(&self, xi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((self.a.matvec(xi)?, self.h.matvec(xi)?))
    }
}

/// Monomial basis `v ↦ (Π_i v_i^{e_i})_e` with no constant term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolyBasis")]
pub struct PolyBasis {
    dim: usize,
    exponents: Vec<Vec<u32>>,
}

#[derive(Deserialize)]
struct RawPolyBasis {
    dim: usize,
    exponents: Vec<Vec<u32>>,
}

impl TryFrom<RawPolyBasis> for PolyBasis {
    type Error = Error;

    fn try_from(raw: RawPolyBasis) -> Result<Self> {
        PolyBasis::new(raw.dim, raw.exponents)
    }
}

impl PolyBasis {
    pub fn new(dim: usize, exponents: Vec<Vec<u32>>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &exponents {
            if e.len() != dim {
                return Err(Error::dims("monomial exponent length", dim, e.len()));
            }
            if e.iter().sum::<u32>() == 0 {
                return Err(Error::InvalidArgument("constant monomial not allowed".into()));
            }
            if !seen.insert(e.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate monomial {e:?}")));
            }
        }
        Ok(PolyBasis { dim, exponents })
    }

    /// The first `count` monomials in graded-lexicographic order, starting at
    /// total degree `min_degree` (at least 1). Within a degree, larger powers
    /// of earlier variables come first: `v0² , v0·v1, v1², …`.
    pub fn graded_lex(dim: usize, min_degree: u32, count: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("polynomial basis over zero variables".into()));
        }
        let mut exponents = Vec::with_capacity(count);
        let mut degree = min_degree.max(1);
        while exponents.len() < count {
            let mut current = vec![0u32; dim];
            compositions(degree, 0, &mut current, &mut exponents, count);
            degree += 1;
        }
        PolyBasis::new(dim, exponents)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn features(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::dims("polynomial basis input", self.dim, v.len()));
        }
        Ok(self
            .exponents
            .iter()
            .map(|e| e.iter().zip(v).map(|(&k, &x)| x.powi(k as i32)).product())
            .collect())
    }
}

fn compositions(remaining: u32, index: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>, limit: usize) {
    if out.len() >= limit {
        return;
    }
    if index == current.len() - 1 {
        current[index] = remaining;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[index] = k;
        compositions(remaining - k, index + 1, current, out, limit);
    }
}
