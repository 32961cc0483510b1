//! Learned lifting linearization: a network `g` producing synthetic
//! observables `η = g((x, ζ*))`, trained jointly with the linear dynamics
//! `(x, ζ*)_{t+1} = A ξ_t`, `η_{t+1} = H ξ_t` over `ξ = (x, ζ*, η, u)`.
//!
//! Training minimizes the mean of `J = rᵀ Q r` over mini-batches, where `r`
//! stacks the prediction errors of both equations and `g` is evaluated at
//! both ends of every transition with the same parameters. Validation loss
//! drives early stopping, and the input fold is applied once training ends.

use serde::{Deserialize, Serialize};

use crate::causality::{estimate_filter_from, fold_input, AnticausalFilter};
use crate::lifting::{transition_pairs, Dataset, LiftDims, LiftedLinearModel, SplitTag, TransitionPair};
use crate::neural::{adam_step, AdamConfig, AdamState, Mlp, MlpGradient};
use crate::numerics::{gemm, Matrix, Rng, Transpose};
use crate::{Error, Result};

/// Rows per chunk when evaluating loss over a whole split.
const EVAL_CHUNK: usize = 2048;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct L3Config {
    /// Hidden layer widths of `g`.
    pub hidden: Vec<usize>,
    /// Number of synthetic observables `m`.
    pub synthetic_dim: usize,
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Loss weight, `(l+z+m)` square. `None` means identity.
    pub q: Option<Matrix>,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub use_filter: bool,
    pub use_zeta: bool,
    /// `A` and `H` start uniform in `±init_scale`.
    pub init_scale: f64,
}

impl Default for L3Config {
    /// The toy preset: 256-256 ReLU hidden layers, two synthetic observables.
    fn default() -> Self {
        L3Config {
            hidden: vec![256, 256],
            synthetic_dim: 2,
            adam: AdamConfig::default(),
            batch_size: 32,
            q: None,
            patience: 5,
            max_epochs: 1000,
            seed: 0,
            use_filter: true,
            use_zeta: true,
            init_scale: 0.1,
        }
    }
}

impl L3Config {
    /// One 256-wide hidden layer and four synthetic observables, sized for
    /// excavator-style logs.
    pub fn excavation() -> Self {
        L3Config {
            hidden: vec![256],
            synthetic_dim: 4,
            ..L3Config::default()
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidArgument("batch size and max epochs must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer widths must be positive".into()));
        }
        if !(self.init_scale >= 0.0) || !self.init_scale.is_finite() {
            return Err(Error::InvalidArgument("init scale must be finite and nonnegative".into()));
        }
        let a = self.adam;
        if !(a.alpha >= 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Adam hyperparameters {a:?}")));
        }
        if let Some(q) = &self.q {
            if q.shape() != (k, k) {
                return Err(Error::dims("loss weight Q order", k, q.rows()));
            }
            check_psd(q)?;
        }
        Ok(())
    }
}

fn check_psd(q: &Matrix) -> Result<()> {
    if !q.is_finite() || !q.is_symmetric(1e-12 * q.max_abs().max(1.0)) {
        return Err(Error::InvalidArgument("Q must be finite and symmetric".into()));
    }
    if q.rows() == 0 {
        return Ok(());
    }
    let m = nalgebra::DMatrix::from_row_slice(q.rows(), q.cols(), q.as_slice());
    let min = m.symmetric_eigenvalues().min();
    if min < -1e-12 * q.max_abs() {
        return Err(Error::InvalidArgument(format!(
            "Q must be positive semidefinite, smallest eigenvalue {min}"
        )));
    }
    Ok(())
}

/// Trainable parameters: the network (absent when `m = 0`) and the unfolded
/// `A`, `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct L3Parameters {
    pub dims: LiftDims,
    pub net: Option<Mlp>,
    pub a: Matrix,
    pub h: Matrix,
}

/// Gradient of the mean batch loss.
#[derive(Clone, Debug, PartialEq)]
pub struct L3Gradient {
    pub net: Option<MlpGradient>,
    pub a: Matrix,
    pub h: Matrix,
}

impl L3Gradient {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.net.as_ref().map(MlpGradient::slices).unwrap_or_default();
        out.push(self.a.as_slice());
        out.push(self.h.as_slice());
        out
    }
}

/// Training pairs in matrix form: network inputs `(x, ζ*)` at both ends,
/// inputs `u_t`, and regression targets `(x, ζ*)_{t+1}`.
struct PairSet {
    now: Matrix,
    next: Matrix,
    u: Matrix,
}

impl PairSet {
    fn new(dims: &LiftDims, pairs: &[TransitionPair]) -> Result<Self> {
        let d = dims.l + dims.z;
        let mut now = Matrix::zeros(pairs.len(), d);
        let mut next = Matrix::zeros(pairs.len(), d);
        let mut u = Matrix::zeros(pairs.len(), dims.n);
        for (i, p) in pairs.iter().enumerate() {
            if p.x.len() != dims.l || p.x_next.len() != dims.l {
                return Err(Error::dims("pair state", dims.l, p.x.len()));
            }
            if p.zeta.len() != dims.z || p.zeta_next.len() != dims.z {
                return Err(Error::dims("pair observables", dims.z, p.zeta.len()));
            }
            if p.u.len() != dims.n {
                return Err(Error::dims("pair input", dims.n, p.u.len()));
            }
            let row = now.row_mut(i);
            row[..dims.l].copy_from_slice(&p.x);
            row[dims.l..].copy_from_slice(&p.zeta);
            let row = next.row_mut(i);
            row[..dims.l].copy_from_slice(&p.x_next);
            row[dims.l..].copy_from_slice(&p.zeta_next);
            u.row_mut(i).copy_from_slice(&p.u);
        }
        Ok(PairSet { now, next, u })
    }

    fn len(&self) -> usize {
        self.u.rows()
    }
}

fn gather(src: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), src.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(src.row(i));
    }
    out
}

impl L3Parameters {
    /// Seeded initialization: Glorot-uniform network, `A` and `H` uniform in
    /// `±scale`.
    pub fn initialize(dims: LiftDims, hidden: &[usize], scale: f64, rng: &mut Rng) -> Result<Self> {
        let net = if dims.m > 0 {
            let mut sizes = vec![dims.l + dims.z];
            sizes.extend_from_slice(hidden);
            sizes.push(dims.m);
            Some(Mlp::initialized(&sizes, rng)?)
        } else {
            None
        };
        let p = dims.p();
        let mut draw = |rows: usize| -> Result<Matrix> {
            let data = if scale > 0.0 {
                rng.uniform(-scale, scale, rows * p)?
            } else {
                vec![0.0; rows * p]
            };
            Matrix::from_vec(rows, p, data)
        };
        let a = draw(dims.a_rows())?;
        let h = draw(dims.m)?;
        L3Parameters::new(dims, net, a, h)
    }

    pub fn new(dims: LiftDims, net: Option<Mlp>, a: Matrix, h: Matrix) -> Result<Self> {
        let p = dims.p();
        if a.shape() != (dims.a_rows(), p) || h.shape() != (dims.m, p) {
            return Err(Error::dims("L3 matrix rows", dims.a_rows() + dims.m, a.rows() + h.rows()));
        }
        match &net {
            Some(g) if g.input_dim() != dims.l + dims.z || g.output_dim() != dims.m => {
                return Err(Error::dims("network output", dims.m, g.output_dim()));
            }
            None if dims.m > 0 => return Err(Error::InvalidArgument("m > 0 requires a network".into())),
            _ => {}
        }
        Ok(L3Parameters { dims, net, a, h })
    }

    /// Residual dimension `l + z + m`.
    pub fn residual_dim(&self) -> usize {
        self.dims.a_rows() + self.dims.m
    }

    /// `((x, ζ*)_{t+1} − A ξ_t, η_{t+1} − H ξ_t)` for one cleaned pair.
    pub fn residual(&self, pair: &TransitionPair) -> Result<Vec<f64>> {
        let set = PairSet::new(&self.dims, std::slice::from_ref(pair))?;
        let (r, _, _) = self.residuals(&set, &[0])?;
        Ok(r.into_vec())
    }

    /// Residual rows for the indexed pairs, the datum rows, and the forward
    /// pass over the stacked `[t; t+1]` network inputs.
    fn residuals(&self, set: &PairSet, idx: &[usize]) -> Result<(Matrix, Matrix, Option<crate::neural::ForwardPass>)> {
        let b = idx.len();
        let (d, m) = (self.dims.a_rows(), self.dims.m);
        let now = gather(&set.now, idx);
        let next = gather(&set.next, idx);
        let (eta_now, eta_next, pass) = match &self.net {
            Some(net) => {
                let pass = net.forward_batch(&Matrix::vstack(&[&now, &next])?)?;
                let out = pass.output();
                (out.block(0, 0, b, m), out.block(b, 0, b, m), Some(pass))
            }
            None => (Matrix::zeros(b, 0), Matrix::zeros(b, 0), None),
        };
        let xi = Matrix::hstack(&[&now, &eta_now, &gather(&set.u, idx)])?;
        let mut r_state = next.block(0, 0, b, d);
        gemm(-1.0, &xi, Transpose::No, &self.a, Transpose::Yes, 1.0, &mut r_state);
        let mut r_synth = eta_next;
        gemm(-1.0, &xi, Transpose::No, &self.h, Transpose::Yes, 1.0, &mut r_synth);
        Ok((Matrix::hstack(&[&r_state, &r_synth])?, xi, pass))
    }

    /// Mean of `rᵀ Q r` over the indexed pairs, and its gradient if asked.
    fn batch(&self, set: &PairSet, idx: &[usize], q: &Matrix, grad: bool) -> Result<(f64, Option<L3Gradient>)> {
        let b = idx.len();
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let k = self.residual_dim();
        let (d, m, p) = (self.dims.a_rows(), self.dims.m, self.dims.p());
        let (r, xi, pass) = self.residuals(set, idx)?;
        let mut rq = Matrix::zeros(b, k);
        gemm(1.0, &r, Transpose::No, q, Transpose::No, 0.0, &mut rq);
        let loss = r.as_slice().iter().zip(rq.as_slice()).map(|(a, c)| a * c).sum::<f64>() / b as f64;
        if !grad {
            return Ok((loss, None));
        }
        // dJ/dr = r (Q + Qᵀ) / B
        let mut g = Matrix::zeros(b, k);
        let scale = 1.0 / b as f64;
        gemm(scale, &r, Transpose::No, q, Transpose::No, 0.0, &mut g);
        gemm(scale, &r, Transpose::No, q, Transpose::Yes, 1.0, &mut g);
        let g_state = g.block(0, 0, b, d);
        let g_synth = g.block(0, d, b, m);
        let mut ga = Matrix::zeros(d, p);
        gemm(-1.0, &g_state, Transpose::Yes, &xi, Transpose::No, 0.0, &mut ga);
        let mut gh = Matrix::zeros(m, p);
        gemm(-1.0, &g_synth, Transpose::Yes, &xi, Transpose::No, 0.0, &mut gh);
        let net_grad = match (&self.net, pass) {
            (Some(net), Some(pass)) => {
                let mut g_xi = Matrix::zeros(b, p);
                gemm(-1.0, &g_state, Transpose::No, &self.a, Transpose::No, 0.0, &mut g_xi);
                gemm(-1.0, &g_synth, Transpose::No, &self.h, Transpose::No, 1.0, &mut g_xi);
                // η_t enters through ξ_t, η_{t+1} through the synthetic residual
                let upstream = Matrix::vstack(&[&g_xi.block(0, d, b, m), &g_synth])?;
                Some(net.backward(&pass, &upstream)?)
            }
            _ => None,
        };
        Ok((
            loss,
            Some(L3Gradient {
                net: net_grad,
                a: ga,
                h: gh,
            }),
        ))
    }

    /// Mean loss over every pair of `set`, evaluated in chunks.
    fn mean_loss(&self, set: &PairSet, q: &Matrix) -> Result<f64> {
        let n = set.len();
        let idx: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        for chunk in idx.chunks(EVAL_CHUNK) {
            total += self.batch(set, chunk, q, false)?.0 * chunk.len() as f64;
        }
        Ok(total / n as f64)
    }

    /// Mean `rᵀ Q r` over cleaned pairs.
    pub fn loss(&self, pairs: &[TransitionPair], q: &Matrix) -> Result<f64> {
        self.check_q(q)?;
        self.mean_loss(&PairSet::new(&self.dims, pairs)?, q)
    }

    /// Mean loss over cleaned pairs and its gradient.
    pub fn gradient(&self, pairs: &[TransitionPair], q: &Matrix) -> Result<(f64, L3Gradient)> {
        self.check_q(q)?;
        let set = PairSet::new(&self.dims, pairs)?;
        let idx: Vec<usize> = (0..set.len()).collect();
        let (loss, grad) = self.batch(&set, &idx, q, true)?;
        Ok((loss, grad.expect("requested")))
    }

    fn check_q(&self, q: &Matrix) -> Result<()> {
        let k = self.residual_dim();
        if q.shape() != (k, k) {
            return Err(Error::dims("loss weight Q order", k, q.rows()));
        }
        Ok(())
    }

    /// Parameter slices in the order used by [`L3Gradient`] and Adam.
    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.net.as_mut().map(Mlp::parameters_mut).unwrap_or_default();
        out.push(self.a.as_mut_slice());
        out.push(self.h.as_mut_slice());
        out
    }

    fn slice_lengths(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .net
            .as_ref()
            .map(|n| n.parameters().iter().map(|s| s.len()).collect())
            .unwrap_or_default();
        out.push(self.a.as_slice().len());
        out.push(self.h.as_slice().len());
        out
    }

    /// Fresh Adam state sized for these parameters.
    pub fn adam_state(&self, config: AdamConfig) -> AdamState {
        AdamState::new(config, &self.slice_lengths())
    }

    pub fn apply_adam(&mut self, grad: &L3Gradient, state: &mut AdamState) -> Result<()> {
        let grads = grad.slices();
        adam_step(&mut self.slices_mut(), &grads, state)
    }

    /// Every scalar parameter, network first, then `A`, then `H`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.net.as_ref().map(|n| n.parameters().concat()).unwrap_or_default();
        out.extend_from_slice(self.a.as_slice());
        out.extend_from_slice(self.h.as_slice());
        out
    }

    fn set_flat(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for s in self.slices_mut() {
            if offset < s.len() {
                s[offset] = value;
                return;
            }
            offset -= s.len();
        }
        panic!("parameter index {index} out of range");
    }
}

/// One epoch of training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the untrained initialization.
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch; `None` at epoch 0.
    pub train_loss: Option<f64>,
    pub validation_loss: f64,
    pub best_validation_loss: f64,
}

/// A trained model, folded for raw measured observables when a filter was
/// used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct L3Model {
    pub config: L3Config,
    pub net: Option<Mlp>,
    pub linear: LiftedLinearModel,
    pub filter: Option<AnticausalFilter>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl L3Model {
    pub fn dims(&self) -> LiftDims {
        self.linear.dims()
    }

    /// Final mean training and validation losses of the restored parameters.
    pub fn best_record(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

/// Loss weight for the configuration, identity if unset.
fn loss_weight(cfg: &L3Config, k: usize) -> Matrix {
    cfg.q.clone().unwrap_or_else(|| Matrix::identity(k))
}

/// Trains the network and linear model on the training split, stopping when
/// the validation loss has not improved for `patience` epochs.
pub fn train(ds: &Dataset, cfg: &L3Config) -> Result<L3Model> {
    let ds = if cfg.use_zeta { ds.clone() } else { ds.without_observables() };
    let dims = LiftDims::new(ds.state_dim(), ds.observable_dim(), cfg.synthetic_dim, ds.input_dim());
    let k = dims.a_rows() + dims.m;
    cfg.validate(k)?;
    let q = loss_weight(cfg, k);

    let filter = if cfg.use_filter && dims.z > 0 {
        Some(estimate_filter_from(&ds)?)
    } else {
        None
    };
    let prepare = |tag| -> Result<PairSet> {
        let mut pairs = transition_pairs(&ds, tag)?;
        if let Some(f) = &filter {
            pairs = pairs.iter().map(|p| f.clean_pair(p)).collect::<Result<_>>()?;
        }
        PairSet::new(&dims, &pairs)
    };
    let train_set = prepare(SplitTag::Train)?;
    let validation_set = prepare(SplitTag::Validation)?;

    let mut rng = Rng::new(cfg.seed);
    let mut params = L3Parameters::initialize(dims, &cfg.hidden, cfg.init_scale, &mut rng)?;
    let mut adam = params.adam_state(cfg.adam);

    let initial = params.mean_loss(&validation_set, &q)?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        validation_loss: initial,
        best_validation_loss: initial,
    }];
    let mut best = (0, initial, params.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for (batch_index, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = params.batch(&train_set, idx, &q, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            total += loss * idx.len() as f64;
            params.apply_adam(&grad.expect("requested"), &mut adam)?;
        }
        let validation = params.mean_loss(&validation_set, &q)?;
        if !validation.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        if validation < best.1 {
            best = (epoch, validation, params.clone());
        }
        history.push(EpochRecord {
            epoch,
            train_loss: Some(total / train_set.len() as f64),
            validation_loss: validation,
            best_validation_loss: best.1,
        });
        if epoch - best.0 >= cfg.patience.max(1) {
            break;
        }
    }

    let (best_epoch, _, params) = best;
    let L3Parameters { net, a, h, .. } = params;
    let mut linear = LiftedLinearModel::new(dims, a, h)?;
    if let Some(f) = &filter {
        linear = fold_input(&linear, f)?;
    }
    Ok(L3Model {
        config: cfg.clone(),
        net,
        linear,
        filter,
        history,
        best_epoch,
    })
}

/// Outcome of comparing analytic and finite-difference gradients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub parameters: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` over
    /// parameters whose absolute difference exceeds `absolute_floor`.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub step: f64,
    pub absolute_floor: f64,
}

/// Central-difference check of every gradient entry of the mean loss over
/// `pairs`, with step `1e-5` and an absolute floor of `1e-7`.
pub fn train_gradient_check(params: &L3Parameters, pairs: &[TransitionPair], q: &Matrix) -> Result<GradCheckReport> {
    const STEP: f64 = 1e-5;
    const FLOOR: f64 = 1e-7;
    let (_, grad) = params.gradient(pairs, q)?;
    let analytic: Vec<f64> = grad.slices().concat();
    let base = params.flatten();
    let mut probe = params.clone();
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for (i, &a) in analytic.iter().enumerate() {
        probe.set_flat(i, base[i] + STEP);
        let plus = probe.loss(pairs, q)?;
        probe.set_flat(i, base[i] - STEP);
        let minus = probe.loss(pairs, q)?;
        probe.set_flat(i, base[i]);
        let numeric = (plus - minus) / (2.0 * STEP);
        let diff = (a - numeric).abs();
        max_abs = max_abs.max(diff);
        if diff > FLOOR {
            max_rel = max_rel.max(diff / a.abs().max(numeric.abs()));
        }
    }
    Ok(GradCheckReport {
        parameters: analytic.len(),
        max_relative_error: max_rel,
        max_absolute_error: max_abs,
        step: STEP,
        absolute_floor: FLOOR,
    })
}
