//! Fully connected network for synthetic observables, with batched
//! backpropagation and the Adam optimizer.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::numerics::{gemm, Matrix, Rng, Transpose};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// Multilayer perceptron. Layer `k` maps `sizes[k]` inputs to `sizes[k+1]`
/// outputs through `weights[k]` (`sizes[k+1] × sizes[k]`) and `biases[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawMlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

impl TryFrom<RawMlp> for Mlp {
    type Error = Error;

    fn try_from(raw: RawMlp) -> Result<Self> {
        let layers = raw.sizes.len().saturating_sub(1);
        if raw.sizes.len() < 2 || raw.activations.len() != layers {
            return Err(Error::InvalidArgument("network needs one activation per layer".into()));
        }
        if raw.weights.len() != layers || raw.biases.len() != layers {
            return Err(Error::dims("network layer count", layers, raw.weights.len()));
        }
        for k in 0..layers {
            if raw.weights[k].shape() != (raw.sizes[k + 1], raw.sizes[k]) {
                return Err(Error::dims("layer weight rows", raw.sizes[k + 1], raw.weights[k].rows()));
            }
            if raw.biases[k].len() != raw.sizes[k + 1] {
                return Err(Error::dims("layer bias length", raw.sizes[k + 1], raw.biases[k].len()));
            }
        }
        let net = Mlp {
            sizes: raw.sizes,
            activations: raw.activations,
            weights: raw.weights,
            biases: raw.biases,
        };
        if !net.is_finite() {
            return Err(Error::InvalidArgument("network parameters must be finite".into()));
        }
        Ok(net)
    }
}

/// Layer outputs kept for the backward pass; `activations[0]` is the input.
pub struct ForwardPass {
    activations: Vec<Matrix>,
}

impl ForwardPass {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("at least the input")
    }
}

/// Gradient with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradient {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGradient {
    /// Parameter-ordered slices matching [`Mlp::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }
}

impl Mlp {
    /// ReLU hidden layers and a linear output layer, all parameters zero.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer sizes must have at least two positive entries, got {sizes:?}"
            )));
        }
        let layers = sizes.len() - 1;
        let mut activations = vec![Activation::Relu; layers];
        activations[layers - 1] = Activation::Linear;
        Ok(Mlp {
            sizes: sizes.to_vec(),
            activations,
            weights: (0..layers).map(|k| Matrix::zeros(sizes[k + 1], sizes[k])).collect(),
            biases: (0..layers).map(|k| vec![0.0; sizes[k + 1]]).collect(),
        })
    }

    /// Weights uniform in `±√(6 / (fan_in + fan_out))`, biases zero.
    pub fn initialized(sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut net = Mlp::zeros(sizes)?;
        for w in &mut net.weights {
            let limit = (6.0 / (w.rows() + w.cols()) as f64).sqrt();
            let draws = rng.uniform(-limit, limit, w.rows() * w.cols())?;
            w.as_mut_slice().copy_from_slice(&draws);
        }
        Ok(net)
    }

    /// Single affine layer `v ↦ W v + b`.
    pub fn affine(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::dims("affine bias length", weight.rows(), bias.len()));
        }
        Ok(Mlp {
            sizes: vec![weight.cols(), weight.rows()],
            activations: vec![Activation::Linear],
            weights: vec![weight],
            biases: vec![bias],
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Parameter slices in layer order, weight before bias.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }

    pub fn parameters(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite) && self.biases.iter().flatten().all(|v| v.is_finite())
    }

    /// Hash of the exact parameter bits; equal fingerprints mean equal nets.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        self.sizes.hash(&mut hasher);
        for slice in self.parameters() {
            for v in slice {
                v.to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }

    pub fn forward(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::dims("network input", self.input_dim(), v.len()));
        }
        let mut a = v.to_vec();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = w.matvec(&a)?;
            for (zi, bi) in z.iter_mut().zip(b) {
                *zi += bi;
                if *act == Activation::Relu {
                    *zi = zi.max(0.0);
                }
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass over the rows of `inputs` (`B × d_in`).
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<ForwardPass> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::dims("network batch input", self.input_dim(), inputs.cols()));
        }
        let batch = inputs.rows();
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(inputs.clone());
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = Matrix::zeros(batch, w.rows());
            for i in 0..batch {
                z.row_mut(i).copy_from_slice(b);
            }
            gemm(1.0, activations.last().unwrap(), Transpose::No, w, Transpose::Yes, 1.0, &mut z);
            if *act == Activation::Relu {
                z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        Ok(ForwardPass { activations })
    }

    /// Parameter gradient of `Σ_rows ⟨upstream_row, output_row⟩`, i.e. the
    /// gradient of any loss whose derivative with respect to the batch output
    /// is `upstream`.
    pub fn backward(&self, pass: &ForwardPass, upstream: &Matrix) -> Result<MlpGradient> {
        let out = pass.output();
        if upstream.shape() != out.shape() {
            return Err(Error::dims("upstream gradient size", out.rows() * out.cols(), upstream.rows() * upstream.cols()));
        }
        let layers = self.weights.len();
        let mut weights = vec![Matrix::zeros(0, 0); layers];
        let mut biases = vec![Vec::new(); layers];
        let mut delta = upstream.clone();
        for k in (0..layers).rev() {
            if self.activations[k] == Activation::Relu {
                let a = &pass.activations[k + 1];
                for (d, &av) in delta.as_mut_slice().iter_mut().zip(a.as_slice()) {
                    if av <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let w = &self.weights[k];
            let mut gw = Matrix::zeros(w.rows(), w.cols());
            gemm(1.0, &delta, Transpose::Yes, &pass.activations[k], Transpose::No, 0.0, &mut gw);
            let mut gb = vec![0.0; w.rows()];
            for i in 0..delta.rows() {
                for (acc, v) in gb.iter_mut().zip(delta.row(i)) {
                    *acc += v;
                }
            }
            weights[k] = gw;
            biases[k] = gb;
            if k > 0 {
                let mut prev = Matrix::zeros(delta.rows(), w.cols());
                gemm(1.0, &delta, Transpose::No, w, Transpose::No, 0.0, &mut prev);
                delta = prev;
            }
        }
        Ok(MlpGradient { weights, biases })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for a fixed list of parameter slices.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every parameter slice.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first.len() || grads.len() != params.len() {
        return Err(Error::dims("adam parameter groups", state.first.len(), params.len()));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::dims("adam parameter group size", m.len(), p.len()));
        }
    }
    state.step += 1;
    let AdamConfig {
        alpha,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for i in 0..p.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= alpha * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, rng.uniform(-1.0, 1.0, rows * cols).unwrap()).unwrap()
    }

    /// Σ ⟨upstream, output⟩ evaluated one row at a time.
    fn linear_loss(net: &Mlp, inputs: &Matrix, upstream: &Matrix) -> f64 {
        (0..inputs.rows())
            .map(|i| {
                let out = net.forward(inputs.row(i)).unwrap();
                out.iter().zip(upstream.row(i)).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum()
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 16, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        let w = Matrix::from_rows(&[[1.0, 2.0], [3.0, -1.0]]).unwrap();
        let net = Mlp::affine(w, vec![0.5, -0.5]).unwrap();
        assert_eq!(net.forward(&[1.0, 1.0]).unwrap(), vec![3.5, 1.5]);
    }

    #[test]
    fn forward_is_deterministic() {
        let a = Mlp::initialized(&[3, 16, 2], &mut Rng::new(5)).unwrap();
        let b = Mlp::initialized(&[3, 16, 2], &mut Rng::new(5)).unwrap();
        let v = [0.3, -0.7, 1.1];
        let (ya, yb) = (a.forward(&v).unwrap(), b.forward(&v).unwrap());
        assert_eq!(ya.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), yb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn batch_forward_matches_single() {
        let mut rng = Rng::new(6);
        let net = Mlp::initialized(&[3, 8, 8, 2], &mut rng).unwrap();
        let x = random_batch(&mut rng, 5, 3);
        let pass = net.forward_batch(&x).unwrap();
        for i in 0..5 {
            let single = net.forward(x.row(i)).unwrap();
            for (a, b) in single.iter().zip(pass.output().row(i)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(7);
        let net = Mlp::initialized(&[3, 8, 2], &mut rng).unwrap();
        // biases nonzero so their gradients are exercised away from zero
        let mut net = net;
        for b in &mut net.biases {
            let draws = rng.uniform(-0.5, 0.5, b.len()).unwrap();
            b.copy_from_slice(&draws);
        }
        let x = random_batch(&mut rng, 4, 3);
        let up = random_batch(&mut rng, 4, 2);
        let grad = net.backward(&net.forward_batch(&x).unwrap(), &up).unwrap();
        let analytic: Vec<f64> = grad.slices().concat();
        let h = 1e-5;
        let mut index = 0;
        let groups = net.parameters().iter().map(|s| s.len()).collect::<Vec<_>>();
        for (g, &len) in groups.iter().enumerate() {
            for i in 0..len {
                let mut plus = net.clone();
                plus.parameters_mut()[g][i] += h;
                let mut minus = net.clone();
                minus.parameters_mut()[g][i] -= h;
                let fd = (linear_loss(&plus, &x, &up) - linear_loss(&minus, &x, &up)) / (2.0 * h);
                let a = analytic[index];
                let err = (a - fd).abs();
                assert!(err <= 1e-7 || err <= 1e-4 * a.abs().max(fd.abs()), "param {g}/{i}: {a} vs {fd}");
                index += 1;
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = Rng::new(8);
        let net = Mlp::initialized(&[3, 8, 2], &mut rng).unwrap();
        let x = random_batch(&mut rng, 4, 3);
        let g = net.backward(&net.forward_batch(&x).unwrap(), &Matrix::zeros(4, 2)).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn batch_gradient_is_sum_of_items() {
        let mut rng = Rng::new(9);
        let net = Mlp::initialized(&[3, 8, 2], &mut rng).unwrap();
        let x = random_batch(&mut rng, 2, 3);
        let up = random_batch(&mut rng, 2, 2);
        let both = net.backward(&net.forward_batch(&x).unwrap(), &up).unwrap();
        let single = |i: usize| {
            let xi = Matrix::from_rows(&[x.row(i)]).unwrap();
            let ui = Matrix::from_rows(&[up.row(i)]).unwrap();
            net.backward(&net.forward_batch(&xi).unwrap(), &ui).unwrap()
        };
        let (g0, g1) = (single(0), single(1));
        for ((b, s0), s1) in both.slices().iter().zip(g0.slices()).zip(g1.slices()) {
            for i in 0..b.len() {
                assert!((b[i] - s0[i] - s1[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_lipschitz_in_operator_norms() {
        let mut rng = Rng::new(10);
        for _ in 0..10 {
            let net = Mlp::initialized(&[3, 16, 16, 2], &mut rng).unwrap();
            let bound: f64 = net.weights().iter().map(spectral_norm).product();
            for _ in 0..20 {
                let a = rng.uniform(-2.0, 2.0, 3).unwrap();
                let b = rng.uniform(-2.0, 2.0, 3).unwrap();
                let fa = net.forward(&a).unwrap();
                let fb = net.forward(&b).unwrap();
                assert!(norm(&diff(&fa, &fb)) <= bound * norm(&diff(&a, &b)) * 1.0001);
            }
        }
    }

    fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x - y).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn spectral_norm(w: &Matrix) -> f64 {
        let gram = w.transpose().matmul(w).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(gram.rows(), gram.cols(), gram.as_slice());
        m.symmetric_eigenvalues().max().max(0.0).sqrt()
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0, 3.0];
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        adam_step(&mut [p.as_mut_slice()], &[&[0.0; 3]], &mut state).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let g = [0.3, -2.0, 1e-3];
        let mut p = vec![0.0; 3];
        let config = AdamConfig::default();
        let mut state = AdamState::new(config, &[3]);
        adam_step(&mut [p.as_mut_slice()], &[&g], &mut state).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // m̂ = g, v̂ = g², so the step is −α g / (|g| + ε)
            let expected = -config.alpha * gi / (gi.abs() + config.epsilon);
            assert!((pi - expected).abs() < 1e-18);
            assert!((pi + config.alpha * gi.signum()).abs() < 1e-9);
        }
    }

    #[test]
    fn adam_two_steps_constant_gradient() {
        let config = AdamConfig {
            alpha: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0];
        let mut state = AdamState::new(config, &[1]);
        for _ in 0..2 {
            adam_step(&mut [p.as_mut_slice()], &[&[1.0]], &mut state).unwrap();
        }
        // by hand: m1 = 0.1, v1 = 0.001, m̂1 = 1, v̂1 = 1;
        // m2 = 0.19, v2 = 0.001999, m̂2 = 0.19/0.19 = 1, v̂2 = 0.001999/0.001999 = 1
        let step = 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] + 2.0 * step).abs() < 1e-15, "{}", p[0]);
    }

    #[test]
    fn adam_with_zero_rate_never_moves() {
        let config = AdamConfig {
            alpha: 0.0,
            ..AdamConfig::default()
        };
        let mut p = vec![0.5, 0.25];
        let mut state = AdamState::new(config, &[2]);
        adam_step(&mut [p.as_mut_slice()], &[&[3.0, -1.0]], &mut state).unwrap();
        assert_eq!(p, vec![0.5, 0.25]);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        assert!(adam_step(&mut [p.as_mut_slice()], &[&[0.0; 2]], &mut state).is_err());
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let net = Mlp::initialized(&[3, 4, 2], &mut Rng::new(1)).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: Mlp = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
        let broken = json.replacen("\"sizes\":[3,4,2]", "\"sizes\":[3,5,2]", 1);
        assert!(serde_json::from_str::<Mlp>(&broken).is_err());
    }

    #[test]
    fn rejects_bad_topology() {
        assert!(Mlp::zeros(&[3]).is_err());
        assert!(Mlp::zeros(&[3, 0, 2]).is_err());
    }
}
