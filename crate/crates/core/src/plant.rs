//! First-order nonlinear RC plant, excitation signals, and dataset generation.
//!
//! The plant is an effort source `u` driving a nonlinear resistor and a
//! nonlinear capacitor in series. With charge `q` as state,
//!
//! ```text
//! e_C = Φ_C(q) = sgn(q)·q²
//! f   = Φ_R(u − e_C),   Φ_R(e) = 2/(1 + exp(−4e)) − 1
//! q̇   = f
//! ```
//!
//! and the measured observables are `ζ = (f, e_C)`. `f` depends directly on
//! the current input, which is what the anticausal filter removes.

use serde::{Deserialize, Serialize};

use crate::lifting::{Dataset, Trajectory};
use crate::numerics::Rng;
use crate::{Error, Result};

/// Resistor law `2/(1 + e^{−4e}) − 1`, evaluated as the identical `tanh(2e)`
/// so that the result is exactly odd and saturates without overflow.
pub fn phi_r(e: f64) -> f64 {
    (2.0 * e).tanh()
}

/// Capacitor law `sgn(q)·q²`.
pub fn phi_c(q: f64) -> f64 {
    q * q.abs()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ToyPlant;

impl ToyPlant {
    pub const STATE_DIM: usize = 1;
    pub const INPUT_DIM: usize = 1;
    pub const OBSERVABLE_DIM: usize = 2;

    pub fn derivative(&self, q: f64, u: f64) -> f64 {
        phi_r(u - phi_c(q))
    }

    /// `ζ = (f, e_C)` at the given state and input.
    pub fn observables(&self, q: f64, u: f64) -> [f64; 2] {
        let e_c = phi_c(q);
        [phi_r(u - e_c), e_c]
    }

    /// Simulates the sampled input sequence under zero-order hold, one sample
    /// per input value, with `substeps` classical RK4 steps per sample period.
    pub fn simulate(&self, q0: f64, inputs: &[f64], dt: f64, substeps: usize) -> Result<Trajectory> {
        self.simulate_feedback(q0, inputs.len(), dt, substeps, |k, _| inputs[k])
    }

    /// Like [`ToyPlant::simulate`] but the input at sample `k` is chosen by
    /// `law(k, q_k)` from the sampled state.
    pub fn simulate_feedback(
        &self,
        q0: f64,
        samples: usize,
        dt: f64,
        substeps: usize,
        mut law: impl FnMut(usize, f64) -> f64,
    ) -> Result<Trajectory> {
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("sample period must be positive, got {dt}")));
        }
        if substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be positive".into()));
        }
        let h = dt / substeps as f64;
        let mut states = Vec::with_capacity(samples);
        let mut inputs = Vec::with_capacity(samples);
        let mut observables = Vec::with_capacity(samples);
        let mut q = q0;
        for k in 0..samples {
            let u = law(k, q);
            if !q.is_finite() || !u.is_finite() {
                return Err(Error::NonFiniteState { step: k });
            }
            states.push(vec![q]);
            inputs.push(vec![u]);
            observables.push(self.observables(q, u).to_vec());
            if k + 1 < samples {
                for _ in 0..substeps {
                    q = self.rk4_step(q, u, h);
                }
            }
        }
        Trajectory::new(dt, states, inputs, observables)
    }

    fn rk4_step(&self, q: f64, u: f64, h: f64) -> f64 {
        let k1 = self.derivative(q, u);
        let k2 = self.derivative(q + 0.5 * h * k1, u);
        let k3 = self.derivative(q + 0.5 * h * k2, u);
        let k4 = self.derivative(q + h * k3, u);
        q + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    }
}

/// Excitation signal families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// A fresh `U(lo, hi)` draw at every sample.
    PiecewiseConstantUniform { lo: f64, hi: f64 },
    /// `±amplitude`, starting positive, switching every half period.
    SquareWave { amplitude: f64, period: f64 },
    /// PID tracking of a setpoint drawn once from `U(setpoint_lo, setpoint_hi)`
    /// plus `U(−noise, noise)` at every sample.
    NoisyPid {
        kp: f64,
        ki: f64,
        kd: f64,
        setpoint_lo: f64,
        setpoint_hi: f64,
        noise: f64,
    },
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            SignalSpec::PiecewiseConstantUniform { lo, hi } => lo < hi,
            SignalSpec::SquareWave { amplitude, period } => period > 0.0 && amplitude.is_finite(),
            SignalSpec::NoisyPid {
                kp,
                ki,
                kd,
                setpoint_lo,
                setpoint_hi,
                noise,
            } => {
                setpoint_lo < setpoint_hi
                    && noise >= 0.0
                    && [kp, ki, kd, noise].iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid signal spec {self:?}")))
        }
    }
}

/// Discrete PID with rectangle-rule integral, backward-difference derivative,
/// and an anti-windup clamp on the integral at ±10× the largest setpoint
/// magnitude.
#[derive(Clone, Debug)]
pub struct NoisyPid {
    kp: f64,
    ki: f64,
    kd: f64,
    noise: f64,
    setpoint: f64,
    dt: f64,
    integral: f64,
    integral_limit: f64,
    previous_error: Option<f64>,
}

impl NoisyPid {
    /// Draws the setpoint from `rng`. `spec` must be [`SignalSpec::NoisyPid`].
    pub fn new(spec: &SignalSpec, dt: f64, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let SignalSpec::NoisyPid {
            kp,
            ki,
            kd,
            setpoint_lo,
            setpoint_hi,
            noise,
        } = *spec
        else {
            return Err(Error::InvalidArgument("expected a noisy PID signal spec".into()));
        };
        Ok(NoisyPid {
            kp,
            ki,
            kd,
            noise,
            setpoint: rng.uniform_one(setpoint_lo, setpoint_hi)?,
            dt,
            integral: 0.0,
            integral_limit: 10.0 * setpoint_lo.abs().max(setpoint_hi.abs()),
            previous_error: None,
        })
    }

    pub fn setpoint(&self) -> f64 {
        self.setpoint
    }

    pub fn step(&mut self, measurement: f64, rng: &mut Rng) -> f64 {
        let error = self.setpoint - measurement;
        self.integral = (self.integral + error * self.dt).clamp(-self.integral_limit, self.integral_limit);
        let derivative = self.previous_error.map_or(0.0, |prev| (error - prev) / self.dt);
        self.previous_error = Some(error);
        let noise = if self.noise > 0.0 {
            self.noise * (2.0 * rng.next_f64() - 1.0)
        } else {
            0.0
        };
        self.kp * error + self.ki * self.integral + self.kd * derivative + noise
    }
}

/// Number of samples covering `[0, duration]` at period `dt`.
pub fn sample_count(duration: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "duration ({duration}) and period ({dt}) must be positive"
        )));
    }
    let steps = duration / dt;
    let rounded = steps.round();
    if (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} is not a multiple of the sample period {dt}"
        )));
    }
    Ok(rounded as usize + 1)
}

/// Samples an open-loop signal over `[0, duration]`. The noisy PID variant
/// sees a plant output of zero throughout.
pub fn generate_signal(spec: &SignalSpec, rng: &mut Rng, duration: f64, dt: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    let samples = sample_count(duration, dt)?;
    match *spec {
        SignalSpec::PiecewiseConstantUniform { lo, hi } => rng.uniform(lo, hi, samples),
        SignalSpec::SquareWave { amplitude, period } => Ok((0..samples)
            .map(|k| {
                let half_periods = (k as f64 * dt / (0.5 * period) + 1e-9).floor() as u64;
                if half_periods % 2 == 0 {
                    amplitude
                } else {
                    -amplitude
                }
            })
            .collect()),
        SignalSpec::NoisyPid { .. } => {
            let mut pid = NoisyPid::new(spec, dt, rng)?;
            Ok((0..samples).map(|_| pid.step(0.0, rng)).collect())
        }
    }
}

/// Data-generation protocol for the toy plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSpec {
    pub count: usize,
    pub duration: f64,
    pub rate: f64,
    pub q0_range: (f64, f64),
    pub excitation: SignalSpec,
    pub substeps: usize,
}

impl Default for DatasetSpec {
    /// 100 trajectories of 5 s at 20 Hz, `q0 ~ U(−2, 2)`, inputs redrawn from
    /// `U(−2.5, 2.5)` at every sample, RK4 with 10 substeps.
    fn default() -> Self {
        DatasetSpec {
            count: 100,
            duration: 5.0,
            rate: 20.0,
            q0_range: (-2.0, 2.0),
            excitation: SignalSpec::PiecewiseConstantUniform { lo: -2.5, hi: 2.5 },
            substeps: 10,
        }
    }
}

impl ToyPlant {
    /// One excited trajectory. Closed-loop for the PID excitation, open-loop
    /// otherwise.
    pub fn excite(&self, spec: &DatasetSpec, rng: &mut Rng) -> Result<Trajectory> {
        let dt = 1.0 / spec.rate;
        let q0 = rng.uniform_one(spec.q0_range.0, spec.q0_range.1)?;
        match spec.excitation {
            SignalSpec::NoisyPid { .. } => {
                let samples = sample_count(spec.duration, dt)?;
                let mut pid = NoisyPid::new(&spec.excitation, dt, rng)?;
                self.simulate_feedback(q0, samples, dt, spec.substeps, |_, q| pid.step(q, rng))
            }
            _ => {
                let inputs = generate_signal(&spec.excitation, rng, spec.duration, dt)?;
                self.simulate(q0, &inputs, dt, spec.substeps)
            }
        }
    }
}

/// Generates `spec.count` trajectories and splits them 80/20.
///
/// Trajectory `k` draws from stream `k + 1` of `seed` and the split from
/// stream 0, so the result does not depend on generation order.
pub fn generate_dataset_with(plant: &ToyPlant, spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    if spec.count < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 trajectories for a train/validation split, got {}",
            spec.count
        )));
    }
    if !(spec.rate > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {}", spec.rate)));
    }
    let trajectories = (0..spec.count)
        .map(|k| plant.excite(spec, &mut Rng::derive(seed, k as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_random_split(trajectories, &mut Rng::derive(seed, 0))
}

/// Default protocol with the given size, duration, and rate.
pub fn generate_dataset(plant: &ToyPlant, count: usize, duration: f64, rate: f64, seed: u64) -> Result<Dataset> {
    let spec = DatasetSpec {
        count,
        duration,
        rate,
        ..DatasetSpec::default()
    };
    generate_dataset_with(plant, &spec, seed)
}

/// Zero-initial-condition response to a square wave, the benchmark test
/// trajectory.
pub fn square_wave_trajectory(
    plant: &ToyPlant,
    amplitude: f64,
    period: f64,
    duration: f64,
    rate: f64,
    substeps: usize,
) -> Result<Trajectory> {
    let dt = 1.0 / rate;
    let spec = SignalSpec::SquareWave { amplitude, period };
    let inputs = generate_signal(&spec, &mut Rng::new(0), duration, dt)?;
    plant.simulate(0.0, &inputs, dt, substeps)
}
