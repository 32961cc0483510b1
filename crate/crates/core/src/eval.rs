//! Open-loop rollout of identified models and integrated squared error.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineKind, BaselineModel};
use crate::causality::AnticausalFilter;
use crate::l3::L3Model;
use crate::lifting::{assemble_datum, LiftDims, LiftedLinearModel, PolyBasis, Trajectory};
use crate::neural::Mlp;
use crate::{Error, Result};

/// The benchmarked model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Koopman,
    Edmdc,
    Dfl,
    L3,
    L3Nof,
    L3Noz,
    Dmdc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Koopman,
        ModelKind::Edmdc,
        ModelKind::Dfl,
        ModelKind::L3,
        ModelKind::L3Nof,
        ModelKind::L3Noz,
        ModelKind::Dmdc,
    ];

    /// The five-model toy benchmark set, in table order.
    pub const TOY_BENCHMARK: [ModelKind; 5] = [
        ModelKind::Koopman,
        ModelKind::Edmdc,
        ModelKind::Dfl,
        ModelKind::L3,
        ModelKind::L3Nof,
    ];

    /// Identifier used on the command line and in file names.
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Koopman => "koopman",
            ModelKind::Edmdc => "edmdc",
            ModelKind::Dfl => "dfl",
            ModelKind::L3 => "l3",
            ModelKind::L3Nof => "l3-nof",
            ModelKind::L3Noz => "l3-noz",
            ModelKind::Dmdc => "dmdc",
        }
    }

    /// Display label for tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Koopman => "Koopman",
            ModelKind::Edmdc => "eDMDc",
            ModelKind::Dfl => "DFL",
            ModelKind::L3 => "L3",
            ModelKind::L3Nof => "L3 (NoF)",
            ModelKind::L3Noz => "L3 (NoZ)",
            ModelKind::Dmdc => "DMDc",
        }
    }

    pub fn is_l3(self) -> bool {
        matches!(self, ModelKind::L3 | ModelKind::L3Nof | ModelKind::L3Noz)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model '{s}'")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How synthetic observables are produced from `(x, ζ*)` at the start of a
/// rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Lift {
    None,
    Poly { basis: PolyBasis },
    Network { net: Mlp },
}

/// Any identified model, ready for rollout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiedModel {
    pub kind: ModelKind,
    pub linear: LiftedLinearModel,
    pub lift: Lift,
    pub filter: Option<AnticausalFilter>,
}

impl IdentifiedModel {
    pub fn from_l3(kind: ModelKind, model: &L3Model) -> Self {
        IdentifiedModel {
            kind,
            linear: model.linear.clone(),
            lift: match &model.net {
                Some(net) => Lift::Network { net: net.clone() },
                None => Lift::None,
            },
            filter: model.filter.clone(),
        }
    }

    pub fn from_baseline(model: &BaselineModel) -> Self {
        let kind = match model.kind {
            BaselineKind::Dmdc => ModelKind::Dmdc,
            BaselineKind::Edmdc => ModelKind::Edmdc,
            BaselineKind::KoopmanWithControl => ModelKind::Koopman,
            BaselineKind::Dfl => ModelKind::Dfl,
        };
        IdentifiedModel {
            kind,
            linear: model.linear.clone(),
            lift: match &model.basis {
                Some(basis) => Lift::Poly { basis: basis.clone() },
                None => Lift::None,
            },
            filter: model.filter.clone(),
        }
    }

    pub fn dims(&self) -> LiftDims {
        self.linear.dims()
    }

    /// Datum length `p`, except Koopman, which counts state plus features.
    pub fn reported_dimension(&self) -> usize {
        let d = self.dims();
        match self.kind {
            ModelKind::Koopman => d.l + d.m,
            _ => d.p(),
        }
    }

    fn synthetic(&self, x: &[f64], zeta_star: &[f64]) -> Result<Vec<f64>> {
        let v = [x, zeta_star].concat();
        let eta = match &self.lift {
            Lift::None => Vec::new(),
            Lift::Poly { basis } => basis.features(&v)?,
            Lift::Network { net } => net.forward(&v)?,
        };
        if eta.len() != self.dims().m {
            return Err(Error::dims("synthetic observables", self.dims().m, eta.len()));
        }
        Ok(eta)
    }
}

/// Simulated trajectory of a model. `observables` holds the model's own
/// observable channel: cleaned when it was fitted with a filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub observables: Vec<Vec<f64>>,
    pub synthetic: Vec<Vec<f64>>,
}

/// Iterates the model from `(x0, ζ0)` over `inputs`, one output sample per
/// input sample. `ζ0` is a raw measurement; it is ignored when the model has
/// no observables. After the first step the model feeds back its own
/// observable predictions and never sees the truth again.
pub fn rollout(model: &IdentifiedModel, x0: &[f64], zeta0: &[f64], inputs: &[Vec<f64>], dt: f64) -> Result<Rollout> {
    let dims = model.dims();
    if x0.len() != dims.l {
        return Err(Error::dims("rollout initial state", dims.l, x0.len()));
    }
    if dims.z > 0 && zeta0.len() != dims.z {
        return Err(Error::dims("rollout initial observables", dims.z, zeta0.len()));
    }
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("rollout needs at least one input sample".into()));
    }
    if let Some(u) = inputs.iter().find(|u| u.len() != dims.n) {
        return Err(Error::dims("rollout input", dims.n, u.len()));
    }
    let zeta0 = if dims.z > 0 { zeta0 } else { &[] };
    let mut zeta_star = match &model.filter {
        Some(f) => f.clean(zeta0, &inputs[0])?,
        None => zeta0.to_vec(),
    };
    let mut x = x0.to_vec();
    let mut eta = model.synthetic(&x, &zeta_star)?;
    let mut out = Rollout {
        dt,
        states: vec![x.clone()],
        observables: vec![zeta_star.clone()],
        synthetic: vec![eta.clone()],
    };
    let raw_channel = model.linear.is_folded() && model.filter.is_some();
    for step in 1..inputs.len() {
        let u_prev = &inputs[step - 1];
        let channel = match (&model.filter, raw_channel) {
            (Some(f), true) => f.restore(&zeta_star, u_prev)?,
            _ => zeta_star.clone(),
        };
        let xi = assemble_datum(&dims, &x, &channel, &eta, u_prev)?;
        let (next, eta_next) = model.linear.predict(&xi)?;
        if !next.iter().chain(&eta_next).all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step });
        }
        x = next[..dims.l].to_vec();
        zeta_star = next[dims.l..].to_vec();
        eta = eta_next;
        out.states.push(x.clone());
        out.observables.push(zeta_star.clone());
        out.synthetic.push(eta.clone());
    }
    Ok(out)
}

/// Rectangle-rule integral of `‖x̂_t − x_t‖²` over every sample.
pub fn ise(predicted: &[Vec<f64>], truth: &[Vec<f64>], dt: f64) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::dims("ISE sequence length", truth.len(), predicted.len()));
    }
    let mut total = 0.0;
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::dims("ISE sample width", t.len(), p.len()));
        }
        total += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total * dt)
}

/// One model's row of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub kind: ModelKind,
    pub dimension: usize,
    /// `None` when the rollout diverged.
    pub ise: Option<f64>,
    pub diverged_at: Option<usize>,
    /// `‖x̂_t − x_t‖` per sample; empty when diverged.
    pub state_error: Vec<f64>,
    pub rollout: Option<Rollout>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dt: f64,
    pub truth: Vec<Vec<f64>>,
    pub results: Vec<ModelResult>,
}

/// Rolls every model out from the test trajectory's first sample over its
/// inputs and scores the state prediction. A model whose rollout overflows is
/// reported as diverged rather than failing the comparison.
pub fn compare(test: &Trajectory, models: &[IdentifiedModel]) -> Result<ComparisonReport> {
    let truth = test.states().to_vec();
    let mut results = Vec::with_capacity(models.len());
    for model in models {
        let d = model.dims();
        if d.l != test.state_dim() || d.n != test.input_dim() {
            return Err(Error::dims("model state/input width", test.state_dim() + test.input_dim(), d.l + d.n));
        }
        let result = match rollout(model, &truth[0], &test.observables()[0], test.inputs(), test.dt()) {
            Ok(r) => {
                let state_error = r
                    .states
                    .iter()
                    .zip(&truth)
                    .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                    .collect();
                let value = ise(&r.states, &truth, test.dt())?;
                ModelResult {
                    kind: model.kind,
                    dimension: model.reported_dimension(),
                    ise: value.is_finite().then_some(value),
                    diverged_at: None,
                    state_error,
                    rollout: Some(r),
                }
            }
            Err(Error::NonFiniteState { step }) => ModelResult {
                kind: model.kind,
                dimension: model.reported_dimension(),
                ise: None,
                diverged_at: Some(step),
                state_error: Vec::new(),
                rollout: None,
            },
            Err(e) => return Err(e),
        };
        results.push(result);
    }
    Ok(ComparisonReport {
        dt: test.dt(),
        truth,
        results,
    })
}

impl ComparisonReport {
    pub fn result(&self, kind: ModelKind) -> Option<&ModelResult> {
        self.results.iter().find(|r| r.kind == kind)
    }

    /// Aligned text table of model, dimension and ISE.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>5} {:>14}", "model", "dim", "ISE");
        for r in &self.results {
            let ise = match r.ise {
                Some(v) => format!("{v:.6}"),
                None => "diverged".to_string(),
            };
            let _ = writeln!(out, "{:<10} {:>5} {:>14}", r.kind.label(), r.dimension, ise);
        }
        out
    }
}
