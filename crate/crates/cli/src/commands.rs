//! The subcommands, as library functions so they can be driven from tests.

use std::fs;
use std::path::{Path, PathBuf};

use l3_core::baselines::{
    default_edmdc_basis, fit_dfl, fit_dmdc, fit_edmdc, fit_koopman, fit_toy_dfl, BaselineModel, FitOptions,
};
use l3_core::eval::{compare, ComparisonReport, IdentifiedModel, ModelKind};
use l3_core::l3::{train as train_l3, train_gradient_check, GradCheckReport, L3Parameters};
use l3_core::lifting::{Dataset, LiftDims, Trajectory, TransitionPair};
use l3_core::numerics::{Matrix, Rng};
use l3_core::plant::{generate_dataset_with, square_wave_trajectory, ToyPlant};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::files::{write_json, Manifest, ModelFile, TrainingRecord, FORMAT_VERSION};
use crate::trajectory_csv::{layout_of, read_trajectory, write_trajectory};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const MODEL_DIR: &str = "models";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::format(path, e.to_string()))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::format(path, e.to_string())
}

fn number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Simulates the toy plant and writes one CSV per trajectory plus the
/// manifest into `out`.
pub fn datagen(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Manifest> {
    let DataSource::Plant(spec) = &cfg.data else {
        return Err(CliError::Config("datagen needs a plant data source; use ingest for CSV logs".into()));
    };
    let ds = generate_dataset_with(&ToyPlant, spec, seed)?;
    let dir = out.join(TRAJECTORY_DIR);
    create_dir(&dir)?;
    let width = ds.trajectories().len().to_string().len().max(3);
    let mut files = Vec::new();
    for (k, t) in ds.trajectories().iter().enumerate() {
        let name = format!("traj_{k:0width$}.csv");
        write_trajectory(&dir.join(&name), t)?;
        files.push(name);
    }
    let manifest = Manifest::describe(&ds, seed, PathBuf::from(TRAJECTORY_DIR), files);
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Validates a directory of trajectory CSVs, assigns a seeded 80/20 split and
/// writes the manifest into `out`.
pub fn ingest(csv_dir: &Path, seed: u64, out: &Path) -> Result<Manifest> {
    let entries = fs::read_dir(csv_dir).map_err(|e| CliError::io(csv_dir, e))?;
    let mut names = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(csv_dir, e))?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                names.push(name.to_string());
            }
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(CliError::format(csv_dir, "no .csv files found"));
    }
    let mut trajectories: Vec<Trajectory> = Vec::with_capacity(names.len());
    for name in &names {
        let path = csv_dir.join(name);
        let t = read_trajectory(&path)?;
        if let Some(first) = trajectories.first() {
            if layout_of(first) != layout_of(&t) {
                return Err(CliError::format(&path, format!("header differs from {}", names[0])));
            }
            if (first.dt() - t.dt()).abs() > 1e-9 * first.dt() {
                return Err(CliError::format(
                    &path,
                    format!("sample period {} differs from {} in {}", t.dt(), first.dt(), names[0]),
                ));
            }
        }
        trajectories.push(t);
    }
    let ds = Dataset::with_random_split(trajectories, &mut Rng::derive(seed, 0))?;
    let data_dir = fs::canonicalize(csv_dir).map_err(|e| CliError::io(csv_dir, e))?;
    create_dir(out)?;
    let manifest = Manifest::describe(&ds, seed, data_dir, names);
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Fits one model of the given kind.
pub fn fit_model(cfg: &ExperimentConfig, kind: ModelKind, ds: &Dataset, seed: u64) -> Result<ModelFile> {
    let b = &cfg.baselines;
    let baseline = |model: BaselineModel, fit: FitOptions| ModelFile {
        format_version: FORMAT_VERSION,
        kind,
        reported_dimension: model.reported_dimension(),
        model: IdentifiedModel::from_baseline(&model),
        centering: ds.centering().clone(),
        fit: Some(fit),
        training: None,
    };
    let file = match kind {
        ModelKind::Dmdc => {
            let fit = FitOptions {
                use_filter: b.dmdc_use_filter,
                ridge: 0.0,
            };
            baseline(fit_dmdc(ds, &fit)?, fit)
        }
        ModelKind::Edmdc => {
            let fit = FitOptions {
                use_filter: b.edmdc_use_filter,
                ridge: 0.0,
            };
            let basis = default_edmdc_basis(ds.state_dim(), ds.observable_dim())?;
            baseline(fit_edmdc(ds, basis, &fit)?, fit)
        }
        ModelKind::Koopman => {
            let fit = FitOptions {
                use_filter: b.koopman_use_filter,
                ridge: b.koopman_ridge,
            };
            baseline(fit_koopman(ds, b.koopman_features, &fit)?, fit)
        }
        ModelKind::Dfl => {
            let fit = FitOptions {
                use_filter: true,
                ridge: b.dfl_ridge,
            };
            let model = match &b.dfl_structural_a {
                Some(a) => fit_dfl(ds, a, &fit)?,
                None => fit_toy_dfl(ds, &fit).map_err(|_| {
                    CliError::Config(format!(
                        "DFL needs baselines.dfl_structural_a ({} × {}) for this dataset",
                        ds.state_dim(),
                        ds.state_dim() + ds.observable_dim() + ds.input_dim()
                    ))
                })?,
            };
            baseline(model, fit)
        }
        ModelKind::L3 | ModelKind::L3Nof | ModelKind::L3Noz => {
            let l3cfg = cfg.l3_for(kind, seed);
            let model = train_l3(ds, &l3cfg)?;
            let identified = IdentifiedModel::from_l3(kind, &model);
            ModelFile {
                format_version: FORMAT_VERSION,
                kind,
                reported_dimension: identified.reported_dimension(),
                model: identified,
                centering: ds.centering().clone(),
                fit: None,
                training: Some(TrainingRecord {
                    config: model.config,
                    best_epoch: model.best_epoch,
                    history: model.history,
                }),
            }
        }
    };
    Ok(file)
}

/// Fits every configured model on the manifest's dataset. Writes
/// `models/<name>.json`, plus `models/<name>_history.csv` for L3 variants,
/// and returns the model file paths.
pub fn train(cfg: &ExperimentConfig, seed: u64, manifest_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::load(manifest_path)?;
    let ds = manifest.load_dataset(manifest_path)?;
    let dir = out.join(MODEL_DIR);
    create_dir(&dir)?;
    let mut paths = Vec::new();
    for &kind in &cfg.models {
        let file = fit_model(cfg, kind, &ds, seed)?;
        let path = dir.join(format!("{}.json", kind.name()));
        write_json(&path, &file)?;
        if let Some(training) = &file.training {
            write_history(&dir.join(format!("{}_history.csv", kind.name())), training)?;
        }
        paths.push(path);
    }
    Ok(paths)
}

fn write_history(path: &Path, training: &TrainingRecord) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_error(path);
    w.write_record(["epoch", "train_loss", "validation_loss", "best_validation_loss"])
        .map_err(&err)?;
    for r in &training.history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.map(number).unwrap_or_default(),
            number(r.validation_loss),
            number(r.best_validation_loss),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// The test trajectory: a CSV when given, else the configured square wave on
/// the toy plant.
pub fn test_trajectory(cfg: &ExperimentConfig, test: Option<&Path>) -> Result<Trajectory> {
    if let Some(path) = test {
        return read_trajectory(path);
    }
    let DataSource::Plant(spec) = &cfg.data else {
        return Err(CliError::Config("evaluation on CSV data needs --test <trajectory.csv>".into()));
    };
    let e = &cfg.evaluation;
    Ok(square_wave_trajectory(&ToyPlant, e.amplitude, e.period, e.duration, spec.rate, e.substeps)?)
}

/// Rolls out every model on the test trajectory and writes `report.csv`,
/// `rollout.csv` and `report.json` into `out`.
pub fn eval(cfg: &ExperimentConfig, model_paths: &[PathBuf], test: Option<&Path>, out: &Path) -> Result<ComparisonReport> {
    if model_paths.is_empty() {
        return Err(CliError::Config("no model files to evaluate".into()));
    }
    let models = model_paths
        .iter()
        .map(|p| ModelFile::load(p).map(|f| f.model))
        .collect::<Result<Vec<_>>>()?;
    let trajectory = test_trajectory(cfg, test)?;
    let report = compare(&trajectory, &models)?;
    create_dir(out)?;
    write_report_csv(&out.join("report.csv"), &report)?;
    write_rollout_csv(&out.join("rollout.csv"), &report)?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// `model,dimension,ise,diverged_at`; `ise` is empty for a diverged rollout.
fn write_report_csv(path: &Path, report: &ComparisonReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = csv_error(path);
    w.write_record(["model", "dimension", "ise", "diverged_at"]).map_err(&err)?;
    for r in &report.results {
        w.write_record([
            r.kind.name().to_string(),
            r.dimension.to_string(),
            r.ise.map(number).unwrap_or_default(),
            r.diverged_at.map(|s| s.to_string()).unwrap_or_default(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// `t`, the true states `truth_x*`, then per model its predicted states
/// `<model>_x*` and state error norm `<model>_error`.
fn write_rollout_csv(path: &Path, report: &ComparisonReport) -> Result<()> {
    let l = report.truth.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((0..l).map(|i| format!("truth_x{i}")));
    for r in &report.results {
        header.extend((0..l).map(|i| format!("{}_x{i}", r.kind.name())));
        header.push(format!("{}_error", r.kind.name()));
    }
    let mut w = csv_writer(path)?;
    let err = csv_error(path);
    w.write_record(&header).map_err(&err)?;
    for (k, truth) in report.truth.iter().enumerate() {
        let mut row = vec![number(k as f64 * report.dt)];
        row.extend(truth.iter().map(|&v| number(v)));
        for r in &report.results {
            match &r.rollout {
                Some(roll) => {
                    row.extend(roll.states[k].iter().map(|&v| number(v)));
                    row.push(number(r.state_error[k]));
                }
                None => row.extend(std::iter::repeat_n(String::new(), l + 1)),
            }
        }
        w.write_record(&row).map_err(&err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Finite-difference check of the L3 loss gradient on a random 3-8-2
/// network and four random transitions.
pub fn gradcheck(seed: u64) -> Result<GradCheckReport> {
    let dims = LiftDims::new(1, 2, 2, 1);
    let mut rng = Rng::new(seed);
    let params = L3Parameters::initialize(dims, &[8], 0.5, &mut rng)?;
    let mut draw = |n: usize| rng.uniform(-1.0, 1.0, n);
    let pairs = (0..4)
        .map(|_| {
            Ok(TransitionPair {
                x: draw(dims.l)?,
                zeta: draw(dims.z)?,
                u: draw(dims.n)?,
                x_next: draw(dims.l)?,
                zeta_next: draw(dims.z)?,
                u_next: draw(dims.n)?,
            })
        })
        .collect::<l3_core::Result<Vec<_>>>()?;
    let q = Matrix::identity(dims.a_rows() + dims.m);
    Ok(train_gradient_check(&params, &pairs, &q)?)
}
