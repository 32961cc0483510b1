//! Dataset manifests and model files.

use std::fs;
use std::path::{Path, PathBuf};

use l3_core::baselines::FitOptions;
use l3_core::eval::{IdentifiedModel, ModelKind};
use l3_core::l3::{EpochRecord, L3Config};
use l3_core::lifting::{Centering, Dataset, SplitTag};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::trajectory_csv::read_trajectory;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: SplitTag,
}

/// Describes a dataset on disk: dimensions, sample period, and which
/// trajectory file belongs to which split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub state_dim: usize,
    pub input_dim: usize,
    pub observable_dim: usize,
    pub dt: f64,
    pub seed: u64,
    /// Datum length of a DMDc model on this data, `l + z + n`.
    pub dmdc_dimension: usize,
    /// Trajectory directory, relative to the manifest unless absolute.
    pub data_dir: PathBuf,
    pub trajectories: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn describe(ds: &Dataset, seed: u64, data_dir: PathBuf, files: Vec<String>) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            state_dim: ds.state_dim(),
            input_dim: ds.input_dim(),
            observable_dim: ds.observable_dim(),
            dt: ds.dt(),
            seed,
            dmdc_dimension: ds.state_dim() + ds.observable_dim() + ds.input_dim(),
            data_dir,
            trajectories: files
                .into_iter()
                .zip(ds.split())
                .map(|(file, &split)| ManifestEntry { file, split })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        load_versioned(path)
    }

    /// Reads every listed trajectory and rebuilds the dataset with the
    /// recorded split.
    pub fn load_dataset(&self, manifest_path: &Path) -> Result<Dataset> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let dir = base.join(&self.data_dir);
        let mut trajectories = Vec::with_capacity(self.trajectories.len());
        for entry in &self.trajectories {
            trajectories.push(read_trajectory(&dir.join(&entry.file))?);
        }
        let split = self.trajectories.iter().map(|e| e.split).collect();
        let ds = Dataset::new(trajectories, split)?;
        if (ds.state_dim(), ds.input_dim(), ds.observable_dim()) != (self.state_dim, self.input_dim, self.observable_dim) {
            return Err(CliError::format(manifest_path, "trajectory files disagree with the manifest dimensions"));
        }
        Ok(ds)
    }
}

/// Training details kept alongside an L3 model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub config: L3Config,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// One serialized model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub kind: ModelKind,
    pub reported_dimension: usize,
    pub model: IdentifiedModel,
    pub centering: Centering,
    pub fit: Option<FitOptions>,
    pub training: Option<TrainingRecord>,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<ModelFile> {
        load_versioned(path)
    }
}

/// Parses a JSON file after checking its `format_version`.
fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
    match value.get("format_version").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(CliError::format(
                path,
                format!("unsupported format_version {v} (this build reads {FORMAT_VERSION})"),
            ))
        }
        None => return Err(CliError::format(path, "missing format_version")),
    }
    serde_json::from_value(value).map_err(|e| CliError::format(path, e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
