//! Experiment configuration, read from JSON.

use std::fs;
use std::path::{Path, PathBuf};

use l3_core::eval::ModelKind;
use l3_core::l3::L3Config;
use l3_core::numerics::Matrix;
use l3_core::plant::DatasetSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Where trajectories come from: the simulated toy plant or a directory of
/// trajectory CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Plant(DatasetSpec),
    CsvDir(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Plant(DatasetSpec::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    pub koopman_features: usize,
    pub koopman_ridge: f64,
    pub koopman_use_filter: bool,
    pub edmdc_use_filter: bool,
    pub dmdc_use_filter: bool,
    pub dfl_ridge: f64,
    /// `l × (l+z+n)` state rows for DFL; the toy plant has a built-in one.
    pub dfl_structural_a: Option<Matrix>,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        BaselineSettings {
            koopman_features: 32,
            koopman_ridge: 1e-8,
            koopman_use_filter: false,
            edmdc_use_filter: false,
            dmdc_use_filter: false,
            dfl_ridge: 0.0,
            dfl_structural_a: None,
        }
    }
}

/// The toy test signal: a square wave from rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub amplitude: f64,
    pub period: f64,
    pub duration: f64,
    pub substeps: usize,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        EvaluationSettings {
            amplitude: 1.0,
            period: 2.5,
            duration: 10.0,
            substeps: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required, here or on the command line.
    pub seed: Option<u64>,
    pub data: DataSource,
    pub models: Vec<ModelKind>,
    /// Settings for every L3 variant; the seed and ablation flags are
    /// overridden per variant.
    pub l3: L3Config,
    pub baselines: BaselineSettings,
    pub evaluation: EvaluationSettings,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            data: DataSource::default(),
            models: ModelKind::TOY_BENCHMARK.to_vec(),
            l3: L3Config::default(),
            baselines: BaselineSettings::default(),
            evaluation: EvaluationSettings::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))
    }

    /// The seed from the command line, else the file.
    pub fn resolve_seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.seed)
            .ok_or_else(|| CliError::Config("a seed is required (--seed or \"seed\" in the config)".into()))
    }

    /// L3 settings for one variant.
    pub fn l3_for(&self, kind: ModelKind, seed: u64) -> L3Config {
        L3Config {
            seed,
            use_filter: kind == ModelKind::L3,
            use_zeta: kind != ModelKind::L3Noz,
            ..self.l3.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(cfg.resolve_seed(None).is_err());
        assert_eq!(cfg.resolve_seed(Some(3)).unwrap(), 3);
    }

    #[test]
    fn data_source_is_exclusive() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"data": {"csv_dir": "logs"}}"#).unwrap();
        assert_eq!(cfg.data, DataSource::CsvDir("logs".into()));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"data": {"csv_dir": "a", "plant": {}}}"#).is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sead": 1}"#).is_err());
    }

    #[test]
    fn variants_set_ablation_flags() {
        let cfg = ExperimentConfig::default();
        let nof = cfg.l3_for(ModelKind::L3Nof, 4);
        assert!(!nof.use_filter && nof.use_zeta && nof.seed == 4);
        let noz = cfg.l3_for(ModelKind::L3Noz, 4);
        assert!(!noz.use_zeta);
        assert!(cfg.l3_for(ModelKind::L3, 4).use_filter);
    }

    #[test]
    fn round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = Some(9);
        cfg.models = ModelKind::ALL.to_vec();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
