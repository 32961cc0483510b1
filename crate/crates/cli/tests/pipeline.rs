use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use l3_cli::commands::{self, MANIFEST_FILE, MODEL_DIR, TRAJECTORY_DIR};
use l3_cli::config::ExperimentConfig;
use l3_cli::files::{Manifest, ModelFile};
use l3_cli::trajectory_csv::write_trajectory;
use l3_core::eval::{rollout, ModelKind};
use l3_core::lifting::Trajectory;
use l3_core::numerics::Rng;
use tempfile::TempDir;

fn l3_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_l3"))
}

/// A few short trajectories and a couple of epochs: enough to exercise
/// every stage quickly.
fn small_config(models: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "data": {{ "plant": {{ "count": 6, "duration": 1.0, "rate": 20.0 }} }},
            "models": {models},
            "l3": {{ "hidden": [8], "max_epochs": 3 }}
        }}"#
    );
    serde_json::from_str(&text).unwrap()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn datagen_defaults_write_100_files_of_101_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = ExperimentConfig::default();
    let manifest = commands::datagen(&cfg, 1, dir.path()).unwrap();
    assert_eq!(manifest.trajectories.len(), 100);
    let files = read_dir_sorted(&dir.path().join(TRAJECTORY_DIR));
    assert_eq!(files.len(), 100);
    for (_, bytes) in &files {
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 102, "header plus 101 data rows");
    }
    assert_eq!(manifest.dmdc_dimension, 4);
}

#[test]
fn datagen_is_deterministic_per_seed() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let c = TempDir::new().unwrap();
    let cfg = small_config(r#"["dmdc"]"#);
    commands::datagen(&cfg, 4, a.path()).unwrap();
    commands::datagen(&cfg, 4, b.path()).unwrap();
    commands::datagen(&cfg, 5, c.path()).unwrap();
    let traj = |d: &TempDir| read_dir_sorted(&d.path().join(TRAJECTORY_DIR));
    assert_eq!(traj(&a), traj(&b));
    assert_ne!(traj(&a), traj(&c));
    assert_eq!(
        fs::read(a.path().join(MANIFEST_FILE)).unwrap(),
        fs::read(b.path().join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn datagen_with_one_trajectory_is_an_error() {
    let dir = TempDir::new().unwrap();
    let mut cfg = small_config(r#"["dmdc"]"#);
    if let l3_cli::config::DataSource::Plant(spec) = &mut cfg.data {
        spec.count = 1;
    }
    assert!(commands::datagen(&cfg, 1, dir.path()).is_err());
}

#[test]
fn train_writes_every_model_and_round_trips_predictions() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(r#"["l3", "dfl", "dmdc", "edmdc", "koopman", "l3-nof", "l3-noz"]"#);
    commands::datagen(&cfg, 2, dir.path()).unwrap();
    let paths = commands::train(&cfg, 2, &dir.path().join(MANIFEST_FILE), dir.path()).unwrap();
    assert_eq!(paths.len(), 7);
    for kind in ModelKind::ALL {
        assert!(dir.path().join(MODEL_DIR).join(format!("{}.json", kind.name())).exists());
    }
    for kind in [ModelKind::L3, ModelKind::L3Nof, ModelKind::L3Noz] {
        assert!(dir.path().join(MODEL_DIR).join(format!("{}_history.csv", kind.name())).exists());
    }

    let manifest_path = dir.path().join(MANIFEST_FILE);
    let ds = Manifest::load(&manifest_path).unwrap().load_dataset(&manifest_path).unwrap();
    let test = commands::test_trajectory(&cfg, None).unwrap();
    for kind in ModelKind::ALL {
        let in_memory = commands::fit_model(&cfg, kind, &ds, 2).unwrap().model;
        let loaded = ModelFile::load(&dir.path().join(MODEL_DIR).join(format!("{}.json", kind.name())))
            .unwrap()
            .model;
        let run = |m| rollout(m, &test.states()[0], &test.observables()[0], test.inputs(), test.dt());
        match (run(&in_memory), run(&loaded)) {
            (Ok(a), Ok(b)) => {
                for (sa, sb) in a.states.iter().zip(&b.states) {
                    for (va, vb) in sa.iter().zip(sb) {
                        assert!((va - vb).abs() <= 1e-12, "{kind}: {va} vs {vb}");
                    }
                }
            }
            (Err(_), Err(_)) => {}
            (a, b) => panic!("{kind}: in-memory {:?} vs loaded {:?}", a.is_ok(), b.is_ok()),
        }
    }
}

#[test]
fn missing_data_dir_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(r#"["dmdc"]"#);
    commands::datagen(&cfg, 1, dir.path()).unwrap();
    fs::remove_dir_all(dir.path().join(TRAJECTORY_DIR)).unwrap();
    let err = commands::train(&cfg, 1, &dir.path().join(MANIFEST_FILE), dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains(TRAJECTORY_DIR), "{err}");
}

#[test]
fn end_to_end_through_the_binary() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(r#"["koopman", "edmdc", "dfl", "l3", "l3-nof"]"#);
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("run");
    for sub in ["datagen", "train", "eval"] {
        let status = l3_bin()
            .args(["--seed", "3", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .arg(sub)
            .output()
            .unwrap();
        assert!(status.status.success(), "{sub}: {}", String::from_utf8_lossy(&status.stderr));
    }
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "model,dimension,ise,diverged_at");
    assert_eq!(lines.len(), 6, "five models: {report}");

    let json = l3_bin()
        .args(["--seed", "3", "--json", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .arg("eval")
        .output()
        .unwrap();
    assert!(json.status.success());
    let value: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(value["results"].as_array().unwrap().len(), 5);
}

#[test]
fn eval_on_truncated_csv_names_the_line() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(r#"["dmdc"]"#);
    commands::datagen(&cfg, 1, dir.path()).unwrap();
    let models = commands::train(&cfg, 1, &dir.path().join(MANIFEST_FILE), dir.path()).unwrap();
    let src = dir.path().join(TRAJECTORY_DIR).join("traj_000.csv");
    let text = fs::read_to_string(&src).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let cut = lines[5].rfind(',').unwrap();
    lines[5].truncate(cut);
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();

    let err = commands::eval(&cfg, &models, Some(&bad), &dir.path().join("eval")).unwrap_err();
    assert!(err.to_string().contains("bad.csv:6:"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn unknown_format_version_fails_loudly() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(r#"["dmdc"]"#);
    commands::datagen(&cfg, 1, dir.path()).unwrap();
    let models = commands::train(&cfg, 1, &dir.path().join(MANIFEST_FILE), dir.path()).unwrap();
    let text = fs::read_to_string(&models[0]).unwrap();
    let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 99", 1);
    assert_ne!(text, bumped);
    fs::write(&models[0], bumped).unwrap();
    let err = ModelFile::load(&models[0]).unwrap_err();
    assert!(err.to_string().contains("99"), "{err}");
}

fn synthetic_csvs(dir: &Path, l: usize, n: usize, z: usize, count: usize, seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = Rng::new(seed);
    for k in 0..count {
        let len = 30;
        let mut states = vec![rng.uniform(-1.0, 1.0, l).unwrap()];
        let inputs: Vec<Vec<f64>> = (0..len).map(|_| rng.uniform(-1.0, 1.0, n).unwrap()).collect();
        for t in 1..len {
            let prev = &states[t - 1];
            let next = (0..l)
                .map(|i| 0.9 * prev[i] + 0.1 * prev[(i + 1) % l].sin() + 0.05 * inputs[t - 1][i % n])
                .collect();
            states.push(next);
        }
        let observables = states
            .iter()
            .zip(&inputs)
            .map(|(x, u)| (0..z).map(|j| x[j % l].tanh() + 0.3 * u[j % n]).collect())
            .collect();
        let t = Trajectory::new(0.05, states, inputs, observables).unwrap();
        write_trajectory(&dir.join(format!("log_{k:02}.csv")), &t).unwrap();
    }
}

#[test]
fn ingest_without_observables_skips_the_filter() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("csv");
    synthetic_csvs(&csv, 2, 1, 0, 5, 7);
    let out = dir.path().join("out");
    let manifest = commands::ingest(&csv, 1, &out).unwrap();
    assert_eq!(manifest.observable_dim, 0);
    assert_eq!(manifest.dmdc_dimension, 3);
    let mut cfg = small_config(r#"["dmdc", "l3"]"#);
    cfg.data = l3_cli::config::DataSource::CsvDir(csv.clone());
    commands::train(&cfg, 1, &out.join(MANIFEST_FILE), &out).unwrap();
    let l3 = ModelFile::load(&out.join(MODEL_DIR).join("l3.json")).unwrap();
    assert!(l3.model.filter.is_none());
}

#[test]
fn ingest_rejects_mixed_column_counts() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("csv");
    synthetic_csvs(&csv, 2, 1, 1, 3, 7);
    synthetic_csvs(&dir.path().join("other"), 2, 1, 2, 1, 8);
    fs::copy(dir.path().join("other").join("log_00.csv"), csv.join("log_99.csv")).unwrap();
    let err = commands::ingest(&csv, 1, &dir.path().join("out")).unwrap_err();
    assert!(err.to_string().contains("log_99.csv"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn ingest_is_deterministic_and_split_depends_on_seed() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("csv");
    synthetic_csvs(&csv, 2, 1, 1, 10, 3);
    let a = commands::ingest(&csv, 1, &dir.path().join("a")).unwrap();
    let b = commands::ingest(&csv, 1, &dir.path().join("b")).unwrap();
    assert_eq!(a, b);
    let splits: Vec<_> = (0..8)
        .map(|s| commands::ingest(&csv, s, &dir.path().join("s")).unwrap().trajectories)
        .collect();
    assert!(splits.iter().any(|s| *s != splits[0]));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let usage = l3_bin().arg("bogus").output().unwrap();
    assert_eq!(usage.status.code(), Some(1));
    let help = l3_bin().arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
    let no_seed = l3_bin().arg("--out").arg(dir.path()).arg("datagen").output().unwrap();
    assert_eq!(no_seed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&no_seed.stderr).contains("seed"));
    let grad = l3_bin().args(["--seed", "1", "gradcheck"]).output().unwrap();
    assert_eq!(grad.status.code(), Some(0));
}

#[test]
fn singular_regression_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("csv");
    fs::create_dir_all(&csv).unwrap();
    // constant data: the DMDc Gram matrix is rank one
    for k in 0..3 {
        let t = Trajectory::new(0.1, vec![vec![1.0]; 5], vec![vec![0.0]; 5], vec![vec![]; 5]).unwrap();
        write_trajectory(&csv.join(format!("c{k}.csv")), &t).unwrap();
    }
    let cfg = ExperimentConfig {
        models: vec![ModelKind::Dmdc],
        ..ExperimentConfig::default()
    };
    let config = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let base = |sub: &str| {
        let mut c = l3_bin();
        c.args(["--seed", "1", "--config"]).arg(&config).arg("--out").arg(&out).arg(sub);
        c
    };
    assert!(base("ingest").arg("--data").arg(&csv).output().unwrap().status.success());
    let train = base("train").output().unwrap();
    assert_eq!(train.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&train.stderr).contains("singular"));
}
