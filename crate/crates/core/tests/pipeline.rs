use std::fs;
use std::path::{Path, PathBuf};

use vai_core::harness::{ExperimentConfig, Pipeline, Stage};
use vai_core::VaiError;

fn smoke_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")
}

fn smoke() -> ExperimentConfig {
    ExperimentConfig::load(&smoke_path()).unwrap()
}

const STAGES: [Stage; 6] = [Stage::TrainVictim, Stage::FitValue, Stage::Select, Stage::Attack, Stage::Evaluate, Stage::Correlate];

#[test]
fn smoke_runs_every_stage_then_resumes_as_noop() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(), Some(dir.path().to_path_buf())).unwrap();
    p.run_all().unwrap();
    for s in STAGES {
        assert!(p.is_done(s).unwrap(), "{} not done", s.name());
    }
    for f in ["victim.ckpt", "trajectories.csv", "q.ckpt", "value.ckpt", "selections/index.csv", "correlation.csv"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let rows = p.ledger().rows().unwrap();
    assert!(rows.iter().any(|r| r.metric == "trained_return"));
    assert!(rows.iter().any(|r| r.metric.starts_with("attacked_return")));
    assert!(rows.iter().any(|r| r.metric.starts_with("predicted_drop")));
    let before = fs::read(p.ledger().path()).unwrap();

    let again = Pipeline::new(smoke(), Some(dir.path().to_path_buf())).unwrap();
    for s in STAGES {
        assert!(!again.run_stage(s).unwrap(), "{} reran", s.name());
    }
    assert_eq!(fs::read(again.ledger().path()).unwrap(), before);
}

#[test]
fn k_above_n_is_rejected_before_compute() {
    let text = fs::read_to_string(smoke_path()).unwrap().replace("k = [2]", "k = [9]");
    let err = ExperimentConfig::from_toml_str(&text, Path::new("bad.toml")).unwrap_err();
    assert!(matches!(err, VaiError::InvalidConfig(ref m) if m.contains("selection.k")), "{err}");
}

#[test]
fn unknown_field_names_the_field() {
    let text = fs::read_to_string(smoke_path()).unwrap().replace("horizon = 10", "horizon = 10\nhorizn = 3");
    let err = ExperimentConfig::from_toml_str(&text, Path::new("bad.toml")).unwrap_err();
    assert!(err.to_string().contains("horizn"), "{err}");
}

#[test]
fn downstream_stage_needs_upstream_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(), Some(dir.path().to_path_buf())).unwrap();
    for s in [Stage::FitValue, Stage::Select, Stage::Attack, Stage::Evaluate, Stage::Correlate] {
        assert!(matches!(p.run_stage(s), Err(VaiError::StageDependency { .. })), "{}", s.name());
    }
    assert!(p.ledger().rows().map(|r| r.is_empty()).unwrap_or(true));
}

#[test]
fn deleted_artifact_reruns_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(smoke(), Some(dir.path().to_path_buf())).unwrap();
    p.run_stage(Stage::TrainVictim).unwrap();
    fs::remove_file(dir.path().join("victim.ckpt")).unwrap();
    assert!(!p.is_done(Stage::TrainVictim).unwrap());
    assert!(p.run_stage(Stage::TrainVictim).unwrap());
}
