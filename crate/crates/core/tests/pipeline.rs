//! End-to-end runs over the shipped mock-backend spam fixture.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use pws_core::data::load_dataset;
use pws_core::fixtures::spam_synth;
use pws_core::pipeline::{
    compare, exit_code, model_file, read_metrics, run_pipeline, RunConfig, RunOptions, RunRecord,
    Stage, StageStatus,
};
use pws_core::prompt::LabelerSuite;
use pws_core::Error;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/spam_synth")
}

fn config(name: &str, out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(fixture_dir().join(name)).unwrap();
    cfg.output = out.to_path_buf();
    cfg
}

#[test]
fn full_run_writes_artifact_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(spam_synth::PWS_CONFIG, tmp.path());
    let out = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(out.executed, Stage::ALL.to_vec());
    let mut expected: BTreeSet<String> = [
        "votes.csv",
        "votes.uncal.csv",
        "labels.csv",
        "labels.meta.json",
        "metrics.json",
        "calibration.json",
        "errors.jsonl",
        "run.json",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    expected.extend(cfg.seeds.iter().map(|s| model_file(*s)));
    let present: BTreeSet<String> = fs::read_dir(&out.run_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| !out.run_dir.join(n).is_dir())
        .collect();
    for name in &expected {
        assert!(present.contains(name), "missing {name}");
    }
    let models = present
        .iter()
        .filter(|n| n.starts_with("model-seed"))
        .count();
    assert_eq!(models, 6);
    assert!(out.run_dir.join("report/report.json").exists());
    assert!(!out.run_dir.join(".lock").exists());
    assert!(RunRecord::load(&out.run_dir).unwrap().is_finished());
}

#[test]
fn backend_calls_equal_unique_prompts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(spam_synth::PWS_CONFIG, tmp.path());
    let out = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let stats = &out.gateway_stats.unwrap()["t0pp"];

    let ds = load_dataset(fixture_dir()).unwrap();
    let suite =
        LabelerSuite::load(fixture_dir().join("pws.labelers.json"), &ds.class_space).unwrap();
    let mut unique = BTreeSet::new();
    for split in ["train", "valid"] {
        for e in &ds.split(split).unwrap().examples {
            for lf in &suite.lfs {
                unique.insert((lf.render(e).unwrap(), lf.candidates.clone()));
            }
        }
    }
    for lf in &suite.lfs {
        for null in pws_core::calibration::NULL_INPUTS {
            unique.insert((
                lf.render_with(|_| Some(null)).unwrap(),
                lf.candidates.clone(),
            ));
        }
    }
    assert_eq!(stats.backend_calls as usize, unique.len());
    assert_eq!(stats.failures, 0);
}

#[test]
fn rerun_is_up_to_date() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(spam_synth::PWS_CONFIG, tmp.path());
    let first = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let second = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert!(second.up_to_date());
    assert!(second.gateway_stats.is_none(), "no gateway was built");
    assert_eq!(first.run_dir, second.run_dir);
}

#[test]
fn staged_invocations_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(spam_synth::PWS_CONFIG, tmp.path());
    let opts = |until| RunOptions {
        until: Some(until),
        ..Default::default()
    };
    let a = run_pipeline(&cfg, &opts(Stage::Label)).unwrap();
    assert_eq!(a.executed, [Stage::Calibrate, Stage::Query, Stage::Label]);
    assert_eq!(a.record.status(Stage::Train), StageStatus::Pending);
    let b = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(b.executed, [Stage::Train, Stage::Eval, Stage::Report]);
    assert!(b.gateway_stats.is_none());

    // A deleted artifact reruns its stage and everything after it.
    fs::remove_file(b.run_dir.join("labels.csv")).unwrap();
    let c = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    assert_eq!(
        c.executed,
        [Stage::Label, Stage::Train, Stage::Eval, Stage::Report]
    );
}

#[test]
fn run_id_tracks_config_and_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(spam_synth::PWS_CONFIG, tmp.path());
    let id = cfg.run_id().unwrap();
    let mut moved = cfg.clone();
    moved.output = tmp.path().join("elsewhere");
    assert_eq!(moved.run_id().unwrap(), id);
    let mut other = cfg.clone();
    other.seeds = vec![7, 8];
    assert_ne!(other.run_id().unwrap(), id);
    let opts = RunOptions {
        seeds: Some(vec![7, 8]),
        ..Default::default()
    };
    assert_eq!(opts.apply(&cfg).run_id().unwrap(), other.run_id().unwrap());
}

#[test]
fn triplet_on_two_lfs_is_a_stage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fx");
    fs::create_dir_all(&fx).unwrap();
    for entry in fs::read_dir(fixture_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.is_file() {
            fs::copy(&p, fx.join(p.file_name().unwrap())).unwrap();
        }
    }
    let ds = load_dataset(&fx).unwrap();
    let suite = LabelerSuite::load(fx.join("pws.labelers.json"), &ds.class_space).unwrap();
    let two = LabelerSuite::new(suite.lfs[..2].to_vec(), ds.class_space.clone()).unwrap();
    two.save(fx.join("two.labelers.json")).unwrap();
    let mut cfg = RunConfig::load(fx.join(spam_synth::PWS_CONFIG)).unwrap();
    cfg.labelers = "two.labelers.json".into();
    cfg.label.label_model = "triplet".parse().unwrap();
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    assert!(
        err.to_string().contains("triplet requires m ≥ 3; use ds"),
        "{err}"
    );
    assert!(matches!(err, Error::Stage { .. }));
    assert_eq!(exit_code(&err), 3);
    let record = RunRecord::load(cfg.run_dir().unwrap()).unwrap();
    assert_eq!(record.status(Stage::Label), StageStatus::Failed);
    assert_eq!(record.status(Stage::Query), StageStatus::Done);
}

#[test]
fn missing_dataset_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(spam_synth::PWS_CONFIG, tmp.path());
    cfg.dataset = "no-such-dir".into();
    let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
    assert_eq!(exit_code(&err), 2);
}

#[test]
fn comparing_a_run_with_itself_gives_zero_deltas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(spam_synth::ZS_CONFIG, tmp.path());
    let c = compare(&cfg, &cfg, &RunOptions::default()).unwrap();
    for m in pws_core::pipeline::COMPARISON_METRICS {
        assert_eq!(c.delta(m), Some(0.0));
    }
}

#[test]
fn prompted_beats_zero_shot() {
    let tmp = tempfile::tempdir().unwrap();
    let zs = config(spam_synth::ZS_CONFIG, tmp.path());
    let pws = config(spam_synth::PWS_CONFIG, tmp.path());
    let c = compare(&zs, &pws, &RunOptions::default()).unwrap();
    let table = c.render();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("zero_shot") && lines[2].starts_with("prompted_ws"));
    assert!(lines[3].starts_with("delta"));
    let m = read_metrics(pws.run_dir().unwrap()).unwrap();
    assert_eq!(m.end_model.runs.len(), 6);
    assert!(c.delta("accuracy").unwrap() > 0.0);
}
