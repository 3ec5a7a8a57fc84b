use std::path::Path;
use std::process::Command;

use tiny_lm::harness::synth::{generate, SynthConfig};
use tiny_lm::harness::{
    presets, prepare, run_committee_experiment, run_gap_experiment, CommitteeSpec, ExperimentSpec, GapRow,
};

fn small_data(dir: &Path) {
    let out = dir.join("synthetic");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = SynthConfig { paragraphs: 300, train_per_label: 20, test_per_label: 10, ..Default::default() };
    generate(&cfg, 5).write(&out).unwrap();
}

/// The synthetic gap preset cut down to a few epochs.
fn quick_spec(dir: &Path, ws: usize) -> ExperimentSpec {
    let mut spec = presets::synthetic_gap(ws);
    spec.pretrain.epochs = 2;
    spec.finetune.epochs = 3;
    spec.resolve_paths(dir);
    spec
}

#[test]
fn gap_is_the_difference_of_arm_means() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let mut spec = quick_spec(dir.path(), 100);
    spec.repetitions = 2;
    let data = prepare(&spec).unwrap();
    let r = run_gap_experiment(&spec, &data).unwrap();
    assert_eq!(r.gap, r.pretrained.mean - r.scratch.mean);
    assert_eq!(r.runs.len(), 2);
    assert!(r.pretrained.sd.is_some() && r.scratch.sd.is_some());
    assert_eq!(r.overlap.ws, 100);
    let row = GapRow::from_report(&r);
    assert_eq!(row.scratch_acc(), r.pretrained.mean - r.gap);
}

#[test]
fn equal_arms_give_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let spec = quick_spec(dir.path(), 0);
    let data = prepare(&spec).unwrap();
    let r = run_gap_experiment(&spec, &data).unwrap();
    assert_eq!(r.pretrained.accuracies, r.scratch.accuracies);
    assert_eq!(r.gap, 0.0);
    assert_eq!(r.overlap.tm, r.overlap.tc);
}

#[test]
fn committee_of_one_matches_the_gap_arm() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let mut spec = quick_spec(dir.path(), 100);
    let data = prepare(&spec).unwrap();
    let gap = run_gap_experiment(&spec, &data).unwrap();
    spec.committee = Some(CommitteeSpec { members: vec![spec.model.clone()], pretrained: true, reference: None });
    let c = run_committee_experiment(&spec, &data).unwrap();
    assert_eq!(c.committee.accuracies, gap.pretrained.accuracies);
    assert_eq!(c.members[0].accuracy.accuracies, gap.pretrained.accuracies);
    assert_eq!(c.runs[0].finetune_seeds[0], gap.runs[0].finetune_seed);
}

fn tlm(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tlm")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn cli_exit_codes() {
    assert_eq!(tlm(&["presets"]).0, 0);
    assert_eq!(tlm(&["latency", "--blocks", "3", "--conv-layers", "2"]).0, 0);
    assert_eq!(tlm(&["no-such-command"]).0, 1);
    assert_eq!(tlm(&["gap", "--preset", "no-such-preset"]).0, 1);
    let empty = tempfile::tempdir().unwrap();
    let root = empty.path().to_str().unwrap();
    let (code, err) = tlm(&["--data-root", root, "overlap", "--preset", "synthetic-random-200"]);
    assert_eq!(code, 2, "{err}");

    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let root = dir.path().to_str().unwrap();
    let (code, err) = tlm(&["--data-root", root, "overlap", "--preset", "synthetic-random-200"]);
    assert_eq!(code, 0, "{err}");
    // A huge step size drives the loss to infinity.
    let (code, err) = tlm(&[
        "--data-root",
        root,
        "finetune",
        "--preset",
        "synthetic-random-0",
        "--finetune-epochs",
        "2",
        "--lr",
        "1e30",
        "--out",
        dir.path().join("m.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code, 3, "{err}");
}
