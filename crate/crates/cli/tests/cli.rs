use std::path::Path;
use std::process::{Command, Output};

fn msim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msim"))
        .args(args)
        .current_dir(cwd)
        .env("MSIM_THREADS", "1")
        .output()
        .expect("spawn msim")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn generate_train_roll_out_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&msim(
        &[
            "gen-data", "--kind", "solid", "--count", "3", "--seed", "1", "--out", "data",
        ],
        d,
    ));
    assert!(d.join("data/index.json").exists());

    let train = [
        "train",
        "--data",
        "data",
        "--steps",
        "2",
        "--layers",
        "2",
        "--width",
        "8",
        "--batch",
        "2",
        "--ckpt",
        "model.ckpt",
        "--log",
        "log.jsonl",
    ];
    ok(&msim(&train, d));
    let log = std::fs::read_to_string(d.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    std::fs::write(
        d.join("scene.json"),
        r#"{"mesh": "data/mesh_00000.msh", "state": "data/state_000000.bin", "dt": 0.016666666666666666}"#,
    )
    .unwrap();
    ok(&msim(
        &[
            "rollout",
            "--model",
            "model.ckpt",
            "--scene",
            "scene.json",
            "--steps",
            "4",
            "--traj",
            "gnn.mstj",
            "--diag",
            "gnn.csv",
        ],
        d,
    ));
    let csv = std::fs::read_to_string(d.join("gnn.csv")).unwrap();
    assert!(csv.starts_with("step,time,px,py,pz,Lx,Ly,Lz,kinetic,elastic"));
    assert_eq!(csv.lines().count(), 6);

    ok(&msim(
        &["diag", "--traj", "gnn.mstj", "--out", "again.csv"],
        d,
    ));
    assert_eq!(std::fs::read_to_string(d.join("again.csv")).unwrap(), csv);

    ok(&msim(
        &[
            "rollout",
            "--model",
            "reference",
            "--scene",
            "scene.json",
            "--steps",
            "2",
            "--traj",
            "ref.mstj",
        ],
        d,
    ));
    // a MomentumGNN checkpoint is not a baseline
    let out = msim(
        &[
            "rollout",
            "--model",
            "baseline:model.ckpt",
            "--scene",
            "scene.json",
            "--steps",
            "1",
        ],
        d,
    );
    assert!(!out.status.success());
}

#[test]
fn verify_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = msim(&["verify", "basis-rank", "projection"], dir.path());
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
    assert!(!msim(&["verify"], dir.path()).status.success());
}

#[test]
fn missing_inputs_fail() {
    let dir = tempfile::tempdir().unwrap();
    let out = msim(
        &[
            "rollout",
            "--model",
            "reference",
            "--scene",
            "nope.json",
            "--steps",
            "1",
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
