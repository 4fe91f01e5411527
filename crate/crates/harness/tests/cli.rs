mod common;

use std::fs;
use std::io::BufReader;
use std::process::Command;

use common::repo_root;
use mgpg_harness::formats::{read_metrics, read_params, read_realization};

fn mgpg() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mgpg"))
}

#[test]
fn gen_scenario_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.jsonl");
    let cfg = repo_root().join("default.cfg");
    let status =
        mgpg().args(["gen-scenario", "--seed", "7", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let r = read_realization(BufReader::new(fs::File::open(&out).unwrap())).unwrap();
    assert_eq!(r.seed(), 7);
    assert_eq!(r.users().len(), 100);
    assert_eq!(r.num_clusters(), 6);
}

#[test]
fn train_writes_metrics_params_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_root().join("default.cfg");
    let status = mgpg()
        .args(["train", "--arm", "mgpg", "--episodes", "12", "--checkpoint-every", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let records = read_metrics(BufReader::new(fs::File::open(dir.path().join("metrics.jsonl")).unwrap())).unwrap();
    assert_eq!(records.len(), 12);
    let (params, progress) =
        read_params(BufReader::new(fs::File::open(dir.path().join("params.txt")).unwrap())).unwrap();
    assert!(params.as_slice().iter().all(|x| x.is_finite()));
    assert_eq!(progress.unwrap().episode, 12);
    let mut names: Vec<String> = fs::read_dir(dir.path().join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["episode-000005.txt", "episode-000010.txt"]);
}

#[test]
fn bad_config_key_exits_2_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    let text = fs::read_to_string(repo_root().join("default.cfg")).unwrap().replacen(
        "policy_step = 0.01",
        "policy_step = \"fast\"",
        1,
    );
    fs::write(&cfg, text).unwrap();
    let out = mgpg().args(["campaign", "--spec"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("arms[0].learner.policy_step"), "{stderr}");
}

#[test]
fn invalid_protocol_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("overlap.toml");
    let text = fs::read_to_string(repo_root().join("default.cfg"))
        .unwrap()
        .replace("heldout_ids = [4294967296, 4294967312]", "heldout_ids = [10, 20]");
    fs::write(&cfg, text).unwrap();
    let out = mgpg().args(["campaign", "--spec"]).arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_file_is_an_error() {
    let out = mgpg().args(["campaign", "--spec", "/nonexistent/spec.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let out = mgpg().args(["gradcheck", "--configs", "10", "--meta-configs", "5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
