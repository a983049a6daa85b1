use std::path::Path;
use std::process::{Command, Output};

use hnode_anc::report::PipelineReport;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hnode-anc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn gen_small(dir: &Path) {
    let out = run(&[
        "gen-synth",
        "--out",
        dir.to_str().unwrap(),
        "--fixture",
        "redundant",
        "--samples",
        "240",
        "--hidden-dim",
        "32",
        "--planted",
        "16",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_synth_then_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let res = tmp.path().join("res");
    gen_small(&data);
    for name in ["activations.hnd", "activations_mean_pool.hnd", "manifest.json"] {
        assert!(data.join(name).exists(), "{name}");
    }
    let out = run(&[
        "pipeline",
        "--input",
        data.join("activations.hnd").to_str().unwrap(),
        "--mean-pool",
        data.join("activations_mean_pool.hnd").to_str().unwrap(),
        "--nodes",
        "10",
        "--alpha-atk",
        "0.1",
        "--out",
        res.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["report.json", "report.txt", "trace.csv", "nodes_defender.json", "nodes_attacker.json", "sweep.json"] {
        assert!(res.join(name).exists(), "{name}");
    }
    let report = PipelineReport::from_json(&std::fs::read_to_string(res.join("report.json")).unwrap()).unwrap();
    report.verify().unwrap();
    assert_eq!(report.config.nodes, 10);
    assert!(report.probe.mean_pool_best_auc.is_some());
    let trace = std::fs::read_to_string(res.join("trace.csv")).unwrap();
    assert!(trace.starts_with("pass,robustness"));
}

#[test]
fn stage_subcommands_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);
    let input = data.join("activations.hnd");
    for (cmd, file) in [
        ("sweep", "sweep.json"),
        ("identify", "nodes_defender.json"),
        ("attack", "attack.json"),
        ("defend", "defense.json"),
    ] {
        let res = tmp.path().join(cmd);
        let out = run(&[
            cmd,
            "--input",
            input.to_str().unwrap(),
            "--nodes",
            "10",
            "--alpha-atk",
            "0.1",
            "--variant",
            "dual",
            "--out",
            res.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(res.join(file).exists(), "{cmd}");
    }
}

#[test]
fn missing_input_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.hnd");
    let out = run(&["sweep", "--input", missing.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.hnd"));
}

#[test]
fn malformed_input_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let junk = tmp.path().join("junk.hnd");
    std::fs::write(&junk, b"not a dump at all").unwrap();
    let out = run(&["sweep", "--input", junk.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("junk.hnd"));
}

#[test]
fn bad_flags_fail_before_reading_input() {
    let tmp = tempfile::tempdir().unwrap();
    let res = tmp.path().join("res");
    let out = run(&["pipeline", "--input", "/does/not/exist.hnd", "--nodes", "0", "--out", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--nodes"));
    assert!(!res.exists());

    let out = run(&["pipeline", "--out", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
