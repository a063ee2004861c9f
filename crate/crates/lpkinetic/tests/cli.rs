use std::path::Path;
use std::process::{Command, Output};

fn lpkinetic(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lpkinetic")).current_dir(dir).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn list_names_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = lpkinetic(dir.path(), &["list"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for id in ["gf02-heat-decay", "sde-uniqueness", "picard-contraction", "schauder-ratio"] {
        assert!(text.contains(id), "{id}");
    }
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let missing = lpkinetic(dir.path(), &["run"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("`experiment`"));

    let unknown = lpkinetic(dir.path(), &["run", "--experiment", "nb3-scaling", "--bogus", "1"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(stderr(&unknown).contains("`bogus`"));

    let bad_value = lpkinetic(dir.path(), &["run", "--experiment", "nb3-scaling", "--samples", "many"]);
    assert_eq!(bad_value.status.code(), Some(2));
    assert!(stderr(&bad_value).contains("`samples`"));

    let profile = lpkinetic(dir.path(), &["suite", "medium"]);
    assert_eq!(profile.status.code(), Some(2));
}

#[test]
fn run_writes_a_report_and_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.txt"), "experiment = nb3-scaling\nprofile = fast\nsamples = 20\n").unwrap();
    let first = lpkinetic(dir.path(), &["run", "--config", "cfg.txt", "--out", "a"]);
    assert_eq!(first.status.code(), Some(0), "{}", stderr(&first));
    let second = lpkinetic(dir.path(), &["run", "--config", "cfg.txt", "--out", "b"]);
    assert_eq!(second.status.code(), Some(0));
    let report = |d: &str| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(d).join("report.json")).unwrap()).unwrap()
    };
    let (a, b) = (report("a"), report("b"));
    assert_eq!(a["passed"], true);
    assert_eq!(a["config"]["samples"], "20");
    assert_eq!(a["checks"], b["checks"]);
    assert_eq!(a["metrics"], b["metrics"]);
}
