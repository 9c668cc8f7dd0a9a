use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_tiltlab");

fn tiltlab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ensemble(n: usize, a: f64, u: &[i32], v: &[i32]) -> String {
    format!(
        r#"{{"n": {n}, "interval": [0, 6], "tilt_normalizer": 6, "a": {a}, "b": 2,
            "u": {u:?}, "v": {v:?}, "floor": {{"const": 0}}, "model": "lazy-srw"}}"#
    )
}

fn write_spec(dir: &Path, body: &str) -> String {
    let path = dir.join("spec.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn balance_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = tiltlab(&["verify", "--suite", "balance", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS balance"));
    let names: Vec<String> = fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.iter().any(|n| n.ends_with(".json")));
    assert!(!names.iter().any(|n| n.ends_with(".svg")));
}

#[test]
fn unknown_suite_is_invalid() {
    let out = tiltlab(&["verify", "--suite", "xyz", "--seed", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown suite"));
}

#[test]
fn unknown_field_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &format!(r#"{{"ensemble": {}, "run": {{"sweep": 3}}}}"#, ensemble(1, 1.0, &[0], &[0])));
    let out = tiltlab(&["sample", "--config", &spec, "--seed", "1"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("run") && err.contains("sweep"), "{err}");
}

#[test]
fn monotone_with_violating_pair_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    // the "upper" configuration sits below the "lower" one
    let body = format!(
        r#"{{"ensemble": {}, "compare": {}}}"#,
        ensemble(1, 1.0, &[0], &[0]),
        ensemble(1, 1.0, &[2], &[2])
    );
    let spec = write_spec(dir.path(), &body);
    let out = tiltlab(&["verify", "--suite", "monotone", "--config", &spec, "--seed", "3", "--sweeps", "10"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn monotone_with_ordered_pair_passes() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!(
        r#"{{"ensemble": {}, "compare": {}}}"#,
        ensemble(2, 0.5, &[3, 1], &[2, 1]),
        ensemble(2, 1.0, &[2, 0], &[2, 0])
    );
    let spec = write_spec(dir.path(), &body);
    let out = tiltlab(&["verify", "--suite", "monotone", "--config", &spec, "--seed", "3", "--sweeps", "2000", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn invalid_tilt_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &format!(r#"{{"ensemble": {}}}"#, ensemble(1, 0.0, &[0], &[0])));
    let out = tiltlab(&["oracle", "--config", &spec]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sample_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &format!(r#"{{"ensemble": {}, "run": {{"thin": 5}}}}"#, ensemble(2, 1.0, &[2, 0], &[1, 0])));
    let mut payloads = Vec::new();
    for k in 0..2 {
        let out_dir = dir.path().join(format!("run{k}"));
        let out = tiltlab(&[
            "sample", "--config", &spec, "--seed", "11", "--sweeps", "200", "--chains", "2",
            "--format", "csv,json,svg", "--out", out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out_dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        payloads.push(files);
    }
    assert_eq!(payloads[0], payloads[1]);
    let names: Vec<&str> = payloads[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names.len(), 3);
    assert!(names.iter().all(|n| n.contains("-s11")));
    let csv = String::from_utf8_lossy(&payloads[0].iter().find(|(n, _)| n.ends_with(".csv")).unwrap().1).into_owned();
    assert!(csv.starts_with("chain,sweep,curve,site,height\n"));
}

#[test]
fn oracle_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &format!(r#"{{"ensemble": {}}}"#, ensemble(2, 1.0, &[2, 0], &[1, 0])));
    let out = tiltlab(&["oracle", "--config", &spec, "--format", "json", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("oracle-"))
        .unwrap();
    let v: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    for key in ["Z", "log_Z", "truncation_bound", "marginals"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn report_rerenders_saved_output() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = tiltlab(&["verify", "--suite", "tilt", "--format", "json", "--out", first.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let json = fs::read_dir(&first).unwrap().next().unwrap().unwrap().path();
    let second = dir.path().join("second");
    let out = tiltlab(&["report", "--input", json.to_str().unwrap(), "--format", "csv", "--out", second.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(fs::read_dir(&second).unwrap().next().unwrap().unwrap().path()).unwrap();
    assert!(csv.starts_with("metric,value\npassed,1\n"));
}

#[test]
fn missing_seed_for_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), &format!(r#"{{"ensemble": {}}}"#, ensemble(1, 1.0, &[0], &[0])));
    let out = tiltlab(&["sample", "--config", &spec]);
    assert_eq!(code(&out), 2);
}
