use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qudit(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qudit"))
        .args(args)
        .current_dir(dir)
        .env_remove("QUDIT_DEVICE_CONFIG")
        .output()
        .expect("binary runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synthetic_rb_recovers_p() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["rb", "--backend", "synthetic-depolarizing", "--p", "0.98", "--output-dir", "out"], tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fit: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/rb_fit.json")).unwrap()).unwrap();
    let p = fit["decay"]["p"].as_f64().unwrap();
    assert!((p - 0.98).abs() < 1e-6, "p = {p}");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["backend"], "synthetic-depolarizing");
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn same_seed_gives_identical_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = shipped("default.json");
    for out in ["a", "b"] {
        let o = qudit(&["rb", "--config", cfg.to_str().unwrap(), "--output-dir", out], tmp.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = std::fs::read(tmp.path().join("a/rb.csv")).unwrap();
    let b = std::fs::read(tmp.path().join("b/rb.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn clifford_table_has_216_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["clifford-table", "--output-dir", "t"], tmp.path());
    assert!(o.status.success());
    let table: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("t/clifford_table.json")).unwrap()).unwrap();
    assert_eq!(table.len(), 216);
}

#[test]
fn hadamard_repetition_has_period_four() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["repeat", "--gate", "H3", "--backend", "ideal", "-N", "12", "--output-dir", "r"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("period 4"), "{}", stdout(&o));
    let mut reader = csv::Reader::from_path(tmp.path().join("r/repeat.csv")).unwrap();
    assert_eq!(reader.headers().unwrap(), vec!["n", "p0", "p1", "p2"]);
    assert_eq!(reader.records().count(), 13);
}

#[test]
fn rb_fit_reads_back_rb_output() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(qudit(&["rb", "--backend", "synthetic-depolarizing", "--p", "0.95", "--output-dir", "x"], tmp.path())
        .status
        .success());
    let o = qudit(&["rb-fit", "--input", "x/rb.csv", "--output-dir", "y"], tmp.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("p = 0.950000"), "{}", stdout(&o));
}

#[test]
fn ideal_qpt_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["qpt", "--gate", "H3", "--output-dir", "q"], tmp.path());
    assert!(o.status.success());
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("q/qpt_summary.json")).unwrap()).unwrap();
    assert!((s["process_fidelity"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn decompose_random_unitaries() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["decompose", "--random", "20", "--seed", "3", "--output-dir", "d"], tmp.path());
    assert!(o.status.success());
    let recs: Vec<serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("d/decompositions.json")).unwrap()).unwrap();
    assert_eq!(recs.len(), 20);
    assert!(recs.iter().all(|r| r["rotation_count"].as_u64().unwrap() <= 3));
    assert!(recs.iter().all(|r| r["reconstruction_error"].as_f64().unwrap() < 1e-10));
}

#[test]
fn validate_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = qudit(&["validate", "--config", shipped("default.json").to_str().unwrap()], tmp.path());
    assert!(ok.status.success(), "{}", stdout(&ok));

    let missing = qudit(&["validate", "--device-config", "no_such_device.json"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
    let out = stdout(&missing);
    assert_eq!(out.lines().filter(|l| l.starts_with("violation")).count(), 1);
    assert!(out.contains("no_such_device.json"));

    let negative = qudit(&["validate", "--n-rep", "-5"], tmp.path());
    assert_eq!(negative.status.code(), Some(1));
    assert!(stdout(&negative).contains("n-rep"));
}

#[test]
fn invalid_run_exits_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qudit(&["qpt", "--backend", "synthetic-depolarizing", "--output-dir", "z"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!tmp.path().join("z").exists());
}

#[test]
fn device_config_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qudit"))
        .args(["validate"])
        .current_dir(tmp.path())
        .env("QUDIT_DEVICE_CONFIG", "elsewhere.json")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("elsewhere.json"));
}
