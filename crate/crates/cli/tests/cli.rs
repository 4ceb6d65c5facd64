use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rkr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rkr")).args(args).env_remove("RKR_OUT").output().expect("spawn rkr")
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.json");
    fs::write(
        &path,
        r#"{
  "network": {"kind": "preset", "preset": "tiny-mlp", "input": [32], "feature_dim": 8},
  "rank": 2,
  "train": [{"epochs": 10}],
  "data": {"kind": "synthetic", "tasks": 3, "classes_per_task": 2, "input_shape": [32],
           "separation": 6.0, "train_per_class": 40, "test_per_class": 20, "seed": 3},
  "seed": 3
}"#,
    )
    .unwrap();
    path
}

#[test]
fn audit_prints_layer_numerators() {
    let o = rkr(&["audit", "--preset", "tiny-mlp", "--input", "8", "--hidden", "16", "--feature-dim", "4", "--rank", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("64") && text.contains("44"), "{text}");
}

#[test]
fn gradcheck_passes() {
    let o = rkr(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("max relative error"));
}

#[test]
fn run_is_exact_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = rkr(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = fs::read_to_string(a.join("metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",0.0") || r.ends_with(",0")), "{csv}");
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert!(rkr(&["report", "--out", a.to_str().unwrap()]).status.success());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"network": {"kind": "preset"}, "bogus": 1}"#).unwrap();
    let o = rkr(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(rkr(&["run", "--config", "/nonexistent.json"]).status.code(), Some(2));
    assert_eq!(rkr(&["run"]).status.code(), Some(2));
}

#[test]
fn tampered_checkpoint_is_an_invariant_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    assert!(rkr(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    fs::write(out.join("base/checksum.txt"), "0000\n").unwrap();
    assert_eq!(rkr(&["report", "--out", out.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn generated_files_reproduce_the_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let data = dir.path().join("data");
    let o = rkr(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&cfg).unwrap();
    let start = text.find(r#""data""#).unwrap();
    let end = text[start..].find('}').unwrap() + start + 1;
    let files = format!("{}\"data\": {{\"kind\": \"files\", \"dir\": \"data\"}}{}", &text[..start], &text[end..]);
    let files_cfg = dir.path().join("files.json");
    fs::write(&files_cfg, files).unwrap();
    let (a, b) = (dir.path().join("synthetic"), dir.path().join("files"));
    assert!(rkr(&["run", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()]).status.success());
    let o = rkr(&["run", "--config", files_cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn out_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_rkr"))
        .args(["run", "--config", cfg.to_str().unwrap()])
        .env("RKR_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("metrics.csv").exists());
}

#[test]
fn gzsl_run_writes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gzsl.json");
    fs::write(
        &cfg,
        r#"{
  "train": {"epochs": 5, "classifier_epochs": 5, "rank": 4},
  "data": {"kind": "synthetic", "tasks": 2, "seen_per_task": 5, "unseen_per_task": 2,
           "feature_dim": 16, "embedding_dim": 8, "train_per_class": 10, "test_per_class": 5, "seed": 2},
  "seed": 2
}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = rkr(&["gzsl-run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("gzsl_metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert!(stdout(&o).contains("separate models"));
}

#[test]
fn shipped_configs_parse() {
    for name in ["continual.json", "baseline.json", "cnn.json", "files.json"] {
        let o = rkr(&["audit", "--config", configs().join(name).to_str().unwrap()]);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
    }
}
