use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_geofuzz"))
}

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/planted/geofuzz.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Fixture config with a shorter learner run, written next to the fixture data.
fn quick_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(fixture()).unwrap().replace("generations = 200", "generations = 40");
    let data = fixture().parent().unwrap().canonicalize().unwrap();
    let text = text.replacen("[data]\n", &format!("[data]\ndir = {:?}\n", data.display().to_string()), 1);
    let path = dir.join("quick.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn all_on_bundled_fixture_writes_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("run");
    let o = run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "all"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["table.tsv", "model.json", "report.json", "predictions.tsv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert!(report["summary"]["mean_accuracy"].as_f64().unwrap() > 0.5);
}

#[test]
fn same_seed_gives_identical_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let mut dirs = Vec::new();
    for w in ["1", "8"] {
        let out = tmp.path().join(format!("run{w}"));
        let o = run(&["--config", cfg.to_str().unwrap(), "--workers", w, "--seed", "4", "--out", out.to_str().unwrap(), "all"]);
        assert!(o.status.success(), "{}", stderr(&o));
        dirs.push(out);
    }
    let mut names: Vec<_> = fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for n in names {
        assert_eq!(fs::read(dirs[0].join(&n)).unwrap(), fs::read(dirs[1].join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn negative_alpha_is_reported_by_field() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(quick_config(tmp.path()))
        .unwrap()
        .replace("alpha = 1.0", "alpha = -0.5")
        .replace("fraction = 0.7", "fraction = 1.5");
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, text).unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "all"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("resolution.alpha"), "{err}");
    assert!(err.contains("split.fraction"), "{err}");

    let o = run(&["--config", bad.to_str().unwrap(), "--validate-only", "all"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], false);
    assert_eq!(v["errors"].as_array().unwrap().len(), 2);
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(quick_config(tmp.path())).unwrap().replace("[grid]\n", "[grid]\ntiles = 3\n");
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, text).unwrap();
    let o = run(&["--config", bad.to_str().unwrap(), "preprocess"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tiles"));
}

#[test]
fn classify_without_model_asks_to_train_first() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("empty");
    let o = run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "classify"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("classify") && err.contains("train first"), "{err}");
}

#[test]
fn validate_only_accepts_bundled_config() {
    let o = run(&["--config", fixture().to_str().unwrap(), "--validate-only", "all"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["valid"], true);
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn synth_then_bench_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let map = tmp.path().join("map");
    let o = run(&["synth", "--dir", map.to_str().unwrap(), "--cities", "30", "--n", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = map.join("geofuzz.toml");
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("generations = 200", "generations = 20")
        .replace("seeds = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10]", "seeds = [1]")
        .replace("repeats = 3", "repeats = 1");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("run");
    let o = run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "bench"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.starts_with("task\tworkers\tseconds\tspeedup\tmatches_serial"));
    assert_eq!(table.lines().count(), 9);
    let o = run(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("sweep_means.tsv")).unwrap().lines().count(), 6);
}
