use std::path::Path;
use std::process::{Command, Output};

fn cellfree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args(args)
        .env_remove("CELLFREE_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &[&str] = &["--preset", "desk", "--drops", "1", "--trials", "32"];

fn small_config(dir: &Path) -> String {
    let text = stdout(&cellfree(&["preset", "desk"]))
        .replace("num_aps = 16", "num_aps = 2")
        .replace("num_ues = 10", "num_ues = 2")
        .replace("antennas_per_ap = 4", "antennas_per_ap = 2");
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn preset_prints_the_reference_configuration() {
    let o = cellfree(&["preset", "paper-sec4"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for line in ["num_aps = 16", "num_ues = 10", "antennas_per_ap = 4", "subcarriers = 256", "taps = 6"] {
        assert!(text.contains(line), "missing {line}");
    }
}

#[test]
fn unknown_preset_is_a_usage_error() {
    assert_eq!(cellfree(&["preset", "nope"]).status.code(), Some(2));
}

#[test]
fn validate_reference_preset() {
    let o = cellfree(&["validate", "--preset", "paper-sec4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("-101.1567 dBm"));
}

#[test]
fn validate_config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let o = cellfree(&["validate", "--config", &cfg, "--trials", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("trials"));
    assert!(cellfree(&["validate", "--config", &cfg, "--seed", "42"]).status.success());
}

#[test]
fn too_few_subcarriers_cites_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let text = stdout(&cellfree(&["preset", "desk"])).replace("subcarriers = 64", "subcarriers = 4");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = cellfree(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("M >= R"), "{}", stderr(&o));
}

#[test]
fn usage_errors() {
    assert_eq!(cellfree(&["run"]).status.code(), Some(2));
    assert_eq!(cellfree(&["run", "--preset", "desk", "--config", "x.toml"]).status.code(), Some(2));
    assert_eq!(cellfree(&["run", "--preset", "desk", "--frobnicate"]).status.code(), Some(2));
    let o = cellfree(&["run", "--preset", "desk", "--scenario", "bogus"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--scenario"));
}

#[test]
fn duplicate_filter_is_a_validation_error() {
    let o = cellfree(&["validate", "--preset", "desk", "--mode", "centralized", "--mode", "centralized"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_config_file_names_the_path() {
    let o = cellfree(&["validate", "--config", "/nonexistent/cfg.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/cfg.toml"));
}

#[test]
fn filtered_run_writes_only_requested_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("out");
    let o = cellfree(&[
        "run", "--config", &cfg, "--drops", "2", "--trials", "16", "--scenario", "pn_only", "--mode", "distributed",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("pn_only_distributed"));
    assert!(out.join("pn_only_distributed/samples.csv").exists());
    assert!(out.join("summary.json").exists());
    assert!(!out.join("perfect_distributed").exists());
    let samples = std::fs::read_to_string(out.join("pn_only_distributed/samples.csv")).unwrap();
    assert!(samples.starts_with("# generated_unix="));
}

#[test]
fn output_is_byte_stable_without_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let mut args = SMALL.to_vec();
        args.extend(["--scenario", "pn_pa", "--no-timestamp", "--threads", threads, "--out", out.to_str().unwrap()]);
        let mut full = vec!["run"];
        full.extend(args);
        let o = cellfree(&full);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let a = run("a", "1");
    let b = run("b", "3");
    for f in ["pn_pa_centralized/samples.csv", "pn_pa_distributed/cdf.csv", "summary.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn output_root_defaults_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("env_out");
    let mut args = vec!["run"];
    args.extend(SMALL);
    args.extend(["--scenario", "perfect", "--mode", "centralized"]);
    let o = Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args(&args)
        .env("CELLFREE_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("perfect_centralized/samples.csv").exists());
}

#[test]
fn oracle_suite_passes() {
    let o = cellfree(&["oracle"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
