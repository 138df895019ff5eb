use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kamscar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kamscar")).args(args).output().expect("binary runs")
}

fn defaults() -> String {
    let out = kamscar(&["print-defaults"]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

/// Writes the default config with `output_dir` under `dir`, then appends `extra`.
fn write_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let out = dir.join("out");
    let text = defaults().replace("output_dir = \"out\"", &format!("output_dir = {:?}", out.display().to_string()));
    let path = dir.join("config.toml");
    std::fs::write(&path, edit(text)).unwrap();
    path
}

fn run(cmd: &str, config: &Path) -> Output {
    kamscar(&[cmd, config.to_str().unwrap()])
}

#[test]
fn print_defaults_round_trips() {
    let text = defaults();
    assert!(text.contains("schema_version = 1"));
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), |t| t);
    let out = run("check-hypotheses", &path);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["pass"], true);
    assert!(tmp.path().join("out/check-hypotheses/manifest.json").exists());
}

#[test]
fn bad_configs_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), |t| t.replace("gamma = 4.0", "gamma = 3.0"));
    assert_eq!(run("quasispectrum", &path).status.code(), Some(4));
    let path = write_config(tmp.path(), |t| t + "\nunknown_key = 1\n");
    assert_eq!(run("quasispectrum", &path).status.code(), Some(4));
    assert_eq!(run("quasispectrum", &tmp.path().join("missing.toml")).status.code(), Some(4));
}

#[test]
fn hypothesis_violations_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), |t| t.replace("coupling = 1.0", "coupling = 0.0"));
    let out = run("check-hypotheses", &path);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hypothesis violated"));

    let square = "\n[domain.rect]\nlo = [0.1, 0.1]\nhi = [1.0, 1.0]\n";
    let path = write_config(tmp.path(), |t| t + square);
    assert_eq!(run("scar-report", &path).status.code(), Some(2));
}

#[test]
fn coarse_t_grid_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), |t| t.replace("n_t = 64", "n_t = 4"));
    let out = run("flow-stats", &path);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("raise n_t"));
}

#[test]
fn huge_kappa_warns_but_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), |t| t.replace("kappa = 0.2", "kappa = 50.0").replace("boundary_margin = 0.2", "boundary_margin = 0.0"));
    let out = run("quasispectrum", &path);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning: E_kappa"));
}

#[test]
fn eigensolve_runs_and_reuses_its_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), |t| t);
    let first = run("eigensolve", &path);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let csv = std::fs::read(tmp.path().join("out/eigensolve/eigen.csv")).unwrap();
    let second = run("eigensolve", &path);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(std::fs::read(tmp.path().join("out/eigensolve/eigen.csv")).unwrap(), csv);
    assert_eq!(std::fs::read_dir(tmp.path().join("out/cache")).unwrap().count(), 1);
}
