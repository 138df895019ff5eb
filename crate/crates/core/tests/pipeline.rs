use std::path::Path;

use kamscar::config::{ExperimentConfig, HamiltonianSource};
use kamscar::hamiltonian::flat_torus_square;
use kamscar::pipeline::{self, RunManifest};
use kamscar::Error;

fn config(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.scar.mc_samples = 100_000;
    cfg
}

fn digests(dir: &Path) -> Vec<(String, String)> {
    RunManifest::load(dir).unwrap().files.into_iter().map(|f| (f.path, f.sha256)).collect()
}

fn csv_rows(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn hypotheses_pass_on_the_default_domain() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline::cmd_check_hypotheses(&config(tmp.path())).unwrap();
    assert_eq!(out.summary["pass"], true);
    assert_eq!(csv_rows(&out.dir.join("hypotheses.csv")), out.summary["nodes"].as_u64().unwrap() as usize);
    out.manifest.verify(&out.dir).unwrap();
}

#[test]
fn hypothesis_violations_stop_every_analysis() {
    let tmp = tempfile::tempdir().unwrap();
    let mut square = config(tmp.path());
    square.domain = Some(flat_torus_square());
    let mut uncoupled = config(tmp.path());
    uncoupled.hamiltonian = HamiltonianSource::Builtin {
        name: "flat-torus".into(),
        coupling: 0.0,
    };
    for cfg in [&square, &uncoupled] {
        for cmd in [pipeline::cmd_check_hypotheses, pipeline::cmd_quasispectrum, pipeline::cmd_flow_stats, pipeline::cmd_scar_report] {
            let err = cmd(cfg).unwrap_err();
            assert!(matches!(err, Error::HypothesisViolation { .. }), "{err}");
            assert_eq!(err.exit_code(), 2);
        }
    }
}

#[test]
fn quasispectrum_tables_match_the_index_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline::cmd_quasispectrum(&config(tmp.path())).unwrap();
    for cell in out.summary["cells"].as_array().unwrap() {
        let file = cell["quasi_file"].as_str().unwrap();
        let mh = file.replace("quasi_", "mh_");
        assert_eq!(csv_rows(&out.dir.join(file)), cell["mh_count"].as_u64().unwrap() as usize);
        assert_eq!(csv_rows(&out.dir.join(mh)), cell["mh_count"].as_u64().unwrap() as usize);
    }
    assert!(out.warnings().is_empty());
    let table = std::fs::read_to_string(out.dir.join("quasi_h0_t0.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("4,3,") && (l.split(',').nth(6).unwrap().parse::<f64>().unwrap() - 0.25).abs() < 1e-15));
}

#[test]
fn huge_kappa_gives_empty_tables_and_warnings() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.diophantine.kappa = 50.0;
    cfg.diophantine.boundary_margin = 0.0;
    let out = pipeline::cmd_quasispectrum(&cfg).unwrap();
    assert!(out.warnings().iter().any(|w| w.contains("E_kappa")));
    for cell in out.summary["cells"].as_array().unwrap() {
        assert_eq!(cell["mh_count"], 0);
    }
}

#[test]
fn flow_stats_flags_an_oversized_radius_and_a_short_h_list() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.flow.h_list = vec![0.1];
    cfg.flow.c1 = Some(2.0);
    let out = pipeline::cmd_flow_stats(&cfg).unwrap();
    assert!(out.summary["violations"].as_u64().unwrap() > 0);
    assert!(csv_rows(&out.dir.join("violations.csv")) > 0);
    assert!(out.summary["epsilon_fit"]["error"].as_str().unwrap().contains("need at least"));
    assert!(out.warnings().iter().any(|w| w.contains("epsilon fit")));

    cfg.flow.n_t = 4;
    assert_eq!(pipeline::cmd_flow_stats(&cfg).unwrap_err().exit_code(), 3);
}

#[test]
fn scar_report_is_reproducible_from_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path());
    let cold = pipeline::cmd_scar_report(&cfg).unwrap();
    let cold_digests = digests(&cold.dir);
    assert!(tmp.path().join("cache").read_dir().unwrap().count() >= 2);
    let warm = pipeline::cmd_scar_report(&cfg).unwrap();
    assert_eq!(digests(&warm.dir), cold_digests);
    warm.manifest.verify(&warm.dir).unwrap();
    for cell in warm.summary["cells"].as_array().unwrap() {
        assert_eq!(cell["status"], "ok");
    }
}

#[test]
fn contaminated_cells_are_aborted_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path());
    cfg.scar.e_cut = Some(0.5);
    let out = pipeline::cmd_scar_report(&cfg).unwrap();
    let cells = out.summary["cells"].as_array().unwrap();
    assert!(cells.iter().any(|c| c["status"] == "aborted"));
    assert!(out.warnings().iter().any(|w| w.contains("aborted")));
    assert!(out.dir.join("coverage.json").exists());
}

#[test]
fn eigensolve_writes_a_readable_container() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pipeline::cmd_eigensolve(&config(tmp.path())).unwrap();
    let (header, res) = kamscar::quantize::read_eigen_container(&out.dir.join("eigen.ksew")).unwrap();
    assert_eq!(res.len() as u64, out.summary["eigenvalues"].as_u64().unwrap());
    assert_eq!(header.h, 1.0 / 32.0);
    assert_eq!(csv_rows(&out.dir.join("eigen.csv")), res.len());
}
