use std::f64::consts::PI;

use kamscar::diophantine::{index_set_mh, nonresonant_action_set, ActionLattice, DiophantineParams};
use kamscar::hamiltonian::{builtin_flat_torus, ActionRect};
use kamscar::normal_form::NormalForm;
use kamscar::quantize::{build_operator, eigensolve_window, BasisTruncation, SolverOptions, TruncationMode};
use kamscar::scarring::{coverage_report, r_ratio, window_counts, ScarCell, ScarConfig, ScarReport};

#[test]
fn band_volume_of_the_flat_torus_annulus() {
    // t = 0: {0.25 ≤ |I|² ≤ 0.5} has area π/4, so the phase-space volume is π³.
    let ham = builtin_flat_torus(1.0);
    let set = nonresonant_action_set(&ham, 0.0, &DiophantineParams::new(0.2), 1.0 / 64.0).unwrap();
    let bbox = ActionRect::centered(1.0);
    let r = r_ratio(&ham, 0.0, [0.25, 0.5], &bbox, &set, 400_000, 17).unwrap();
    assert!((r.band_volume - PI.powi(3)).abs() < 4.0 * r.band_volume_std_error, "{} ± {}", r.band_volume, r.band_volume_std_error);
    assert!((r.r * r.nonresonant_volume - r.band_volume).abs() < 1e-12 * r.band_volume);

    let empty = r_ratio(&ham, 0.0, [3.0, 4.0], &bbox, &set, 10_000, 17).unwrap();
    assert_eq!(empty.r, 0.0);
}

#[test]
fn r_scales_inversely_with_the_nonresonant_measure() {
    let ham = builtin_flat_torus(1.0);
    let bbox = ActionRect::centered(1.0);
    let a = nonresonant_action_set(&ham, 0.01, &DiophantineParams::new(0.1), 1.0 / 64.0).unwrap();
    let b = nonresonant_action_set(&ham, 0.01, &DiophantineParams::new(0.3), 1.0 / 64.0).unwrap();
    let ra = r_ratio(&ham, 0.01, [0.25, 0.5], &bbox, &a, 50_000, 2).unwrap();
    let rb = r_ratio(&ham, 0.01, [0.25, 0.5], &bbox, &b, 50_000, 2).unwrap();
    assert_eq!(ra.band_volume, rb.band_volume);
    assert!((ra.r / rb.r - b.measure() / a.measure()).abs() < 1e-12);
}

#[test]
fn window_counts_equal_circle_multiplicities_at_t_zero() {
    let ham = builtin_flat_torus(1.0);
    let h = 0.1;
    let basis = BasisTruncation::new(&ham, h, [0.0, 0.0], TruncationMode::energy(1.0)).unwrap();
    let mat = build_operator(&ham, &basis, 0.0).unwrap();
    let eigs = eigensolve_window(&mat, 0.0, 1.0, &SolverOptions::default()).unwrap();
    let lattice = ActionLattice::new(h, [0.0, 0.0], ham.domain()).unwrap();
    let quasi: Vec<_> = NormalForm::new(&ham)
        .quasispectrum(&lattice, 0.0)
        .unwrap()
        .into_iter()
        .filter(|q| q.mu < 0.99)
        .collect();
    let counts = window_counts(&eigs, &quasi, 1e-6).unwrap();
    for (q, n) in quasi.iter().zip(&counts) {
        let r2 = q.m[0] * q.m[0] + q.m[1] * q.m[1];
        let multiplicity = (-10i64..=10).flat_map(|a| (-10i64..=10).map(move |b| a * a + b * b)).filter(|&s| s == r2).count();
        assert_eq!(*n, multiplicity, "m = {:?}", q.m);
    }
    let (q, n) = quasi.iter().zip(&counts).find(|(q, _)| q.m == [8, 1]).unwrap();
    assert!(*n >= 2, "{:?}", q.m);
}

#[test]
fn selection_and_reports_at_h_1_32() {
    let ham = builtin_flat_torus(1.0);
    let h = 1.0 / 32.0;
    let cfg = ScarConfig {
        mc_samples: 200_000,
        ..ScarConfig::default()
    };
    let cell = ScarCell::prepare(&ham, h, 0.01, [0.0, 0.0], &DiophantineParams::new(0.2), &cfg, None).unwrap();
    let r = r_ratio(&ham, 0.01, cfg.band, &cell.bbox(), &cell.set, cfg.mc_samples, 5).unwrap();
    let rep = cell.report(&ham, &cfg, r).unwrap();
    assert!(rep.selection_proportion >= 0.5, "{}", rep.selection_proportion);
    assert!(rep.all_pass());

    // λ barely above 1 keeps few or no indices; the report stays well formed.
    let tight = ScarConfig { lambda: 1.01, ..cfg.clone() };
    let rep = cell.report(&ham, &tight, r).unwrap();
    let back: ScarReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
    assert!(rep.selection_proportion <= 1.0);
    assert!(rep.audited().all(|row| row.max_overlap.is_some() && row.torus_mass.is_some()));
}

#[test]
fn coverage_extremes() {
    let ham = builtin_flat_torus(1.0);
    let h = 1.0 / 32.0;
    let set = nonresonant_action_set(&ham, 0.01, &DiophantineParams::new(0.2), h / 4.0).unwrap();
    let lattice = ActionLattice::new(h, [0.0, 0.0], ham.domain()).unwrap();
    let all: Vec<[f64; 2]> = index_set_mh(&lattice, &set, 1.0).unwrap().into_iter().map(|m| lattice.action(m)).collect();
    let rep = coverage_report(&set, &[(h, all), (h, Vec::new())], 1.0, 4.0);
    assert_eq!(rep.rows[0].fraction, 1.0);
    assert!(rep.rows[0].pass);
    assert_eq!(rep.rows[1].fraction, 0.0);
    assert!((rep.rows[0].bound - (1.0 - 1.0 / (4.0 * PI))).abs() < 1e-15);
}
