use kamscar::diophantine::{
    index_set_mh, monte_carlo_measure, nonresonant_action_set, weyl_density_report, ActionLattice, DiophantineParams,
};
use kamscar::hamiltonian::builtin_flat_torus;

const KAPPA: f64 = 0.2;

#[test]
fn lattice_counts_track_the_domain_area() {
    let ham = builtin_flat_torus(1.0);
    for h in [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0] {
        let lattice = ActionLattice::new(h, [0.0, 0.0], ham.domain()).unwrap();
        let expected = ham.domain().area() / (h * h);
        let rel = (lattice.len() as f64 - expected).abs() / expected;
        // Boundary cells contribute O(perimeter / h).
        assert!(rel < 4.0 * h / ham.domain().area().sqrt(), "h = {h}: {} vs {expected}", lattice.len());
        assert!(lattice.points.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn grid_measure_agrees_with_monte_carlo() {
    let ham = builtin_flat_torus(1.0);
    let p = DiophantineParams::new(KAPPA);
    let set = nonresonant_action_set(&ham, 0.01, &p, 1.0 / 256.0).unwrap();
    let mc = monte_carlo_measure(&set, &ham, 200_000, 5);
    assert!(set.measure() > 0.1);
    assert!((set.measure() - mc.value).abs() < 0.02 * mc.value + 4.0 * mc.std_error);
}

#[test]
fn weyl_counts_approach_the_tube_volume() {
    let ham = builtin_flat_torus(1.0);
    let p = DiophantineParams::new(KAPPA);
    let h_list = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    let set = nonresonant_action_set(&ham, 0.01, &p, 1.0 / 256.0).unwrap();
    let report = weyl_density_report(&set, ham.domain(), [0.0, 0.0], 1.0, &h_list).unwrap();
    for (row, tol) in report.rows.iter().zip([0.20, 0.12, 0.08]) {
        assert!((row.tube_ratio - 1.0).abs() < tol, "h = {}: tube ratio {}", row.h, row.tube_ratio);
    }
    let counts: Vec<usize> = report.rows.iter().map(|r| r.count).collect();
    assert!(counts.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn index_set_is_stable_under_grid_refinement() {
    let ham = builtin_flat_torus(1.0);
    let p = DiophantineParams::new(KAPPA);
    let h = 1.0 / 32.0;
    let lattice = ActionLattice::new(h, [0.0, 0.0], ham.domain()).unwrap();
    let coarse = index_set_mh(&lattice, &nonresonant_action_set(&ham, 0.01, &p, h / 4.0).unwrap(), 1.0).unwrap();
    let fine = index_set_mh(&lattice, &nonresonant_action_set(&ham, 0.01, &p, h / 8.0).unwrap(), 1.0).unwrap();
    let sym_diff = coarse.iter().filter(|m| fine.binary_search(m).is_err()).count() + fine.iter().filter(|m| coarse.binary_search(m).is_err()).count();
    assert!(!fine.is_empty());
    assert!((sym_diff as f64) <= 0.02 * fine.len() as f64, "{sym_diff} of {}", fine.len());
}

#[test]
fn larger_kappa_shrinks_the_index_set() {
    let ham = builtin_flat_torus(1.0);
    let h = 1.0 / 32.0;
    let lattice = ActionLattice::new(h, [0.0, 0.0], ham.domain()).unwrap();
    let small = index_set_mh(&lattice, &nonresonant_action_set(&ham, 0.01, &DiophantineParams::new(0.1), h / 4.0).unwrap(), 1.0).unwrap();
    let large = index_set_mh(&lattice, &nonresonant_action_set(&ham, 0.01, &DiophantineParams::new(0.3), h / 4.0).unwrap(), 1.0).unwrap();
    assert!(large.iter().all(|m| small.binary_search(m).is_ok()));
    assert!(large.len() < small.len());
}
