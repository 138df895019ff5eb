use kamscar::diophantine::ActionLattice;
use kamscar::hamiltonian::{
    angle_average_quadrature, builtin_flat_torus, flat_torus_domain, flat_torus_square, ActionRect, Domain, FourierPolyHamiltonian,
    FourierPolySymbol, HalfPlane,
};
use kamscar::normal_form::{
    bilipschitz_constants, eta_map, homological_residual, homological_solve, k0_eval, singular_values_2x2, NormalForm, Order,
    DEFAULT_DIVISOR_TOL,
};
use kamscar::poly::{Monomial, Poly};
use kamscar::Error;

fn away_from_diagonal() -> Domain {
    flat_torus_domain().with_cut(HalfPlane {
        normal: [-1.0, 1.0],
        offset: -0.05,
        strict: false,
    })
}

#[test]
fn qbar_matches_the_t_derivative_of_the_angle_average() {
    let ham = builtin_flat_torus(1.0);
    let d = 0.1;
    for action in [[0.3, 0.2], [0.5, 0.4], [0.9, 0.15], [0.77, 0.61]] {
        let avg = |t: f64| angle_average_quadrature(|th| ham.eval_symbol(th, action, t).unwrap(), 16);
        let oracle = (avg(d) - avg(-d)) / (2.0 * d);
        let got = ham.angle_average_dt(action);
        assert!((got - oracle).abs() <= 1e-8 * oracle.abs().max(1e-3), "{action:?}: {got} vs {oracle}");
    }
}

#[test]
fn k0_table_values() {
    let ham = builtin_flat_torus(1.0);
    assert!((k0_eval(&ham, [0.3, 0.4], 0.1) - 0.256).abs() < 1e-12);
    let eta = eta_map(&ham, [0.5, 0.3], 0.2);
    assert!((eta[0] - (0.34 + 0.2 * 0.075)).abs() < 1e-12);
    assert!((eta[1] - 0.075).abs() < 1e-12);
}

#[test]
fn second_order_agrees_with_first_order_to_order_t_squared() {
    let ham = builtin_flat_torus(1.0);
    let h = 1.0 / 32.0;
    let lattice = ActionLattice::new(h, [0.0, 0.0], ham.domain()).unwrap();
    let first = NormalForm::with_order(&ham, Order::First);
    let second = NormalForm::with_order(&ham, Order::Second);
    for &m in lattice.points.iter().step_by(37) {
        let a = first.quasieigenvalue(&lattice, m, 0.0).unwrap();
        let b = second.quasieigenvalue(&lattice, m, 0.0).unwrap();
        assert_eq!(a.coeffs[0], b.coeffs[0]);
        assert_eq!(a.coeffs[1], b.coeffs[1]);
        assert_eq!(a.coeffs[2], 0.0);
        let t = 0.01;
        let diff = (first.quasieigenvalue(&lattice, m, t).unwrap().mu - second.quasieigenvalue(&lattice, m, t).unwrap().mu).abs();
        assert!(diff <= t * t * b.coeffs[2].abs() + 1e-15);
    }
}

#[test]
fn bilipschitz_constants_are_stable_under_more_samples() {
    let ham = builtin_flat_torus(1.0);
    let dom = away_from_diagonal();
    let a = bilipschitz_constants(&ham, &dom, 0.1, 20_000, 3).unwrap();
    let b = bilipschitz_constants(&ham, &dom, 0.1, 40_000, 4).unwrap();
    assert!((a.g1 / b.g1 - 1.0).abs() < 0.1);
    assert!((a.g2 / b.g2 - 1.0).abs() < 0.1);
    assert!(a.g1 > 0.0 && a.g1 <= a.g2);
}

#[test]
fn bilipschitz_bounds_hold_on_lattice_pairs() {
    let ham = builtin_flat_torus(1.0);
    let dom = away_from_diagonal();
    let t = 0.1;
    let c = bilipschitz_constants(&ham, &dom, t, 20_000, 9).unwrap();
    let lattice = ActionLattice::new(1.0 / 16.0, [0.0, 0.0], &dom).unwrap();
    let pts: Vec<[f64; 2]> = lattice.points.iter().map(|&m| lattice.action(m)).collect();
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let di = (a[0] - b[0]).hypot(a[1] - b[1]);
            let (ea, eb) = (eta_map(&ham, *a, t), eta_map(&ham, *b, t));
            let de = (ea[0] - eb[0]).hypot(ea[1] - eb[1]);
            assert!(c.g1 * de <= di * (1.0 + 1e-9) && di <= c.g2 * de * (1.0 + 1e-9), "{a:?} {b:?}");
        }
    }
}

#[test]
fn bilipschitz_constants_of_an_affine_map_are_its_singular_values() {
    // H = 2I₁ + I₂ + t(I₁ − I₂): η is the linear map [[2, 1], [1, −1]] at t = 0.
    let c0 = Poly::from_monomials(&[
        Monomial(1, 0, 0, 2.0, 0.0),
        Monomial(0, 1, 0, 1.0, 0.0),
        Monomial(1, 0, 1, 1.0, 0.0),
        Monomial(0, 1, 1, -1.0, 0.0),
    ]);
    let rect = ActionRect::new([0.0, 0.0], [1.0, 1.0]).unwrap();
    let ham = FourierPolyHamiltonian::new(FourierPolySymbol::new("affine").with_term([0, 0], c0), Domain::from_rect(rect)).unwrap();
    let c = bilipschitz_constants(&ham, ham.domain(), 0.0, 5_000, 1).unwrap();
    let (smin, smax) = singular_values_2x2(2.0, 1.0, 1.0, -1.0);
    assert!((c.g1 - 1.0 / smax).abs() < 1e-12);
    assert!((c.g2 - 1.0 / smin).abs() < 1e-12);
}

#[test]
fn eta_folds_the_full_square_onto_itself() {
    let ham = builtin_flat_torus(1.0).with_domain(flat_torus_square()).unwrap();
    match bilipschitz_constants(&ham, ham.domain(), 0.1, 5_000, 1) {
        Err(Error::SingularEta { a, b }) => {
            assert!((a[0] - b[1]).abs() < 1e-12 && (a[1] - b[0]).abs() < 1e-12, "{a:?} {b:?}");
        }
        other => panic!("expected SingularEta, got {other:?}"),
    }
}

#[test]
fn homological_equation_holds_across_the_domain() {
    let ham = builtin_flat_torus(1.0);
    for action in [[0.3, 0.2], [0.8, 0.5], [0.95, 0.11], [0.6, 0.59]] {
        let sol = homological_solve(&ham, action, 10.0, DEFAULT_DIVISOR_TOL).unwrap();
        assert!(homological_residual(&ham, &sol, 10.0, 64) < 1e-8);
        let s = sol.coeffs[&[2, 0]];
        let q = ham.oscillatory_terms()[&[2, 0]].eval(action, 0.0);
        let omega = ham.frequency_map(action, 0.0);
        assert!((s * num_complex::Complex64::new(0.0, 2.0 * omega[0]) - q).norm() < 1e-15);
    }
}
