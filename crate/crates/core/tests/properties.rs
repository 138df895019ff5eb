use kamscar::diophantine::{diophantine_check, DiophantineParams};
use kamscar::hamiltonian::builtin_flat_torus;
use kamscar::normal_form::{k0_eval, NormalForm, Order};
use kamscar::quantize::{build_operator, overlap, BasisTruncation, SparseVector, TruncationMode};
use kamscar::scarring::{symbol_expectation, torus_mass};
use kamscar::spectral_flow::TSubset;
use num_complex::Complex64;
use proptest::prelude::*;

const RANGE: [f64; 2] = [0.0, 1.0];

fn intervals() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0..1.0f64, 0.0..0.3f64).prop_map(|(a, w)| [a, a + w]), 0..8)
}

fn sparse(dim: usize) -> impl Strategy<Value = SparseVector> {
    prop::collection::btree_map(0..dim, (-1.0..1.0f64, -1.0..1.0f64), 1..12).prop_map(move |m| {
        SparseVector::from_map(dim, m.into_iter().map(|(i, (re, im))| (i, Complex64::new(re, im))).collect())
    })
}

/// Folds the indices of `u` into `0..dim`.
fn fit(u: SparseVector, dim: usize) -> SparseVector {
    let mut map = std::collections::BTreeMap::new();
    for (i, z) in u.entries {
        *map.entry(i % dim).or_insert(Complex64::new(0.0, 0.0)) += z;
    }
    SparseVector::from_map(dim, map)
}

fn small_basis() -> BasisTruncation {
    BasisTruncation::new(&builtin_flat_torus(1.0), 0.1, [0.0, 0.0], TruncationMode::Ball { radius: 8.0 }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tsubset_inclusion_exclusion(a in intervals(), b in intervals()) {
        let (a, b) = (TSubset::from_intervals(RANGE, a), TSubset::from_intervals(RANGE, b));
        let lhs = a.union(&b).measure() + a.intersection(&b).measure();
        prop_assert!((lhs - a.measure() - b.measure()).abs() < 1e-12);
        prop_assert!((a.difference(&b).measure() + a.intersection(&b).measure() - a.measure()).abs() < 1e-12);
        prop_assert!((a.measure() + a.complement().measure() - 1.0).abs() < 1e-12);
        prop_assert!(a.intersection(&b).measure() <= a.measure().min(b.measure()) + 1e-12);
    }

    #[test]
    fn tsubset_membership_agrees_with_algebra(a in intervals(), b in intervals(), t in 0.0..1.0f64) {
        let (a, b) = (TSubset::from_intervals(RANGE, a), TSubset::from_intervals(RANGE, b));
        prop_assert_eq!(a.union(&b).contains(t), a.contains(t) || b.contains(t));
        let on_edge = a.intervals().iter().chain(b.intervals()).any(|iv| iv[0] == t || iv[1] == t);
        if !on_edge {
            prop_assert_eq!(a.intersection(&b).contains(t), a.contains(t) && b.contains(t));
            prop_assert_eq!(a.difference(&b).contains(t), a.contains(t) && !b.contains(t));
        }
    }

    #[test]
    fn torus_mass_is_monotone_in_delta(u in sparse(289), i1 in 0.1..1.0f64, i2 in 0.1..1.0f64, d in 0.0..0.5f64, extra in 0.0..0.5f64) {
        let basis = small_basis();
        let u = fit(u, basis.len()).normalized();
        let small = torus_mass(&u, &basis, [i1, i2], d);
        let large = torus_mass(&u, &basis, [i1, i2], d + extra);
        prop_assert!(small <= large + 1e-15);
        prop_assert!((0.0..=1.0).contains(&small));
        prop_assert!((torus_mass(&u, &basis, [i1, i2], 10.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_obeys_cauchy_schwarz(u in sparse(64), v in sparse(64)) {
        let o = overlap(&u, &v).unwrap();
        prop_assert!(o.norm() <= u.norm() * v.norm() * (1.0 + 1e-12));
        let back = overlap(&v, &u).unwrap();
        prop_assert!((o - back.conj()).norm() < 1e-12);
    }

    #[test]
    fn expectation_ignores_global_phase(u in sparse(289), phase in 0.0..6.3f64, t in 0.0..0.5f64) {
        let basis = small_basis();
        let ham = builtin_flat_torus(1.0);
        let u = fit(u, basis.len()).normalized();
        let mut rotated = u.clone();
        for (_, z) in &mut rotated.entries {
            *z *= Complex64::from_polar(1.0, phase);
        }
        let a = symbol_expectation(&u, ham.symbol(), &basis, t).unwrap();
        let b = symbol_expectation(&rotated, ham.symbol(), &basis, t).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn operator_is_hermitian(t in -0.5..0.5f64, inv_h in 8.0..40.0f64) {
        let ham = builtin_flat_torus(1.0);
        let basis = BasisTruncation::new(&ham, 1.0 / inv_h, [0.0, 0.0], TruncationMode::energy(1.0)).unwrap();
        let mat = build_operator(&ham, &basis, t).unwrap();
        prop_assert!(mat.hermitian_defect() <= 1e-14);
    }

    #[test]
    fn diophantine_verdict_is_symmetric(w1 in -3.0..3.0f64, w2 in -3.0..3.0f64) {
        let p = DiophantineParams::new(0.05);
        let base = diophantine_check([w1, w2], &p).passed();
        prop_assert_eq!(diophantine_check([-w1, -w2], &p).passed(), base);
        prop_assert_eq!(diophantine_check([w2, w1], &p).passed(), base);
        prop_assert_eq!(diophantine_check([-w1, w2], &p).passed(), base);
    }

    #[test]
    fn k0_at_zero_coupling_is_h0(i1 in 0.1..1.0f64, i2 in 0.1..1.0f64) {
        let ham = builtin_flat_torus(1.0);
        prop_assert_eq!(k0_eval(&ham, [i1, i2], 0.0), ham.h0([i1, i2]));
    }

    #[test]
    fn quasieigenvalue_derivative_matches_difference(i in 1i64..9, j in 1i64..9, t in 0.0..0.2f64) {
        let ham = builtin_flat_torus(1.0);
        let lattice = kamscar::diophantine::ActionLattice::new(0.1, [0.0, 0.0], &kamscar::hamiltonian::flat_torus_square()).unwrap();
        for order in [Order::First, Order::Second] {
            let nf = NormalForm::with_order(&ham, order);
            let q = nf.quasieigenvalue(&lattice, [i + 1, j.min(i)], t).unwrap();
            let d = 1e-6;
            let fd = (q.mu_at(t + d) - q.mu_at(t - d)) / (2.0 * d);
            prop_assert!((fd - q.dmu_dt).abs() < 1e-8);
        }
    }
}
