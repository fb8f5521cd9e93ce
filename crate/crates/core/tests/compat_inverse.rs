//! Compatibility operators of the worked maps and their membership in the
//! class admitting a differential right inverse.

use isojet::compat::{compatibility_pdo, dependence_coeffs, CoefficientSource};
use isojet::inverse::{bundle_membership, solve_patch, verify_left_inverse};
use isojet::jet::{builtin_map, MapFamily};
use isojet::pdo::random_uts;
use isojet::poly::Poly;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..n).map(|_| rng.gen_range(-0.9..0.9)).collect()).collect()
}

#[test]
fn torus_operator_has_constant_coefficients_and_no_right_inverse() {
    let f = builtin_map(&MapFamily::Torus { n: 2 }).unwrap();
    let pts = points(2, 25, 1);
    let pdo = compatibility_pdo(&dependence_coeffs(&f, 1, &pts, 1e-10).unwrap()).unwrap();
    assert_eq!(pdo.source, CoefficientSource::SnappedConstant);
    assert!(pdo.operator.coeffs().all(|(_, c)| c.as_constant().is_some()));
    for s in 0..=3 {
        let cert = bundle_membership(&pdo.operator, &pts[..4], s, 1e-10).unwrap();
        assert!(!cert.member, "s = {s}");
    }
}

#[test]
fn projected_operators_are_not_members() {
    for drop in 2..5 {
        let f = builtin_map(&MapFamily::Projected { n: 2, drop: vec![drop] }).unwrap();
        let pts = points(2, 12, drop as u64);
        let pdo = compatibility_pdo(&dependence_coeffs(&f, 1, &pts, 1e-10).unwrap()).unwrap();
        assert_eq!(pdo.source, CoefficientSource::Exact);
        let cert = bundle_membership(&pdo.operator, &pts[..3], 2, 1e-10).unwrap();
        assert!(!cert.member);
        assert!(cert.witness.is_some());
    }
}

#[test]
fn random_uts_operators_are_members_at_s_min() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..5 {
        let l = random_uts(&mut rng, 2, 1, 1, 1);
        let pts = points(2, 30, rng.gen());
        assert!(bundle_membership(&l, &pts, 2, 1e-10).unwrap().member);
        assert!(!bundle_membership(&l, &pts, 0, 1e-10).unwrap().member);
        let cand = solve_patch(&l, &pts, 2, 1e-10).unwrap();
        let g = vec![Poly::random(&mut rng, 2, 3, 0.8)];
        assert!(verify_left_inverse(&cand, &l, &g).unwrap() < 1e-8);
    }
}

#[test]
fn larger_instances_solve_below_the_count_threshold() {
    // For n = 3 the counts are sufficient, not sharp: s = 2 < s_min = 3 already solves.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let l = random_uts(&mut rng, 3, 1, 1, 1);
    let pts = points(3, 10, 6);
    assert!(bundle_membership(&l, &pts, 2, 1e-10).unwrap().member);
}
