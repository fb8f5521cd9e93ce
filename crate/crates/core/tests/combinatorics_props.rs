use isojet::combinatorics::{
    binomial, jet_dim, jet_inequality, jet_lower_bound, minimal_jet_order, multi_indices, multi_indices_between,
    threshold_report, MultiIndex, Mode,
};
use proptest::prelude::*;

fn choose(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

proptest! {
    #[test]
    fn jet_dim_is_a_binomial(n in 1usize..10, r in 0usize..6) {
        prop_assert_eq!(jet_dim(n, r) as u128, choose((n + r) as u128, r as u128) - 1);
        prop_assert_eq!(multi_indices_between(n, 1, r).len(), jet_dim(n, r));
        prop_assert_eq!(binomial((n + r) as u64, r as u64).to_string(), choose((n + r) as u128, r as u128).to_string());
    }

    #[test]
    fn inequality_holds_from_s_min_on(n in 1usize..7, m in 1usize..4, r in 1usize..4) {
        let s = minimal_jet_order(n, m, r).unwrap().s_min;
        prop_assert!(s == 0 || !jet_inequality(n, m, r, s - 1));
        for t in s..s + 6 {
            prop_assert!(jet_inequality(n, m, r, t));
        }
    }

    #[test]
    fn s_min_brackets_the_real_bound(n in 1usize..8, m in 1usize..5, r in 1usize..4) {
        let s = minimal_jet_order(n, m, r).unwrap().s_min as f64;
        let bound = jet_lower_bound(n, m, r);
        prop_assert!(s > bound - r as f64 - 1e-9 && s <= bound.floor() + 1e-9);
        prop_assert!(threshold_report(n, m, r).unwrap().boundary_verified);
    }

    #[test]
    fn s_min_is_monotone_in_m_and_n(n in 1usize..7, m in 1usize..4) {
        let base = minimal_jet_order(n, m, 2).unwrap().s_min;
        prop_assert!(minimal_jet_order(n + 1, m, 2).unwrap().s_min >= base);
        prop_assert!(minimal_jet_order(n, m + 1, 2).unwrap().s_min >= base);
    }

    #[test]
    fn union_and_difference_are_inverse(n in 1usize..5, a in 0usize..4, b in 0usize..4, pick in 0usize..1000) {
        let all_a = multi_indices(n, a, Mode::Exact);
        let all_b = multi_indices(n, b, Mode::Exact);
        let x = &all_a[pick % all_a.len()];
        let y = &all_b[(pick / 7) % all_b.len()];
        let u = x.union(y);
        prop_assert_eq!(u.order(), a + b);
        prop_assert!(u.contains(x));
        prop_assert_eq!(u.difference(x), Some(y.clone()));
        // Vandermonde: Σ_{D ⊆ C} binom(C, D) over |D| = a equals binom(|C|, a).
        let total: u64 = u.sub_indices().iter().filter(|d| d.order() == a).map(|d| u.binomial(d)).sum();
        prop_assert_eq!(total as u128, choose((a + b) as u128, a as u128));
    }
}

#[test]
fn r_one_threshold_is_n_times_m() {
    for n in 1..=12 {
        for m in 1..=5 {
            assert_eq!(minimal_jet_order(n, m, 1).unwrap().s_min, n * m);
        }
    }
}

#[test]
fn multi_index_exponent_roundtrip() {
    for idx in multi_indices(3, 4, Mode::UpTo) {
        assert_eq!(MultiIndex::from_exponents(&idx.exponents(3)), idx);
    }
}
