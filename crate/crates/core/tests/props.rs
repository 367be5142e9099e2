mod common;

const CASES: u32 = 500;

#[test]
fn monad_laws() {
    common::prop_monad_laws(CASES).unwrap();
}

#[test]
fn substitution_lemma() {
    common::prop_substitution(CASES).unwrap();
}

#[test]
fn wp_agrees_with_enumeration() {
    common::prop_hoare_consistency(CASES).unwrap();
}

#[test]
fn distance_is_monotone_in_eps() {
    common::prop_delta_monotone(CASES).unwrap();
}

#[test]
fn wp_is_monotone_in_alpha() {
    common::prop_ghost_monotone(CASES).unwrap();
}

#[test]
fn greedy_distance_matches_subset_enumeration() {
    assert!(common::greedy_vs_subset(1000, 7) <= 1e-12);
}
