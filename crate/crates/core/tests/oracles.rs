#[path = "common/oracles.rs"]
mod oracles;

fn expect(name: &str, r: oracles::Check) {
    if let Err(e) = r {
        panic!("{name}: {e}");
    }
}

#[test]
fn noise_variance_matches_quadrature() {
    expect("noise variance", oracles::noise_variance());
}

#[test]
fn scalar_term_vectors_match_quadrature() {
    expect("terms", oracles::term_vectors());
}

#[test]
fn binary_features_match_enumeration() {
    expect("features", oracles::binary_features());
}

#[test]
fn rank_indicators_match_enumeration() {
    expect("indicators", oracles::rank_indicator());
}

#[test]
fn spike_slab_loading_matches_quadrature() {
    expect("spike-slab", oracles::spike_slab_loading());
}

#[test]
fn jacobian_matches_numerical_derivative() {
    expect("jacobian", oracles::jacobian());
}

#[test]
fn prior_only_mh_matches_forward_draws() {
    expect("mh", oracles::prior_only_mh());
}

#[test]
fn upgma_matches_hand_computed_trees() {
    expect("upgma", oracles::upgma_fixtures());
}

#[test]
fn newick_round_trip_is_lossless() {
    expect("newick", oracles::newick_round_trip());
}
