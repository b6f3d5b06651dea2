//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shale_core::model::synth::{self, SyntheticConfig};
use shale_core::{GTerm, Instance};

/// `k` random terms of a supply-side equation.
pub fn beta_terms(k: usize, seed: u64) -> Vec<GTerm> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| GTerm::for_beta(rng.gen_range(0.01..1.0), rng.gen_range(0.1..5.0), rng.gen_range(0.0..3.0)))
        .collect()
}

/// `k` random demand-side terms, each capped at a random fraction of its
/// weight, with a target inside the reachable range.
pub fn alpha_terms(k: usize, seed: u64) -> (Vec<GTerm>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let terms: Vec<GTerm> = (0..k)
        .map(|_| {
            let s = rng.gen_range(1.0..100.0);
            GTerm::for_alpha(rng.gen_range(0.01..1.0), rng.gen_range(0.1..5.0), rng.gen_range(0.0..3.0), s)
                .with_cap(s * rng.gen_range(0.1..1.0))
        })
        .collect();
    let reach: f64 = terms.iter().map(|t| t.cap).sum();
    (terms, 0.5 * reach)
}

/// `(weight, residual)` pairs for the greedy equation, with a reachable target.
pub fn hwm_weights(k: usize, seed: u64) -> (Vec<(f64, f64)>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<(f64, f64)> = (0..k)
        .map(|_| {
            let s = rng.gen_range(1.0..100.0);
            (s, s * rng.gen_range(0.0..1.0))
        })
        .collect();
    let reach: f64 = weights.iter().map(|w| w.1).sum();
    (weights, 0.5 * reach)
}

/// Synthetic instance with about `contracts * samples` arcs.
pub fn instance(contracts: usize, samples: usize, asc: f64) -> Instance {
    synth::generate(&SyntheticConfig::new(contracts, samples, asc, 1)).expect("synthetic instance")
}
