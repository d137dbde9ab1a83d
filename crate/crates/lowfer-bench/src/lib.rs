//! Shared fixtures for the benchmark suite.

use lowfer::{init_params, Hyperparams, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A deterministic model of the given shape for benchmarking.
pub fn bench_model(
    n_entities: usize,
    n_relation_rows: usize,
    entity_dim: usize,
    relation_dim: usize,
    rank: usize,
) -> (ModelParams, Hyperparams) {
    let hyper = Hyperparams::bare(entity_dim, relation_dim, rank);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let params = init_params(n_entities, n_relation_rows, &hyper, &mut rng);
    (params, hyper)
}
