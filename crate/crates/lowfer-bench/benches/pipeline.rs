//! Benchmarks for the hot paths: fusion, 1-N scoring, filtered ranking,
//! and the SVD used by the core-tensor bridge.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use lowfer::linalg::{svd, Matrix};
use lowfer::model::{score_batch, DropoutMasks, Mode};
use lowfer::verify::{fuse_via_pooling_matrix, fuse_via_window_matrices};
use lowfer::{evaluate, synthetic_graph, Triple};
use lowfer_bench::bench_model;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fusion_formulations(c: &mut Criterion) {
    let (params, hyper) = bench_model(500, 40, 64, 32, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let e_s: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let r: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut group = c.benchmark_group("fusion");
    group.bench_function("production", |b| {
        b.iter(|| lowfer::model::fuse_vectors(black_box(&params), &hyper, &e_s, &r))
    });
    group.bench_function("pooling-matrix", |b| {
        b.iter(|| fuse_via_pooling_matrix(black_box(&params), &hyper, &e_s, &r))
    });
    group.bench_function("window-matrices", |b| {
        b.iter(|| fuse_via_window_matrices(black_box(&params), &hyper, &e_s, &r))
    });
    group.finish();
}

fn one_to_n_scoring(c: &mut Criterion) {
    let (params, hyper) = bench_model(2000, 40, 128, 32, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let keys: Vec<(usize, usize)> = (0..128)
        .map(|_| (rng.random_range(0..2000), rng.random_range(0..40)))
        .collect();
    c.bench_function("score-batch-128x2000", |b| {
        b.iter_batched(
            || keys.clone(),
            |keys| score_batch(&params, &hyper, &keys, Mode::Eval, &DropoutMasks::none()),
            BatchSize::SmallInput,
        )
    });
}

fn filtered_ranking(c: &mut Criterion) {
    let graph = synthetic_graph(300, 6, 1500, 100, 7);
    let filter = graph.filter_index();
    let (params, hyper) = bench_model(300, 12, 32, 16, 4);
    let triples: Vec<Triple> = graph.test.clone();
    c.bench_function("filtered-evaluation-100-triples", |b| {
        b.iter(|| evaluate(black_box(&params), &hyper, &triples, &filter, 6))
    });
}

fn jacobi_svd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = Matrix::from_vec(
        64,
        64,
        (0..64 * 64).map(|_| rng.random_range(-1.0..1.0)).collect(),
    );
    c.bench_function("svd-64x64", |b| b.iter(|| svd(black_box(&m)).unwrap()));
}

criterion_group!(
    benches,
    fusion_formulations,
    one_to_n_scoring,
    filtered_ranking,
    jacobi_svd
);
criterion_main!(benches);
