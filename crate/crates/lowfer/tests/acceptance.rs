//! Acceptance suite: one test per acceptance criterion, each printing a
//! single `criterion NN <name>: PASS/FAIL` line with the measured margin.
//!
//! Criterion 7 checks parameter counts against twelve published 0.1M-rounded
//! reference values; eleven agree with the count formula, one does not
//! (see the assertion message), so that test fails by design rather than
//! bending the formula. Criterion 12 is a multi-hour full-dataset run and is
//! ignored by default; point `LOWFER_WN18RR_DIR` at a dataset directory and
//! run with `--ignored` to execute it.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lowfer::eval::filtered_rank;
use lowfer::linalg::{Matrix, Tensor3};
use lowfer::model::{
    count_parameters, finite_difference_check, fuse_vectors, init_params, score_triple,
    score_vectors, Batch, BatchNorm, DropoutMasks, Hyperparams, ModelParams,
};
use lowfer::subsume::{
    complex_oracle, conv_oracle, distmult_oracle, encode_complex, encode_conv, encode_distmult,
    encode_rescal, encode_simple, encode_tucker, exact_separation_model, rescal_oracle,
    simple_oracle, tucker_score, GroundTruth, HeadTail, ReIm, SeparationMode,
};
use lowfer::verify::{fuse_via_pooling_matrix, fuse_via_window_matrices};
use lowfer::{
    evaluate, perturb_and_evaluate, save_checkpoint, synthetic_graph, train, load_checkpoint,
    train::TrainConfig, KnowledgeGraph, Triple,
};

fn one_hot(dim: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[idx] = 1.0;
    v
}

fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Prints the per-criterion verdict line before panicking on failure, so the
/// line is present either way.
fn verdict(number: u32, name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("criterion {number:02} {name}: {status} ({detail})");
    assert!(passed, "criterion {number:02} {name}: FAIL ({detail})");
}

#[test]
fn criterion_01_formulation_equivalence() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let instances = 1000;
    for _ in 0..instances {
        let d_e = rng.random_range(1..=16);
        let d_r = rng.random_range(1..=16);
        let k = rng.random_range(1..=8);
        let hyper = Hyperparams::bare(d_e, d_r, k);
        let params = ModelParams {
            entity: Matrix::identity(d_e),
            relation: Matrix::identity(d_r),
            factor_u: random_matrix(&mut rng, d_e, k * d_e),
            factor_v: random_matrix(&mut rng, d_r, k * d_e),
            bn_entity: BatchNorm::identity(d_e),
            bn_pooled: BatchNorm::identity(d_e),
        };
        let e_s = random_vec(&mut rng, d_e);
        let r = random_vec(&mut rng, d_r);
        let e_o = random_vec(&mut rng, d_e);
        let naive = fuse_vectors(&params, &hyper, &e_s, &r);
        let compact = fuse_via_pooling_matrix(&params, &hyper, &e_s, &r);
        let outer = fuse_via_window_matrices(&params, &hyper, &e_s, &r);
        for m in 0..d_e {
            worst = worst
                .max((naive[m] - compact[m]).abs())
                .max((naive[m] - outer[m]).abs())
                .max((compact[m] - outer[m]).abs());
        }
        let dot = |z: &[f64]| -> f64 { z.iter().zip(&e_o).map(|(&a, &b)| a * b).sum() };
        let scores = [dot(&naive), dot(&compact), dot(&outer)];
        worst = worst
            .max((scores[0] - scores[1]).abs())
            .max((scores[0] - scores[2]).abs())
            .max((scores[1] - scores[2]).abs());
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        1,
        "formulation-equivalence",
        worst <= 1e-10 && elapsed < 10.0,
        &format!("max discrepancy {worst:.3e} over {instances} instances, tolerance 1e-10, {elapsed:.1}s < 10s"),
    );
}

#[test]
fn criterion_02_gradient_correctness() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    let mut worst_label = String::new();
    let mut check = |label: &str, hyper: Hyperparams, l2: f64, rng: &mut ChaCha8Rng| {
        let n_entities = 7;
        let n_relation_rows = 6;
        let params = init_params(n_entities, n_relation_rows, &hyper, rng);
        let batch_size = 3;
        let keys: Vec<(usize, usize)> = (0..batch_size)
            .map(|_| {
                (
                    rng.random_range(0..n_entities),
                    rng.random_range(0..n_relation_rows),
                )
            })
            .collect();
        let mut targets = Matrix::zeros(batch_size, n_entities);
        for r in 0..batch_size {
            for c in 0..n_entities {
                if rng.random::<f64>() < 0.3 {
                    targets.set(r, c, 1.0);
                }
            }
        }
        let batch = Batch { keys, targets };
        let masks = DropoutMasks::sample(rng, batch_size, &hyper);
        let report = finite_difference_check(&params, &hyper, &batch, l2, &masks, 1e-6);
        if report.max_rel_err > worst {
            worst = report.max_rel_err;
            worst_label = format!("{label}/{}", report.worst_tensor);
        }
    };

    let mut plain = Hyperparams::bare(5, 4, 2);
    plain.label_smoothing = 0.1;
    check("plain", plain, 0.0, &mut rng);

    let mut powered = Hyperparams::bare(5, 4, 2);
    powered.dropout_entity = 0.2;
    powered.dropout_fusion = 0.3;
    powered.dropout_output = 0.1;
    powered.label_smoothing = 0.1;
    powered.power_l2_normalize = true;
    powered.tanh_output = true;
    check("power-l2-path", powered, 0.01, &mut rng);

    let mut tanh_mid = Hyperparams::bare(6, 3, 3);
    tanh_mid.dropout_fusion = 0.25;
    tanh_mid.tanh_output = true;
    check("tanh-mid", tanh_mid, 1e-3, &mut rng);

    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        2,
        "gradient-correctness",
        worst <= 1e-4 && elapsed < 60.0,
        &format!("max relative error {worst:.3e} ({worst_label}), tolerance 1e-4, {elapsed:.1}s < 60s"),
    );
}

#[test]
fn criterion_03_exact_separation() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    let mut grids = 0usize;
    let mut check = |truth: &GroundTruth| {
        for mode in [SeparationMode::ByEntityCount, SeparationMode::ByRelationCount] {
            let (params, hyper) = exact_separation_model(truth, mode);
            for s in 0..truth.n_entities {
                for r in 0..truth.n_relations {
                    for o in 0..truth.n_entities {
                        let score = score_vectors(
                            &params,
                            &hyper,
                            &one_hot(truth.n_entities, s),
                            &one_hot(truth.n_relations, r),
                            &one_hot(truth.n_entities, o),
                        );
                        worst = worst.max((score - truth.label(s, r, o)).abs());
                    }
                }
            }
            grids += 1;
        }
    };
    check(&GroundTruth::example());
    for _ in 0..20 {
        let n_e = rng.random_range(2..=6);
        let n_r = rng.random_range(1..=5);
        let total = n_e * n_r * n_e;
        let count = rng.random_range(1..=total.min(3 * n_e));
        let mut triples = BTreeSet::new();
        while triples.len() < count {
            triples.insert((
                rng.random_range(0..n_e),
                rng.random_range(0..n_r),
                rng.random_range(0..n_e),
            ));
        }
        check(&GroundTruth::new(n_e, n_r, triples));
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        3,
        "exact-separation",
        worst == 0.0 && elapsed < 10.0,
        &format!("max deviation from 0/1 labels {worst:.1e} over {grids} exhaustive grids (21 truths, both window modes), {elapsed:.1}s < 10s"),
    );
}

#[test]
fn criterion_04_core_tensor_encoding() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst: f64 = 0.0;
    let mut window_ok = true;
    for _ in 0..20 {
        let d_e = rng.random_range(1..=8);
        let d_r = rng.random_range(1..=8);
        let mut core = Tensor3::zeros(d_e, d_r, d_e);
        for i in 0..d_e {
            for j in 0..d_r {
                for m in 0..d_e {
                    core.set(i, j, m, rng.random_range(-1.0..1.0));
                }
            }
        }
        let (params, hyper) = encode_tucker(&core).expect("encoding succeeds");
        window_ok &= hyper.rank <= d_e.min(d_r);
        for i in 0..d_e {
            for j in 0..d_r {
                for m in 0..d_e {
                    let score = score_vectors(
                        &params,
                        &hyper,
                        &one_hot(d_e, i),
                        &one_hot(d_r, j),
                        &one_hot(d_e, m),
                    );
                    worst = worst.max((score - tucker_score(&core, &one_hot(d_e, i), &one_hot(d_r, j), &one_hot(d_e, m))).abs());
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        4,
        "core-tensor-encoding",
        worst <= 1e-8 && window_ok && elapsed < 30.0,
        &format!("max discrepancy {worst:.3e} over 20 random cores (tolerance 1e-8), window bound {}, {elapsed:.1}s < 30s",
            if window_ok { "held" } else { "violated" }),
    );
}

#[test]
fn criterion_05_bilinear_family_encodings() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let d = 4;
    let n_r = 3;
    let rounds = 1000;

    // Full bilinear matrices.
    let mut full: f64 = 0.0;
    let matrices: Vec<Matrix> = (0..n_r).map(|_| random_matrix(&mut rng, d, d)).collect();
    let (params, hyper) = encode_rescal(&matrices);
    for (l, w) in matrices.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                let enc = score_vectors(&params, &hyper, &one_hot(d, i), &one_hot(n_r, l), &one_hot(d, j));
                full = full.max((enc - w.get(i, j)).abs());
            }
        }
    }
    for _ in 0..rounds {
        let l = rng.random_range(0..n_r);
        let e_s = random_vec(&mut rng, d);
        let e_o = random_vec(&mut rng, d);
        let enc = score_vectors(&params, &hyper, &e_s, &one_hot(n_r, l), &e_o);
        full = full.max((enc - rescal_oracle(&matrices[l], &e_s, &e_o)).abs());
    }

    // Diagonal bilinear vectors.
    let mut diagonal: f64 = 0.0;
    let rows: Vec<Vec<f64>> = (0..n_r).map(|_| random_vec(&mut rng, d)).collect();
    let (params, hyper) = encode_distmult(&rows);
    for (l, w) in rows.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                let enc = score_vectors(&params, &hyper, &one_hot(d, i), &one_hot(n_r, l), &one_hot(d, j));
                let orc = distmult_oracle(w, &one_hot(d, i), &one_hot(d, j));
                diagonal = diagonal.max((enc - orc).abs());
            }
        }
    }
    for _ in 0..rounds {
        let l = rng.random_range(0..n_r);
        let e_s = random_vec(&mut rng, d);
        let e_o = random_vec(&mut rng, d);
        let enc = score_vectors(&params, &hyper, &e_s, &one_hot(n_r, l), &e_o);
        diagonal = diagonal.max((enc - distmult_oracle(&rows[l], &e_s, &e_o)).abs());
    }

    // Averaged head/tail pairs.
    let mut averaged: f64 = 0.0;
    let rel: Vec<Vec<f64>> = (0..n_r).map(|_| random_vec(&mut rng, d)).collect();
    let inv: Vec<Vec<f64>> = (0..n_r).map(|_| random_vec(&mut rng, d)).collect();
    let (params, hyper) = encode_simple(&rel, &inv);
    for l in 0..n_r {
        for i in 0..2 * d {
            for j in 0..2 * d {
                let s = HeadTail {
                    head: one_hot(2 * d, i)[..d].to_vec(),
                    tail: one_hot(2 * d, i)[d..].to_vec(),
                };
                let o = HeadTail {
                    head: one_hot(2 * d, j)[..d].to_vec(),
                    tail: one_hot(2 * d, j)[d..].to_vec(),
                };
                let enc = score_vectors(&params, &hyper, &s.stacked(), &one_hot(n_r, l), &o.stacked());
                averaged = averaged.max((enc - simple_oracle(&rel[l], &inv[l], &s, &o)).abs());
            }
        }
    }
    for _ in 0..rounds {
        let l = rng.random_range(0..n_r);
        let s = HeadTail { head: random_vec(&mut rng, d), tail: random_vec(&mut rng, d) };
        let o = HeadTail { head: random_vec(&mut rng, d), tail: random_vec(&mut rng, d) };
        let enc = score_vectors(&params, &hyper, &s.stacked(), &one_hot(n_r, l), &o.stacked());
        averaged = averaged.max((enc - simple_oracle(&rel[l], &inv[l], &s, &o)).abs());
    }

    // Complex diagonal vectors.
    let mut complex: f64 = 0.0;
    let crel: Vec<ReIm> = (0..n_r)
        .map(|_| ReIm { re: random_vec(&mut rng, d), im: random_vec(&mut rng, d) })
        .collect();
    let (params, hyper) = encode_complex(&crel);
    for (l, r) in crel.iter().enumerate() {
        for i in 0..2 * d {
            for j in 0..2 * d {
                let sv = one_hot(2 * d, i);
                let ov = one_hot(2 * d, j);
                let s = ReIm { re: sv[..d].to_vec(), im: sv[d..].to_vec() };
                let o = ReIm { re: ov[..d].to_vec(), im: ov[d..].to_vec() };
                let enc = score_vectors(&params, &hyper, &sv, &one_hot(n_r, l), &ov);
                complex = complex.max((enc - complex_oracle(r, &s, &o)).abs());
            }
        }
    }
    for _ in 0..rounds {
        let l = rng.random_range(0..n_r);
        let s = ReIm { re: random_vec(&mut rng, d), im: random_vec(&mut rng, d) };
        let o = ReIm { re: random_vec(&mut rng, d), im: random_vec(&mut rng, d) };
        let enc = score_vectors(&params, &hyper, &s.stacked(), &one_hot(n_r, l), &o.stacked());
        complex = complex.max((enc - complex_oracle(&crel[l], &s, &o)).abs());
    }

    let worst = full.max(diagonal).max(averaged).max(complex);
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        5,
        "bilinear-family-encodings",
        worst <= 1e-8 && elapsed < 30.0,
        &format!(
            "max discrepancies full {full:.2e} / diagonal {diagonal:.2e} / averaged-pair {averaged:.2e} / complex {complex:.2e} (tolerance 1e-8, grids + {rounds} random inputs each), {elapsed:.1}s < 30s"
        ),
    );
}

#[test]
fn criterion_06_convolution_encoding() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst: f64 = 0.0;
    let mut combos = 0usize;
    for d_e in 3..=8usize {
        for n_f in 1..=3usize {
            for l_f in 1..=3usize.min(d_e) {
                let d_r = rng.random_range(1..=4);
                let conv_len = d_e - l_f + 1;
                let filter_gen = random_matrix(&mut rng, n_f * l_f, d_r);
                let mix = random_matrix(&mut rng, n_f * conv_len, d_e);
                let (params, hyper) = encode_conv(&filter_gen, &mix, n_f, l_f, d_e);
                combos += 1;
                for _ in 0..20 {
                    let e_s = random_vec(&mut rng, d_e);
                    let e_o = random_vec(&mut rng, d_e);
                    let r = random_vec(&mut rng, d_r);
                    let enc = score_vectors(&params, &hyper, &e_s, &r, &e_o);
                    let orc = conv_oracle(&filter_gen, &mix, n_f, l_f, &e_s, &r, &e_o);
                    worst = worst.max((enc - orc).abs());
                }
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        6,
        "convolution-encoding",
        worst <= 1e-8 && elapsed < 10.0,
        &format!("max discrepancy {worst:.3e} over {combos} filter geometries (tolerance 1e-8), {elapsed:.1}s < 10s"),
    );
}

#[test]
fn criterion_07_parameter_counts() {
    // Dataset statistics and per-dataset embedding widths, with the
    // published 0.1M-rounded counts for window sizes 1, 10, and the
    // dataset's selected k*.
    struct Row {
        dataset: &'static str,
        n_entities: u64,
        n_relations: u64,
        entity_dim: u64,
        relation_dim: u64,
        k_star: u64,
        published: [f64; 3],
    }
    let table = [
        Row { dataset: "WN18", n_entities: 40_943, n_relations: 18, entity_dim: 200, relation_dim: 30, k_star: 10, published: [8.2, 8.6, 8.6] },
        Row { dataset: "FB15k-237", n_entities: 14_541, n_relations: 237, entity_dim: 200, relation_dim: 200, k_star: 100, published: [3.0, 3.8, 11.3] },
        Row { dataset: "WN18RR", n_entities: 40_943, n_relations: 11, entity_dim: 200, relation_dim: 30, k_star: 30, published: [8.2, 8.6, 9.6] },
        Row { dataset: "FB15k", n_entities: 14_951, n_relations: 1_345, entity_dim: 300, relation_dim: 30, k_star: 50, published: [4.6, 5.5, 9.5] },
    ];
    // Exact integers frozen from the count formula, for the same cells.
    let frozen: [[u64; 3]; 4] = [
        [8_235_140, 8_649_140, 8_649_140],
        [3_035_600, 3_755_600, 10_955_600],
        [8_234_930, 8_648_930, 9_568_930],
        [4_624_650, 5_515_650, 9_475_650],
    ];
    let mut mismatches = Vec::new();
    for (row, frozen_row) in table.iter().zip(&frozen) {
        for (col, &k) in [1, 10, row.k_star].iter().enumerate() {
            let exact = count_parameters(
                row.n_entities,
                row.n_relations,
                row.entity_dim,
                row.relation_dim,
                k,
                false,
            );
            assert_eq!(
                exact, frozen_row[col],
                "{} k={k}: formula drifted from its frozen value",
                row.dataset
            );
            let rounded = (exact as f64 / 100_000.0).round() / 10.0;
            let agreement = if rounded == row.published[col] { "matches" } else { "DIFFERS FROM" };
            println!(
                "  {} k={k}: exact {exact} -> {rounded:.1}M {agreement} published {:.1}M",
                row.dataset, row.published[col]
            );
            if rounded != row.published[col] {
                mismatches.push(format!(
                    "{} k={k}: formula gives {exact} = {rounded:.1}M, published table prints {:.1}M",
                    row.dataset, row.published[col]
                ));
            }
        }
    }
    verdict(
        7,
        "parameter-counts",
        mismatches.is_empty(),
        &if mismatches.is_empty() {
            "all 12 published cells reproduced at 0.1M rounding".to_string()
        } else {
            format!(
                "{}/12 published cells reproduced; known discrepancy in the published table itself: {}",
                12 - mismatches.len(),
                mismatches.join("; ")
            )
        },
    );
}

/// The pinned overfit configuration shared by criteria 8, 9, and 11.
fn overfit_setup() -> (KnowledgeGraph, TrainConfig) {
    let kg = synthetic_graph(50, 5, 200, 0, 42);
    let hyper = Hyperparams::bare(20, 20, 5);
    let mut config = TrainConfig::new(hyper);
    config.learning_rate = 0.01;
    config.epochs = 200;
    config.batch_size = 64;
    config.seed = 7;
    config.eval_every = 0;
    (kg, config)
}

#[test]
fn criterion_08_overfit_sanity() {
    let started = Instant::now();
    let (kg, config) = overfit_setup();
    let out = train(&kg, &config).expect("training succeeds");
    let filter = kg.filter_index();
    let report = evaluate(&out.params, &config.hyper, &kg.train, &filter, kg.n_relations())
        .expect("evaluation succeeds");
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        8,
        "overfit-sanity",
        report.mrr >= 0.95 && elapsed < 120.0,
        &format!(
            "train filtered MRR {:.4} >= 0.95 after {} epochs on 200 triples, {elapsed:.1}s < 120s",
            report.mrr, config.epochs
        ),
    );
}

#[test]
fn criterion_09_determinism() {
    let dir = tempfile::tempdir().expect("tempdir");
    let (kg, config) = overfit_setup();
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let out = train(&kg, &config).expect("training succeeds");
        let path = dir.path().join(format!("run{run}.ckpt"));
        save_checkpoint(&path, &out.params, &config.hyper).expect("checkpoint saves");
        let bytes = std::fs::read(&path).expect("checkpoint readable");
        let filter = kg.filter_index();
        let report = evaluate(&out.params, &config.hyper, &kg.train, &filter, kg.n_relations())
            .expect("evaluation succeeds");
        let json = serde_json::to_string(&report).expect("report serializes");
        artifacts.push((bytes, json));
    }
    let checkpoints_match = artifacts[0].0 == artifacts[1].0;
    let reports_match = artifacts[0].1 == artifacts[1].1;
    verdict(
        9,
        "determinism",
        checkpoints_match && reports_match,
        &format!(
            "two identical (config, seed) runs: checkpoint bytes {} ({} bytes), metric JSON {}",
            if checkpoints_match { "identical" } else { "differ" },
            artifacts[0].0.len(),
            if reports_match { "identical" } else { "differ" }
        ),
    );
}

#[test]
fn criterion_10_evaluator_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let kg = synthetic_graph(20, 4, 80, 15, 17);
    let filter = kg.filter_index();
    let hyper = Hyperparams::bare(12, 8, 3);
    let params = init_params(kg.n_entities(), 2 * kg.n_relations(), &hyper, &mut rng);
    let n_r = kg.n_relations();

    // Sort-based oracle: score every candidate independently, drop other
    // known positives, sort descending, rank by binary search.
    let oracle_rank = |triple: Triple| -> usize {
        let bucket = filter.bucket(triple.subject, triple.relation);
        let target_score = score_triple(&params, &hyper, triple);
        let mut scores: Vec<f64> = (0..kg.n_entities())
            .filter(|&c| c == triple.object || bucket.binary_search(&c).is_err())
            .map(|c| {
                score_triple(
                    &params,
                    &hyper,
                    Triple { subject: triple.subject, relation: triple.relation, object: c },
                )
            })
            .collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        scores.partition_point(|&s| s > target_score) + 1
    };

    // 100 queries: 50 statements, each asked in both directions.
    let pool: Vec<Triple> = kg.train.iter().chain(&kg.test).copied().collect();
    let mut queries = Vec::new();
    for _ in 0..50 {
        let t = pool[rng.random_range(0..pool.len())];
        queries.push(t);
        queries.push(t.reciprocal(n_r));
    }
    let mut checked = 0usize;
    let mut agree = true;
    for &q in &queries {
        let production = filtered_rank(&params, &hyper, q, &filter).expect("rank computes");
        let oracle = oracle_rank(q);
        if production != oracle {
            agree = false;
            println!(
                "  query ({}, {}, {}): production rank {production}, oracle rank {oracle}",
                q.subject, q.relation, q.object
            );
        }
        checked += 1;
    }
    verdict(
        10,
        "evaluator-oracle-equivalence",
        agree,
        &format!("{checked} filtered ranks compared exactly against a sort-based oracle"),
    );
}

#[test]
fn criterion_11_perturbation_probe() {
    let (kg, config) = overfit_setup();
    let out = train(&kg, &config).expect("training succeeds");
    let filter = kg.filter_index();
    let variances = [0.0, 1.0, 2.0];
    let seeds = 20u64;
    let mut means = vec![0.0; variances.len()];
    for seed in 0..seeds {
        let points = perturb_and_evaluate(
            &out.params,
            &config.hyper,
            &kg.train,
            &filter,
            kg.n_relations(),
            &variances,
            seed,
        )
        .expect("perturbation succeeds");
        for (m, p) in means.iter_mut().zip(&points) {
            *m += p.mrr;
        }
    }
    for m in &mut means {
        *m /= seeds as f64;
    }
    let monotone = means.windows(2).all(|w| w[0] >= w[1]);
    verdict(
        11,
        "perturbation-probe",
        monotone,
        &format!(
            "seed-averaged MRR over noise variances {{0, 1, 2}}: {:.4} >= {:.4} >= {:.4} ({seeds} seeds)",
            means[0], means[1], means[2]
        ),
    );
}

#[test]
#[ignore = "multi-hour full-dataset run; set LOWFER_WN18RR_DIR to a directory with train.txt/valid.txt/test.txt and run with --ignored"]
fn criterion_12_extended_wn18rr() {
    let dir = std::env::var("LOWFER_WN18RR_DIR")
        .expect("LOWFER_WN18RR_DIR must point at the dataset directory");
    let kg = lowfer::load_dataset(std::path::Path::new(&dir)).expect("dataset loads");
    let mut hyper = Hyperparams::bare(200, 30, 30);
    hyper.dropout_entity = 0.2;
    hyper.dropout_fusion = 0.2;
    hyper.dropout_output = 0.3;
    hyper.label_smoothing = 0.1;
    let mut config = TrainConfig::new(hyper);
    config.learning_rate = 0.01;
    config.decay_rate = 1.0;
    config.epochs = 500;
    config.batch_size = 128;
    config.seed = 0;
    config.eval_every = 50;
    let out = train(&kg, &config).expect("training succeeds");
    let filter = kg.filter_index();
    let report = evaluate(&out.params, &config.hyper, &kg.test, &filter, kg.n_relations())
        .expect("evaluation succeeds");
    verdict(
        12,
        "extended-wn18rr",
        (report.mrr - 0.465).abs() <= 0.01,
        &format!("test MRR {:.4}, published reference 0.465 +/- 0.01", report.mrr),
    );
}

#[test]
fn checkpoint_round_trip_of_a_trained_model() {
    // Supporting check used alongside criterion 9: params survive a
    // save/load cycle bitwise and keep scoring identically.
    let (kg, config) = overfit_setup();
    let out = train(&kg, &config).expect("training succeeds");
    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &out.params, &config.hyper).expect("saves");
    let (loaded, loaded_hyper, n_relations) = load_checkpoint(&path).expect("loads");
    assert_eq!(n_relations, kg.n_relations());
    assert_eq!(loaded_hyper.rank, config.hyper.rank);
    let t = kg.train[0];
    assert_eq!(
        score_triple(&out.params, &config.hyper, t).to_bits(),
        score_triple(&loaded, &loaded_hyper, t).to_bits(),
        "scores must survive the round trip bitwise"
    );
}
