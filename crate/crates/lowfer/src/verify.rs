//! Deterministic self-verification suites.
//!
//! Each suite re-derives a property of the scoring machinery through an
//! independent route and reports per-case pass/fail with the largest
//! discrepancy observed. Suites are pure functions of a seed, so two runs
//! with the same seed produce identical reports.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::linalg::{outer, sk_matrix, Matrix};
use crate::model::{
    finite_difference_check, fuse_batch, fuse_vectors, init_params, score_vectors, Batch,
    DropoutMasks, Hyperparams, Mode, ModelParams,
};
use crate::subsume::{
    build_core_tensor, complex_oracle, conv_oracle, distmult_oracle, encode_complex, encode_conv,
    encode_distmult, encode_rescal, encode_simple, encode_tucker, exact_separation_model,
    rescal_oracle, simple_oracle, tucker_score, GroundTruth, HeadTail, ReIm, SeparationMode,
};

/// Finite-difference step used by the gradient suite.
pub const GRADCHECK_STEP: f64 = 1e-6;
/// Largest acceptable relative error between analytic and numeric gradients.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Largest acceptable discrepancy between fusion formulations.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-10;
/// Largest acceptable discrepancy for encoder-versus-oracle comparisons.
pub const ENCODER_TOLERANCE: f64 = 1e-8;

/// One verification suite; [`Suite::All`] expands to every other variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    All,
    /// Exact 0/1 separation of an arbitrary finite truth set.
    ExactSeparation,
    /// Two-way bridge between factor form and dense core tensors.
    CoreBridge,
    /// Bilinear family encoders against their oracles.
    Bilinear,
    /// Relation-conditioned convolution encoder against its oracle.
    Convolution,
    /// Analytic gradients against central finite differences.
    GradCheck,
    /// Three formulations of the fusion computation against each other.
    Equivalence,
}

impl Suite {
    /// Command-line token naming this suite.
    pub fn token(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::ExactSeparation => "prop1",
            Suite::CoreBridge => "prop2",
            Suite::Bilinear => "bilinear",
            Suite::Convolution => "hyper",
            Suite::GradCheck => "gradcheck",
            Suite::Equivalence => "equivalence",
        }
    }

    /// Parses a command-line token; `None` for unknown names.
    pub fn from_token(token: &str) -> Option<Suite> {
        Some(match token {
            "all" => Suite::All,
            "prop1" => Suite::ExactSeparation,
            "prop2" => Suite::CoreBridge,
            "bilinear" => Suite::Bilinear,
            "hyper" => Suite::Convolution,
            "gradcheck" => Suite::GradCheck,
            "equivalence" => Suite::Equivalence,
            _ => return None,
        })
    }

    /// Every concrete suite, in report order.
    pub fn concrete() -> [Suite; 6] {
        [
            Suite::ExactSeparation,
            Suite::CoreBridge,
            Suite::Bilinear,
            Suite::Convolution,
            Suite::GradCheck,
            Suite::Equivalence,
        ]
    }

    /// All accepted command-line tokens.
    pub fn tokens() -> [&'static str; 7] {
        [
            "all",
            "prop1",
            "prop2",
            "bilinear",
            "hyper",
            "gradcheck",
            "equivalence",
        ]
    }
}

/// Outcome of one named check within a suite.
#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CaseResult {
    fn new(case: &str, max_discrepancy: f64, tolerance: f64) -> Self {
        CaseResult {
            case: case.to_string(),
            max_discrepancy,
            tolerance,
            passed: max_discrepancy <= tolerance && max_discrepancy.is_finite(),
        }
    }
}

/// Outcome of one suite run.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub cases: Vec<CaseResult>,
}

impl SuiteReport {
    fn new(suite: Suite, seed: u64, cases: Vec<CaseResult>) -> Self {
        SuiteReport {
            suite: suite.token().to_string(),
            seed,
            passed: cases.iter().all(|c| c.passed),
            cases,
        }
    }
}

/// Runs a suite (or, for [`Suite::All`], every suite) at the given seed.
pub fn run(suite: Suite, seed: u64) -> Vec<SuiteReport> {
    match suite {
        Suite::All => Suite::concrete()
            .into_iter()
            .flat_map(|s| run(s, seed))
            .collect(),
        Suite::ExactSeparation => vec![exact_separation_suite(seed)],
        Suite::CoreBridge => vec![core_bridge_suite(seed)],
        Suite::Bilinear => vec![bilinear_suite(seed)],
        Suite::Convolution => vec![convolution_suite(seed)],
        Suite::GradCheck => vec![gradcheck_suite(seed)],
        Suite::Equivalence => vec![equivalence_suite(seed)],
    }
}

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

fn column(m: &Matrix, c: usize) -> Vec<f64> {
    (0..m.rows()).map(|r| m.get(r, c)).collect()
}

/// Fusion computed through materialized operators: the pooling matrix times
/// an explicit diagonal matrix times the projected relation vector.
pub fn fuse_via_pooling_matrix(params: &ModelParams, hyper: &Hyperparams, e_s: &[f64], r: &[f64]) -> Vec<f64> {
    let a = params.factor_u.matvec_t(e_s);
    let b = params.factor_v.matvec_t(r);
    let mut diag = Matrix::zeros(a.len(), a.len());
    for (i, &v) in a.iter().enumerate() {
        diag.set(i, i, v);
    }
    let fused = diag.matvec(&b);
    sk_matrix(hyper.entity_dim, hyper.rank).matvec(&fused)
}

/// Fusion computed through per-window bilinear matrices: output coordinate
/// `m` is `e_s^T (sum_l u_{mk+l} v_{mk+l}^T) r`.
pub fn fuse_via_window_matrices(params: &ModelParams, hyper: &Hyperparams, e_s: &[f64], r: &[f64]) -> Vec<f64> {
    let k = hyper.rank;
    (0..hyper.entity_dim)
        .map(|m| {
            let mut w_m = Matrix::zeros(hyper.entity_dim, hyper.relation_dim);
            for l in 0..k {
                let u_col = column(&params.factor_u, m * k + l);
                let v_col = column(&params.factor_v, m * k + l);
                w_m.axpy(1.0, &outer(&u_col, &v_col));
            }
            rescal_oracle(&w_m, e_s, r)
        })
        .collect()
}

fn exact_separation_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid_discrepancy = |truth: &GroundTruth, mode: SeparationMode| -> f64 {
        let (params, hyper) = exact_separation_model(truth, mode);
        let mut worst: f64 = 0.0;
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
        worst
    };
    let example = GroundTruth::example();
    let mut cases = vec![
        CaseResult::new(
            "example-truth-entity-window",
            grid_discrepancy(&example, SeparationMode::ByEntityCount),
            0.0,
        ),
        CaseResult::new(
            "example-truth-relation-window",
            grid_discrepancy(&example, SeparationMode::ByRelationCount),
            0.0,
        ),
        CaseResult::new(
            "reciprocal-closure-entity-window",
            grid_discrepancy(&example.with_reciprocals(), SeparationMode::ByEntityCount),
            0.0,
        ),
    ];
    let mut worst_entity: f64 = 0.0;
    let mut worst_relation: f64 = 0.0;
    for _ in 0..5 {
        let n_e = rng.random_range(2..=6);
        let n_r = rng.random_range(1..=5);
        let total = n_e * n_r * n_e;
        let count = rng.random_range(1..=total.min(3 * n_e));
        let mut triples = std::collections::BTreeSet::new();
        while triples.len() < count {
            triples.insert((
                rng.random_range(0..n_e),
                rng.random_range(0..n_r),
                rng.random_range(0..n_e),
            ));
        }
        let truth = GroundTruth::new(n_e, n_r, triples);
        worst_entity = worst_entity.max(grid_discrepancy(&truth, SeparationMode::ByEntityCount));
        worst_relation =
            worst_relation.max(grid_discrepancy(&truth, SeparationMode::ByRelationCount));
    }
    cases.push(CaseResult::new(
        "random-truths-entity-window",
        worst_entity,
        0.0,
    ));
    cases.push(CaseResult::new(
        "random-truths-relation-window",
        worst_relation,
        0.0,
    ));
    SuiteReport::new(Suite::ExactSeparation, seed, cases)
}

fn core_bridge_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Factors to core: dense-core scores must match factor scores.
    let mut factors_to_core: f64 = 0.0;
    for _ in 0..5 {
        let d_e = rng.random_range(2..=6);
        let d_r = rng.random_range(1..=6);
        let k = rng.random_range(1..=4);
        let u = random_matrix(&mut rng, d_e, k * d_e);
        let v = random_matrix(&mut rng, d_r, k * d_e);
        let core = build_core_tensor(&u, &v, k);
        let hyper = Hyperparams::bare(d_e, d_r, k);
        let params = ModelParams {
            entity: Matrix::identity(d_e),
            relation: Matrix::identity(d_r),
            factor_u: u,
            factor_v: v,
            bn_entity: crate::model::BatchNorm::identity(d_e),
            bn_pooled: crate::model::BatchNorm::identity(d_e),
        };
        for _ in 0..40 {
            let e_s = random_vec(&mut rng, d_e);
            let r = random_vec(&mut rng, d_r);
            let e_o = random_vec(&mut rng, d_e);
            let via_factors = score_vectors(&params, &hyper, &e_s, &r, &e_o);
            let via_core = tucker_score(&core, &e_s, &r, &e_o);
            factors_to_core = factors_to_core.max((via_factors - via_core).abs());
        }
    }
    // Core to factors: compression must reproduce every core entry.
    let mut core_to_factors: f64 = 0.0;
    let mut round_trip: f64 = 0.0;
    let mut window_excess: f64 = 0.0;
    for _ in 0..5 {
        let d_e = rng.random_range(2..=5);
        let d_r = rng.random_range(1..=5);
        let mut core = crate::linalg::Tensor3::zeros(d_e, d_r, d_e);
        for i in 0..d_e {
            for j in 0..d_r {
                for m in 0..d_e {
                    core.set(i, j, m, rng.random_range(-1.0..1.0));
                }
            }
        }
        let (params, hyper) = match encode_tucker(&core) {
            Ok(pair) => pair,
            Err(_) => {
                core_to_factors = f64::INFINITY;
                break;
            }
        };
        window_excess =
            window_excess.max((hyper.rank as f64 - d_e.min(d_r) as f64).max(0.0));
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
                    core_to_factors = core_to_factors.max((score - core.get(i, j, m)).abs());
                }
            }
        }
        let rebuilt = build_core_tensor(&params.factor_u, &params.factor_v, hyper.rank);
        round_trip = round_trip
            .max(rebuilt.max_abs_diff(&core) / core.frobenius_norm().max(1.0));
    }
    SuiteReport::new(
        Suite::CoreBridge,
        seed,
        vec![
            CaseResult::new("factor-scores-match-core", factors_to_core, ENCODER_TOLERANCE),
            CaseResult::new("compressed-core-scores", core_to_factors, ENCODER_TOLERANCE),
            CaseResult::new("compression-round-trip", round_trip, ENCODER_TOLERANCE),
            CaseResult::new("window-size-bound", window_excess, 0.0),
        ],
    )
}

fn bilinear_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let n_r = 3;

    let mut full: f64 = 0.0;
    let matrices: Vec<Matrix> = (0..n_r).map(|_| random_matrix(&mut rng, d, d)).collect();
    let (params, hyper) = encode_rescal(&matrices);
    for (l, w) in matrices.iter().enumerate() {
        for _ in 0..40 {
            let e_s = random_vec(&mut rng, d);
            let e_o = random_vec(&mut rng, d);
            let enc = score_vectors(&params, &hyper, &e_s, &one_hot(n_r, l), &e_o);
            full = full.max((enc - rescal_oracle(w, &e_s, &e_o)).abs());
        }
    }

    let mut diagonal: f64 = 0.0;
    let rows: Vec<Vec<f64>> = (0..n_r).map(|_| random_vec(&mut rng, d)).collect();
    let (params, hyper) = encode_distmult(&rows);
    for (l, w) in rows.iter().enumerate() {
        for _ in 0..40 {
            let e_s = random_vec(&mut rng, d);
            let e_o = random_vec(&mut rng, d);
            let enc = score_vectors(&params, &hyper, &e_s, &one_hot(n_r, l), &e_o);
            diagonal = diagonal.max((enc - distmult_oracle(w, &e_s, &e_o)).abs());
        }
    }

    let mut averaged: f64 = 0.0;
    let rel: Vec<Vec<f64>> = (0..n_r).map(|_| random_vec(&mut rng, d)).collect();
    let inv: Vec<Vec<f64>> = (0..n_r).map(|_| random_vec(&mut rng, d)).collect();
    let (params, hyper) = encode_simple(&rel, &inv);
    for l in 0..n_r {
        for _ in 0..40 {
            let s = HeadTail {
                head: random_vec(&mut rng, d),
                tail: random_vec(&mut rng, d),
            };
            let o = HeadTail {
                head: random_vec(&mut rng, d),
                tail: random_vec(&mut rng, d),
            };
            let enc = score_vectors(&params, &hyper, &s.stacked(), &one_hot(n_r, l), &o.stacked());
            averaged = averaged.max((enc - simple_oracle(&rel[l], &inv[l], &s, &o)).abs());
        }
    }

    let mut complex: f64 = 0.0;
    let crel: Vec<ReIm> = (0..n_r)
        .map(|_| ReIm {
            re: random_vec(&mut rng, d),
            im: random_vec(&mut rng, d),
        })
        .collect();
    let (params, hyper) = encode_complex(&crel);
    for (l, r) in crel.iter().enumerate() {
        for _ in 0..40 {
            let s = ReIm {
                re: random_vec(&mut rng, d),
                im: random_vec(&mut rng, d),
            };
            let o = ReIm {
                re: random_vec(&mut rng, d),
                im: random_vec(&mut rng, d),
            };
            let enc = score_vectors(&params, &hyper, &s.stacked(), &one_hot(n_r, l), &o.stacked());
            complex = complex.max((enc - complex_oracle(r, &s, &o)).abs());
        }
    }

    SuiteReport::new(
        Suite::Bilinear,
        seed,
        vec![
            CaseResult::new("full-bilinear", full, ENCODER_TOLERANCE),
            CaseResult::new("diagonal-bilinear", diagonal, ENCODER_TOLERANCE),
            CaseResult::new("averaged-pair-bilinear", averaged, ENCODER_TOLERANCE),
            CaseResult::new("complex-diagonal-bilinear", complex, ENCODER_TOLERANCE),
        ],
    )
}

fn convolution_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for &(d_e, d_r, n_f, l_f) in &[(4usize, 2usize, 2usize, 2usize), (6, 3, 3, 3), (5, 2, 1, 3)] {
        let conv_len = d_e - l_f + 1;
        let filter_gen = random_matrix(&mut rng, n_f * l_f, d_r);
        let mix = random_matrix(&mut rng, n_f * conv_len, d_e);
        let (params, hyper) = encode_conv(&filter_gen, &mix, n_f, l_f, d_e);
        for _ in 0..30 {
            let e_s = random_vec(&mut rng, d_e);
            let e_o = random_vec(&mut rng, d_e);
            let r = random_vec(&mut rng, d_r);
            let enc = score_vectors(&params, &hyper, &e_s, &r, &e_o);
            let orc = conv_oracle(&filter_gen, &mix, n_f, l_f, &e_s, &r, &e_o);
            worst = worst.max((enc - orc).abs());
        }
    }
    SuiteReport::new(
        Suite::Convolution,
        seed,
        vec![CaseResult::new(
            "relation-conditioned-convolution",
            worst,
            ENCODER_TOLERANCE,
        )],
    )
}

fn gradcheck_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run_config = |name: &str, hyper: Hyperparams, l2: f64| -> CaseResult {
        let n_entities = 7;
        let n_relation_rows = 6;
        let params = init_params(n_entities, n_relation_rows, &hyper, &mut rng);
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
        let masks = DropoutMasks::sample(&mut rng, batch_size, &hyper);
        let report = finite_difference_check(&params, &hyper, &batch, l2, &masks, GRADCHECK_STEP);
        CaseResult::new(name, report.max_rel_err, GRADCHECK_TOLERANCE)
    };

    let mut plain = Hyperparams::bare(5, 4, 2);
    plain.label_smoothing = 0.1;

    let mut full = Hyperparams::bare(5, 4, 2);
    full.dropout_entity = 0.2;
    full.dropout_fusion = 0.3;
    full.dropout_output = 0.1;
    full.label_smoothing = 0.1;
    full.power_l2_normalize = true;
    full.tanh_output = true;

    let mut mid = Hyperparams::bare(6, 3, 3);
    mid.dropout_fusion = 0.25;
    mid.tanh_output = true;

    let cases = vec![
        run_config("plain-pipeline", plain, 0.0),
        run_config("all-stages-enabled", full, 0.01),
        run_config("tanh-with-fusion-dropout", mid, 1e-3),
    ];
    SuiteReport::new(Suite::GradCheck, seed, cases)
}

fn equivalence_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prod_vs_pooling: f64 = 0.0;
    let mut prod_vs_windows: f64 = 0.0;
    let mut pooling_vs_windows: f64 = 0.0;
    let configs = 250;
    let keys_per_config = 4;
    for _ in 0..configs {
        let d_e = rng.random_range(1..=16);
        let d_r = rng.random_range(1..=16);
        let k = rng.random_range(1..=8);
        let n_e = 5;
        let n_r = 4;
        let hyper = Hyperparams::bare(d_e, d_r, k);
        let params = ModelParams {
            entity: random_matrix(&mut rng, n_e, d_e),
            relation: random_matrix(&mut rng, n_r, d_r),
            factor_u: random_matrix(&mut rng, d_e, k * d_e),
            factor_v: random_matrix(&mut rng, d_r, k * d_e),
            bn_entity: crate::model::BatchNorm::identity(d_e),
            bn_pooled: crate::model::BatchNorm::identity(d_e),
        };
        let keys: Vec<(usize, usize)> = (0..keys_per_config)
            .map(|_| (rng.random_range(0..n_e), rng.random_range(0..n_r)))
            .collect();
        let cache = fuse_batch(&params, &hyper, &keys, Mode::Eval, &DropoutMasks::none());
        for (row, &(s, r)) in keys.iter().enumerate() {
            let e_s = params.entity.row(s);
            let r_vec = params.relation.row(r);
            let prod = cache.z.row(row);
            let via_pool = fuse_via_pooling_matrix(&params, &hyper, e_s, r_vec);
            let via_windows = fuse_via_window_matrices(&params, &hyper, e_s, r_vec);
            // Independent of fuse_batch: the single-vector production path.
            let single = fuse_vectors(&params, &hyper, e_s, r_vec);
            for m in 0..d_e {
                prod_vs_pooling = prod_vs_pooling
                    .max((prod[m] - via_pool[m]).abs())
                    .max((single[m] - via_pool[m]).abs());
                prod_vs_windows = prod_vs_windows.max((prod[m] - via_windows[m]).abs());
                pooling_vs_windows =
                    pooling_vs_windows.max((via_pool[m] - via_windows[m]).abs());
            }
        }
    }
    SuiteReport::new(
        Suite::Equivalence,
        seed,
        vec![
            CaseResult::new(
                "production-vs-pooling-matrix",
                prod_vs_pooling,
                EQUIVALENCE_TOLERANCE,
            ),
            CaseResult::new(
                "production-vs-window-matrices",
                prod_vs_windows,
                EQUIVALENCE_TOLERANCE,
            ),
            CaseResult::new(
                "pooling-matrix-vs-window-matrices",
                pooling_vs_windows,
                EQUIVALENCE_TOLERANCE,
            ),
        ],
    )
}
