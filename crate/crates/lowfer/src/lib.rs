//! Low-rank bilinear fusion for knowledge-graph link prediction.
//!
//! The model scores a `(subject, relation, object)` statement by projecting
//! the subject and relation embeddings through two factor matrices,
//! multiplying the projections elementwise, sum-pooling the product over
//! non-overlapping windows, and taking the inner product of the pooled
//! vector with the object embedding. The window size (the factorization
//! rank) trades parameter count against expressiveness.
//!
//! The crate provides:
//! * [`graph`] — dataset loading, label interning, reciprocal augmentation,
//!   grouped 1-N targets, and filtered candidate indexes;
//! * [`linalg`] — the dense matrix/tensor kernels, pooling operators, and a
//!   one-sided Jacobi SVD;
//! * [`model`] — the scoring pipeline with batch normalization, dropout,
//!   optional power/l2 normalization, manual gradients, and a
//!   finite-difference gradient checker;
//! * [`train`] — Adam with sparse relation updates, learning-rate decay,
//!   mini-batching, and deterministic seeded runs;
//! * [`eval`] — filtered ranking metrics (mean reciprocal rank, hits at
//!   1/3/10), per-relation breakdowns, and noise-perturbation studies;
//! * [`checkpoint`] — a binary save/load format with bitwise round-trips;
//! * [`subsume`] — exact constructions of other scoring families (full and
//!   diagonal bilinear forms, averaged pairs, complex diagonal forms, and a
//!   relation-conditioned linear convolution) plus a two-way bridge to
//!   dense-core trilinear models;
//! * [`verify`] — seeded self-verification suites over all of the above.
//!
//! Determinism: every randomized routine takes a seed (or an explicit RNG),
//! and parallelism only distributes independent output rows, so results are
//! bitwise reproducible for any thread count.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
pub mod linalg;
pub mod model;
pub mod subsume;
pub mod train;
pub mod verify;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{Error, Result};
pub use eval::{
    evaluate, evaluate_per_relation, perturb_and_evaluate, EvalReport, PerRelationReport,
    PerturbPoint,
};
pub use graph::{
    build_graph, load_dataset, synthetic_graph, FilterIndex, GroupedTargets, KnowledgeGraph,
    Triple, Vocabulary,
};
pub use linalg::{Matrix, Svd, Tensor3};
pub use model::{
    count_parameters, finite_difference_check, init_params, predict_proba, score_triple,
    score_vectors, BatchNorm, Hyperparams, Mode, ModelParams,
};
pub use subsume::{exact_separation_model, GroundTruth, SeparationMode};
pub use train::{train, AdamSettings, TrainConfig, TrainHistory, TrainOutput};
pub use verify::{run as run_verification, Suite, SuiteReport};
