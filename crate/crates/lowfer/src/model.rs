//! The low-rank bilinear scoring model.
//!
//! A statement `(subject, relation, object)` is scored by projecting the
//! subject and relation embeddings into a shared `rank * entity_dim` space,
//! multiplying them elementwise, summing non-overlapping windows of size
//! `rank` back down to `entity_dim`, and taking the inner product with the
//! object embedding. Training scores each `(subject, relation)` key against
//! all entities at once and applies binary cross-entropy to the full row.
//!
//! All gradients are derived by hand; `finite_difference_check` validates
//! them against central differences.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::graph::Triple;
use crate::linalg::{
    l2_normalize, power_normalize, sum_pool, sum_pool_backward_rows, sum_pool_rows, Matrix,
};

/// Logits are clamped to this magnitude inside the loss; the gradient passes
/// through as `sigmoid(clamped) - target`.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Norm floor shared by the l2-normalization forward and backward passes.
pub const L2_NORM_FLOOR: f64 = 1e-12;

/// Denominator floor for the power-normalization derivative near zero.
pub const POWER_DERIV_FLOOR: f64 = 1e-6;

/// Whether a forward pass uses batch statistics and dropout (training) or
/// running statistics and no dropout (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Architecture and regularization settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Entity embedding width.
    pub entity_dim: usize,
    /// Relation embedding width.
    pub relation_dim: usize,
    /// Factorization rank; also the pooling window size.
    pub rank: usize,
    /// Dropout on the subject embedding before normalization.
    pub dropout_entity: f64,
    /// Dropout on the elementwise product of the two projections.
    pub dropout_fusion: f64,
    /// Dropout on the pooled, normalized output vector.
    pub dropout_output: f64,
    /// Mass moved from the positive label toward the uniform distribution.
    pub label_smoothing: f64,
    /// Apply signed square root and unit-norm scaling before pooling.
    pub power_l2_normalize: bool,
    /// Squash the final representation through tanh.
    pub tanh_output: bool,
}

impl Hyperparams {
    /// Plain configuration with every optional stage disabled.
    pub fn bare(entity_dim: usize, relation_dim: usize, rank: usize) -> Self {
        Hyperparams {
            entity_dim,
            relation_dim,
            rank,
            dropout_entity: 0.0,
            dropout_fusion: 0.0,
            dropout_output: 0.0,
            label_smoothing: 0.0,
            power_l2_normalize: false,
            tanh_output: false,
        }
    }

    /// Width of the fused space: `rank * entity_dim`.
    pub fn fused_dim(&self) -> usize {
        self.rank * self.entity_dim
    }

    /// Checks ranges; dropout probabilities must lie in `[0, 1)` and the
    /// smoothing mass in `[0, 1)`.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, p: f64| -> Result<()> {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config {
                    reason: format!("{name} must lie in [0, 1), got {p}"),
                });
            }
            Ok(())
        };
        if self.entity_dim == 0 || self.relation_dim == 0 || self.rank == 0 {
            return Err(Error::Config {
                reason: "dimensions and rank must be positive".into(),
            });
        }
        check("dropout_entity", self.dropout_entity)?;
        check("dropout_fusion", self.dropout_fusion)?;
        check("dropout_output", self.dropout_output)?;
        check("label_smoothing", self.label_smoothing)?;
        Ok(())
    }
}

/// Batch normalization over feature columns, with running statistics for
/// evaluation. Batch variance is the biased (1/n) estimator throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Per-batch statistics captured by a training-mode forward pass; needed for
/// the backward pass and for committing running-statistic updates.
#[derive(Debug, Clone)]
pub struct BnCache {
    /// Normalized activations before scale and shift.
    normalized: Matrix,
    /// `1 / sqrt(var + eps)` per feature.
    inv_std: Vec<f64>,
    /// Batch mean per feature.
    pub mean: Vec<f64>,
    /// Biased batch variance per feature.
    pub var: Vec<f64>,
}

impl BatchNorm {
    /// Fresh state: unit scale, zero shift, standard-normal running stats.
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// State whose evaluation-mode forward is exactly the identity
    /// (`eps = 0`, unit variance, zero mean, unit scale, zero shift).
    pub fn identity(dim: usize) -> Self {
        BatchNorm {
            eps: 0.0,
            ..BatchNorm::new(dim)
        }
    }

    /// Feature width.
    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Training-mode forward using batch statistics. Running statistics are
    /// not touched; commit them explicitly with [`BatchNorm::commit`].
    pub fn forward_train(&self, x: &Matrix) -> (Matrix, BnCache) {
        let (rows, cols) = (x.rows(), x.cols());
        assert_eq!(cols, self.dim(), "batch-norm width mismatch");
        assert!(rows > 0, "batch-norm needs at least one row");
        let mut mean = vec![0.0; cols];
        for r in 0..rows {
            for (m, &v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= rows as f64;
        }
        let mut var = vec![0.0; cols];
        for r in 0..rows {
            for (c, &v) in x.row(r).iter().enumerate() {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
        for v in &mut var {
            *v /= rows as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut normalized = Matrix::zeros(rows, cols);
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let n = (x.get(r, c) - mean[c]) * inv_std[c];
                normalized.set(r, c, n);
                out.set(r, c, self.gamma[c] * n + self.beta[c]);
            }
        }
        (
            out,
            BnCache {
                normalized,
                inv_std,
                mean,
                var,
            },
        )
    }

    /// Evaluation-mode forward using running statistics.
    pub fn forward_eval(&self, x: &Matrix) -> Matrix {
        let (rows, cols) = (x.rows(), x.cols());
        assert_eq!(cols, self.dim(), "batch-norm width mismatch");
        let inv_std: Vec<f64> = self
            .running_var
            .iter()
            .map(|&v| 1.0 / (v + self.eps).sqrt())
            .collect();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let n = (x.get(r, c) - self.running_mean[c]) * inv_std[c];
                out.set(r, c, self.gamma[c] * n + self.beta[c]);
            }
        }
        out
    }

    /// Training-mode backward. Returns the input gradient along with the
    /// scale and shift gradients.
    pub fn backward_train(&self, cache: &BnCache, dy: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
        let (rows, cols) = (dy.rows(), dy.cols());
        assert_eq!(cols, self.dim(), "batch-norm width mismatch");
        let m = rows as f64;
        let mut d_gamma = vec![0.0; cols];
        let mut d_beta = vec![0.0; cols];
        // Column sums of dL/dnormalized and of its product with the
        // normalized activations, both needed by the standard formula.
        let mut sum_dn = vec![0.0; cols];
        let mut sum_dn_n = vec![0.0; cols];
        for r in 0..rows {
            for c in 0..cols {
                let g = dy.get(r, c);
                let n = cache.normalized.get(r, c);
                d_gamma[c] += g * n;
                d_beta[c] += g;
                let dn = g * self.gamma[c];
                sum_dn[c] += dn;
                sum_dn_n[c] += dn * n;
            }
        }
        let mut dx = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                let dn = dy.get(r, c) * self.gamma[c];
                let n = cache.normalized.get(r, c);
                let val = (cache.inv_std[c] / m) * (m * dn - sum_dn[c] - n * sum_dn_n[c]);
                dx.set(r, c, val);
            }
        }
        (dx, d_gamma, d_beta)
    }

    /// Folds batch statistics into the running estimates.
    pub fn commit(&mut self, cache: &BnCache) {
        for c in 0..self.dim() {
            self.running_mean[c] =
                (1.0 - self.momentum) * self.running_mean[c] + self.momentum * cache.mean[c];
            self.running_var[c] =
                (1.0 - self.momentum) * self.running_var[c] + self.momentum * cache.var[c];
        }
    }
}

/// All trainable state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Entity embeddings, one row per entity.
    pub entity: Matrix,
    /// Relation embeddings; trained models hold `2 * n_relations` rows to
    /// cover reciprocal directions.
    pub relation: Matrix,
    /// Subject-side factor matrix, `entity_dim x (rank * entity_dim)`.
    pub factor_u: Matrix,
    /// Relation-side factor matrix, `relation_dim x (rank * entity_dim)`.
    pub factor_v: Matrix,
    /// Normalization of the subject embedding.
    pub bn_entity: BatchNorm,
    /// Normalization of the pooled output vector.
    pub bn_pooled: BatchNorm,
}

impl ModelParams {
    /// Number of entity rows.
    pub fn n_entities(&self) -> usize {
        self.entity.rows()
    }

    /// Number of relation rows (after any reciprocal augmentation).
    pub fn n_relation_rows(&self) -> usize {
        self.relation.rows()
    }

    /// Entity embedding width.
    pub fn entity_dim(&self) -> usize {
        self.entity.cols()
    }

    /// Relation embedding width.
    pub fn relation_dim(&self) -> usize {
        self.relation.cols()
    }

    /// Factorization rank, recovered from the factor width.
    pub fn rank(&self) -> usize {
        self.factor_u.cols() / self.entity_dim()
    }

    /// True when every tensor entry is finite.
    pub fn all_finite(&self) -> bool {
        self.entity.all_finite()
            && self.relation.all_finite()
            && self.factor_u.all_finite()
            && self.factor_v.all_finite()
            && self.bn_entity.gamma.iter().all(|v| v.is_finite())
            && self.bn_pooled.gamma.iter().all(|v| v.is_finite())
    }

    /// Checks that the hyperparameters describe these tensors.
    pub fn check_shapes(&self, hyper: &Hyperparams) {
        assert_eq!(self.entity.cols(), hyper.entity_dim, "entity width");
        assert_eq!(self.relation.cols(), hyper.relation_dim, "relation width");
        assert_eq!(self.factor_u.rows(), hyper.entity_dim, "factor_u height");
        assert_eq!(self.factor_u.cols(), hyper.fused_dim(), "factor_u width");
        assert_eq!(self.factor_v.rows(), hyper.relation_dim, "factor_v height");
        assert_eq!(self.factor_v.cols(), hyper.fused_dim(), "factor_v width");
        assert_eq!(self.bn_entity.dim(), hyper.entity_dim, "bn_entity width");
        assert_eq!(self.bn_pooled.dim(), hyper.entity_dim, "bn_pooled width");
    }
}

/// Draws fresh parameters: Glorot-normal embeddings, Glorot-uniform factor
/// matrices, identity-initialized batch norms. Draw order is fixed (entity,
/// relation, factor_u, factor_v; row-major within each tensor) so a seed
/// pins every tensor.
pub fn init_params<R: Rng>(
    n_entities: usize,
    n_relation_rows: usize,
    hyper: &Hyperparams,
    rng: &mut R,
) -> ModelParams {
    let glorot_normal = |rows: usize, cols: usize, rng: &mut R| -> Matrix {
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("valid normal");
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
    };
    let glorot_uniform = |rows: usize, cols: usize, rng: &mut R| -> Matrix {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("valid uniform");
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
    };
    let entity = glorot_normal(n_entities, hyper.entity_dim, rng);
    let relation = glorot_normal(n_relation_rows, hyper.relation_dim, rng);
    let factor_u = glorot_uniform(hyper.entity_dim, hyper.fused_dim(), rng);
    let factor_v = glorot_uniform(hyper.relation_dim, hyper.fused_dim(), rng);
    ModelParams {
        entity,
        relation,
        factor_u,
        factor_v,
        bn_entity: BatchNorm::new(hyper.entity_dim),
        bn_pooled: BatchNorm::new(hyper.entity_dim),
    }
}

/// Inverted-dropout multipliers for one training batch: entries are `0` or
/// `1 / keep_probability`, so expectations match the evaluation path.
#[derive(Debug, Clone, Default)]
pub struct DropoutMasks {
    entity: Option<Matrix>,
    fusion: Option<Matrix>,
    output: Option<Matrix>,
}

impl DropoutMasks {
    /// No dropout anywhere; also the right choice for evaluation.
    pub fn none() -> Self {
        DropoutMasks::default()
    }

    /// Samples masks for a batch of the given size. Stages with probability
    /// zero get no mask and cost no RNG draws.
    pub fn sample<R: Rng>(rng: &mut R, batch: usize, hyper: &Hyperparams) -> Self {
        let mut draw = |p: f64, cols: usize| -> Option<Matrix> {
            if p == 0.0 {
                return None;
            }
            let keep = 1.0 - p;
            let scale = 1.0 / keep;
            let data = (0..batch * cols)
                .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                .collect();
            Some(Matrix::from_vec(batch, cols, data))
        };
        DropoutMasks {
            entity: draw(hyper.dropout_entity, hyper.entity_dim),
            fusion: draw(hyper.dropout_fusion, hyper.fused_dim()),
            output: draw(hyper.dropout_output, hyper.entity_dim),
        }
    }
}

/// Multiplies a mask into activations, if one is present.
fn apply_mask(x: &Matrix, mask: &Option<Matrix>) -> Matrix {
    match mask {
        Some(m) => x.hadamard(m),
        None => x.clone(),
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Cache of the subject batch norm (training mode only).
    bn_entity: Option<BnCache>,
    /// Normalized subject rows (input to the subject projection).
    x_norm: Matrix,
    /// Subject projection `x_norm * factor_u`.
    proj_u: Matrix,
    /// Relation projection `relations * factor_v`.
    proj_v: Matrix,
    /// Elementwise product after fusion dropout (input to normalization).
    fused_dropped: Matrix,
    /// Output of the signed square root, when enabled.
    powered: Option<Matrix>,
    /// Euclidean norms of the powered rows, when l2 scaling is enabled.
    row_norms: Option<Vec<f64>>,
    /// Cache of the pooled batch norm (training mode only).
    bn_pooled: Option<BnCache>,
    /// Final representation (after output dropout and optional tanh).
    pub z: Matrix,
}

impl ForwardCache {
    /// Batch statistics of the subject batch norm, when run in train mode.
    pub fn bn_entity_stats(&self) -> Option<&BnCache> {
        self.bn_entity.as_ref()
    }

    /// Batch statistics of the pooled batch norm, when run in train mode.
    pub fn bn_pooled_stats(&self) -> Option<&BnCache> {
        self.bn_pooled.as_ref()
    }
}

/// Runs the fusion pipeline for a batch of `(subject, relation)` keys and
/// returns the final representations with everything needed for backward.
///
/// Train mode: dropout masks are applied and batch-norm statistics come from
/// the batch (running statistics are left untouched; commit them via
/// [`BatchNorm::commit`]). Eval mode: masks are ignored and running
/// statistics are used.
pub fn fuse_batch(
    params: &ModelParams,
    hyper: &Hyperparams,
    keys: &[(usize, usize)],
    mode: Mode,
    masks: &DropoutMasks,
) -> ForwardCache {
    params.check_shapes(hyper);
    assert!(!keys.is_empty(), "empty batch");
    let subject_rows: Vec<usize> = keys.iter().map(|&(s, _)| s).collect();
    let relation_rows: Vec<usize> = keys.iter().map(|&(_, r)| r).collect();
    let x0 = params.entity.gather_rows(&subject_rows);
    let r_batch = params.relation.gather_rows(&relation_rows);

    let (bn_entity, x_norm) = match mode {
        Mode::Train => {
            let xd = apply_mask(&x0, &masks.entity);
            let (xn, cache) = params.bn_entity.forward_train(&xd);
            (Some(cache), xn)
        }
        Mode::Eval => (None, params.bn_entity.forward_eval(&x0)),
    };

    let proj_u = x_norm.matmul(&params.factor_u);
    let proj_v = r_batch.matmul(&params.factor_v);
    let fused = proj_u.hadamard(&proj_v);
    let fused_dropped = match mode {
        Mode::Train => apply_mask(&fused, &masks.fusion),
        Mode::Eval => fused,
    };

    let (powered, row_norms, pre_pool) = if hyper.power_l2_normalize {
        let mut powered = Matrix::zeros(fused_dropped.rows(), fused_dropped.cols());
        for r in 0..fused_dropped.rows() {
            powered
                .row_mut(r)
                .copy_from_slice(&power_normalize(fused_dropped.row(r)));
        }
        let mut norms = Vec::with_capacity(powered.rows());
        let mut scaled = Matrix::zeros(powered.rows(), powered.cols());
        for r in 0..powered.rows() {
            let row = powered.row(r);
            norms.push(row.iter().map(|&v| v * v).sum::<f64>().sqrt());
            scaled
                .row_mut(r)
                .copy_from_slice(&l2_normalize(row, L2_NORM_FLOOR));
        }
        (Some(powered), Some(norms), scaled)
    } else {
        (None, None, fused_dropped.clone())
    };

    let pooled = sum_pool_rows(&pre_pool, hyper.rank);
    let (bn_pooled, z_norm) = match mode {
        Mode::Train => {
            let (zn, cache) = params.bn_pooled.forward_train(&pooled);
            (Some(cache), zn)
        }
        Mode::Eval => (None, params.bn_pooled.forward_eval(&pooled)),
    };
    let z_dropped = match mode {
        Mode::Train => apply_mask(&z_norm, &masks.output),
        Mode::Eval => z_norm,
    };
    let z = if hyper.tanh_output {
        let mut z = z_dropped;
        for v in z.data_mut() {
            *v = v.tanh();
        }
        z
    } else {
        z_dropped
    };

    ForwardCache {
        bn_entity,
        x_norm,
        proj_u,
        proj_v,
        fused_dropped,
        powered,
        row_norms,
        bn_pooled,
        z,
    }
}

/// Scores every entity for each batch key: `logits = z * entity^T`.
pub fn score_batch(
    params: &ModelParams,
    hyper: &Hyperparams,
    keys: &[(usize, usize)],
    mode: Mode,
    masks: &DropoutMasks,
) -> (ForwardCache, Matrix) {
    let cache = fuse_batch(params, hyper, keys, mode, masks);
    let logits = cache.z.matmul_nt(&params.entity);
    (cache, logits)
}

/// Evaluation-mode fused representation for explicit subject and relation
/// vectors (used by the expressiveness constructions and demos).
pub fn fuse_vectors(
    params: &ModelParams,
    hyper: &Hyperparams,
    e_vec: &[f64],
    r_vec: &[f64],
) -> Vec<f64> {
    assert_eq!(e_vec.len(), hyper.entity_dim, "subject width");
    assert_eq!(r_vec.len(), hyper.relation_dim, "relation width");
    let x = Matrix::from_vec(1, e_vec.len(), e_vec.to_vec());
    let x_norm = params.bn_entity.forward_eval(&x);
    let a = params.factor_u.matvec_t(x_norm.row(0));
    let b = params.factor_v.matvec_t(r_vec);
    let mut fused: Vec<f64> = a.iter().zip(&b).map(|(&p, &q)| p * q).collect();
    if hyper.power_l2_normalize {
        fused = l2_normalize(&power_normalize(&fused), L2_NORM_FLOOR);
    }
    let pooled = sum_pool(&fused, hyper.rank);
    let pooled = params
        .bn_pooled
        .forward_eval(&Matrix::from_vec(1, pooled.len(), pooled));
    let mut z = pooled.row(0).to_vec();
    if hyper.tanh_output {
        for v in &mut z {
            *v = v.tanh();
        }
    }
    z
}

/// Evaluation-mode score for explicit subject, relation, and object vectors.
pub fn score_vectors(
    params: &ModelParams,
    hyper: &Hyperparams,
    e_s: &[f64],
    r_vec: &[f64],
    e_o: &[f64],
) -> f64 {
    let z = fuse_vectors(params, hyper, e_s, r_vec);
    assert_eq!(e_o.len(), z.len(), "object width");
    z.iter().zip(e_o).map(|(&a, &b)| a * b).sum()
}

/// Evaluation-mode score of an encoded statement.
pub fn score_triple(params: &ModelParams, hyper: &Hyperparams, triple: Triple) -> f64 {
    let keys = [(triple.subject, triple.relation)];
    let cache = fuse_batch(params, hyper, &keys, Mode::Eval, &DropoutMasks::none());
    cache
        .z
        .row(0)
        .iter()
        .zip(params.entity.row(triple.object))
        .map(|(&a, &b)| a * b)
        .sum()
}

/// Probability that a statement holds: the logistic sigmoid of its score.
pub fn predict_proba(params: &ModelParams, hyper: &Hyperparams, triple: Triple) -> f64 {
    sigmoid(score_triple(params, hyper, triple))
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients for every trainable tensor, plus the set of relation rows that
/// actually received contributions (the optimizer skips the rest).
#[derive(Debug, Clone)]
pub struct Gradients {
    pub entity: Matrix,
    pub relation: Matrix,
    pub factor_u: Matrix,
    pub factor_v: Matrix,
    pub bn_entity_gamma: Vec<f64>,
    pub bn_entity_beta: Vec<f64>,
    pub bn_pooled_gamma: Vec<f64>,
    pub bn_pooled_beta: Vec<f64>,
    pub touched_relations: BTreeSet<usize>,
}

/// One training batch: keys and their dense 0/1 target rows.
#[derive(Debug, Clone)]
pub struct Batch {
    pub keys: Vec<(usize, usize)>,
    /// `keys.len() x n_entities` matrix of raw (unsmoothed) labels.
    pub targets: Matrix,
}

/// Binary cross-entropy over full logit rows with label smoothing and the
/// `±30` clamp. Returns the mean loss (over pairs, then entities) and the
/// logit gradient `(sigmoid(clamped) - smoothed) / (batch * n_entities)`.
pub fn bce_with_logits(logits: &Matrix, targets: &Matrix, label_smoothing: f64) -> (f64, Matrix) {
    assert_eq!(
        (logits.rows(), logits.cols()),
        (targets.rows(), targets.cols()),
        "loss shape mismatch"
    );
    let n_entities = logits.cols() as f64;
    let scale = 1.0 / (logits.rows() as f64 * n_entities);
    let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for r in 0..logits.rows() {
        let drow = d_logits.row_mut(r);
        for (c, (&x, &y)) in logits.row(r).iter().zip(targets.row(r)).enumerate() {
            let y = (1.0 - label_smoothing) * y + label_smoothing / n_entities;
            let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
            // Stable form of -(y*ln(sigmoid) + (1-y)*ln(1-sigmoid)).
            loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            drow[c] = (sigmoid(x) - y) * scale;
        }
    }
    (loss * scale, d_logits)
}

/// Forward and backward over one batch: mean 1-N cross-entropy (plus an
/// optional `l2_lambda * ||theta||^2` penalty over all trainable tensors)
/// and gradients for every tensor. Pure: running batch-norm statistics are
/// not modified; commit them from the returned cache.
pub fn loss_and_grads(
    params: &ModelParams,
    hyper: &Hyperparams,
    batch: &Batch,
    l2_lambda: f64,
    masks: &DropoutMasks,
) -> (f64, Gradients, ForwardCache) {
    assert_eq!(batch.keys.len(), batch.targets.rows(), "batch shape");
    assert_eq!(batch.targets.cols(), params.n_entities(), "target width");
    let (cache, logits) = score_batch(params, hyper, &batch.keys, Mode::Train, masks);
    let (mut loss, d_logits) = bce_with_logits(&logits, &batch.targets, hyper.label_smoothing);

    // Output side: logits = z * entity^T.
    let mut d_entity = d_logits.matmul_tn(&cache.z); // n_e x d_e
    let d_z = d_logits.matmul(&params.entity); // b x d_e

    // tanh.
    let mut d_z_dropped = if hyper.tanh_output {
        let mut d = d_z;
        for (g, &z) in d.data_mut().iter_mut().zip(cache.z.data()) {
            *g *= 1.0 - z * z;
        }
        d
    } else {
        d_z
    };

    // Output dropout.
    d_z_dropped = apply_mask(&d_z_dropped, &masks.output);

    // Pooled batch norm.
    let bn_pooled_cache = cache.bn_pooled.as_ref().expect("train-mode cache");
    let (d_pooled, bn_pooled_gamma, bn_pooled_beta) =
        params.bn_pooled.backward_train(bn_pooled_cache, &d_z_dropped);

    // Pooling adjoint.
    let mut d_pre_pool = sum_pool_backward_rows(&d_pooled, hyper.rank);

    // Normalization pair (l2 scaling after signed square root).
    if hyper.power_l2_normalize {
        let powered = cache.powered.as_ref().expect("powered cache");
        let norms = cache.row_norms.as_ref().expect("norm cache");
        for r in 0..d_pre_pool.rows() {
            let x = powered.row(r);
            let norm = norms[r];
            let dy = d_pre_pool.row_mut(r);
            if norm > L2_NORM_FLOOR {
                let inv = 1.0 / norm;
                let dot: f64 = x.iter().zip(dy.iter()).map(|(&a, &b)| a * b).sum();
                let coef = dot * inv * inv;
                for (g, &xv) in dy.iter_mut().zip(x) {
                    *g = (*g - coef * xv) * inv;
                }
            } else {
                for g in dy.iter_mut() {
                    *g /= L2_NORM_FLOOR;
                }
            }
        }
        // Signed square root: d/dx sign(x)*sqrt(|x|) = 1 / (2*sqrt(|x|)),
        // floored near zero; defined as zero at exactly zero.
        for (g, &x) in d_pre_pool
            .data_mut()
            .iter_mut()
            .zip(cache.fused_dropped.data())
        {
            if x == 0.0 {
                *g = 0.0;
            } else {
                *g *= 0.5 / x.abs().sqrt().max(POWER_DERIV_FLOOR);
            }
        }
    }

    // Fusion dropout.
    let d_fused = apply_mask(&d_pre_pool, &masks.fusion);

    // Elementwise product of the two projections.
    let d_proj_u = d_fused.hadamard(&cache.proj_v);
    let d_proj_v = d_fused.hadamard(&cache.proj_u);

    // Projections.
    let d_factor_u = cache.x_norm.matmul_tn(&d_proj_u);
    let d_x_norm = d_proj_u.matmul_nt(&params.factor_u);
    let relation_rows: Vec<usize> = batch.keys.iter().map(|&(_, r)| r).collect();
    let r_batch = params.relation.gather_rows(&relation_rows);
    let d_factor_v = r_batch.matmul_tn(&d_proj_v);
    let d_r_batch = d_proj_v.matmul_nt(&params.factor_v);

    // Subject batch norm, then entity dropout.
    let bn_entity_cache = cache.bn_entity.as_ref().expect("train-mode cache");
    let (d_x_dropped, bn_entity_gamma, bn_entity_beta) =
        params.bn_entity.backward_train(bn_entity_cache, &d_x_norm);
    let d_x0 = apply_mask(&d_x_dropped, &masks.entity);

    // Scatter per-row gradients back into the embedding tables.
    for (row, &(s, _)) in batch.keys.iter().enumerate() {
        let src = d_x0.row(row).to_vec();
        for (dst, v) in d_entity.row_mut(s).iter_mut().zip(src) {
            *dst += v;
        }
    }
    let mut d_relation = Matrix::zeros(params.relation.rows(), params.relation.cols());
    let mut touched_relations = BTreeSet::new();
    for (row, &(_, r)) in batch.keys.iter().enumerate() {
        touched_relations.insert(r);
        let src = d_r_batch.row(row).to_vec();
        for (dst, v) in d_relation.row_mut(r).iter_mut().zip(src) {
            *dst += v;
        }
    }

    let mut grads = Gradients {
        entity: d_entity,
        relation: d_relation,
        factor_u: d_factor_u,
        factor_v: d_factor_v,
        bn_entity_gamma,
        bn_entity_beta,
        bn_pooled_gamma,
        bn_pooled_beta,
        touched_relations,
    };

    if l2_lambda > 0.0 {
        let mut penalty = 0.0;
        let mut add = |theta: &Matrix, grad: &mut Matrix| {
            penalty += theta.data().iter().map(|&v| v * v).sum::<f64>();
            grad.axpy(2.0 * l2_lambda, theta);
        };
        add(&params.entity, &mut grads.entity);
        add(&params.relation, &mut grads.relation);
        add(&params.factor_u, &mut grads.factor_u);
        add(&params.factor_v, &mut grads.factor_v);
        let mut add_vec = |theta: &[f64], grad: &mut [f64]| {
            penalty += theta.iter().map(|&v| v * v).sum::<f64>();
            for (g, &t) in grad.iter_mut().zip(theta) {
                *g += 2.0 * l2_lambda * t;
            }
        };
        add_vec(&params.bn_entity.gamma, &mut grads.bn_entity_gamma);
        add_vec(&params.bn_entity.beta, &mut grads.bn_entity_beta);
        add_vec(&params.bn_pooled.gamma, &mut grads.bn_pooled_gamma);
        add_vec(&params.bn_pooled.beta, &mut grads.bn_pooled_beta);
        // Every relation row now carries a penalty gradient.
        grads.touched_relations.extend(0..params.relation.rows());
        loss += l2_lambda * penalty;
    }

    (loss, grads, cache)
}

/// Number of scalar parameters in the two embedding tables and the two
/// factor matrices (batch-norm vectors excluded, matching how capacity is
/// usually reported for this model family).
pub fn count_parameters(
    n_entities: u64,
    n_relations: u64,
    entity_dim: u64,
    relation_dim: u64,
    rank: u64,
    include_reciprocals: bool,
) -> u64 {
    let relation_rows = if include_reciprocals {
        2 * n_relations
    } else {
        n_relations
    };
    let fused = rank * entity_dim;
    n_entities * entity_dim + relation_rows * relation_dim + entity_dim * fused + relation_dim * fused
}

/// Largest relative error between analytic gradients and central finite
/// differences, probing every entry of every trainable tensor.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_tensor: String,
    pub checked: usize,
}

/// Compares [`loss_and_grads`] to central finite differences with step `h`
/// under fixed dropout masks. Relative error uses a small denominator floor
/// so near-zero entries are judged on absolute deviation.
pub fn finite_difference_check(
    params: &ModelParams,
    hyper: &Hyperparams,
    batch: &Batch,
    l2_lambda: f64,
    masks: &DropoutMasks,
    h: f64,
) -> GradCheckReport {
    const REL_FLOOR: f64 = 1e-5;
    let (_, grads, _) = loss_and_grads(params, hyper, batch, l2_lambda, masks);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_tensor: String::new(),
        checked: 0,
    };

    let loss_of = |p: &ModelParams| -> f64 { loss_and_grads(p, hyper, batch, l2_lambda, masks).0 };

    // Probe one scalar location via the accessor pair, compare, restore.
    macro_rules! probe {
        ($name:expr, $get:expr, $set:expr, $analytic:expr) => {{
            let original = $get;
            $set(original + h);
            let up = loss_of(&work);
            $set(original - h);
            let down = loss_of(&work);
            $set(original);
            let numeric = (up - down) / (2.0 * h);
            let denom = $analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            let rel = ($analytic - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_tensor = $name;
            }
        }};
    }

    for r in 0..params.entity.rows() {
        for c in 0..params.entity.cols() {
            probe!(
                format!("entity[{r},{c}]"),
                work.entity.get(r, c),
                |v| work.entity.set(r, c, v),
                grads.entity.get(r, c)
            );
        }
    }
    for r in 0..params.relation.rows() {
        for c in 0..params.relation.cols() {
            probe!(
                format!("relation[{r},{c}]"),
                work.relation.get(r, c),
                |v| work.relation.set(r, c, v),
                grads.relation.get(r, c)
            );
        }
    }
    for r in 0..params.factor_u.rows() {
        for c in 0..params.factor_u.cols() {
            probe!(
                format!("factor_u[{r},{c}]"),
                work.factor_u.get(r, c),
                |v| work.factor_u.set(r, c, v),
                grads.factor_u.get(r, c)
            );
        }
    }
    for r in 0..params.factor_v.rows() {
        for c in 0..params.factor_v.cols() {
            probe!(
                format!("factor_v[{r},{c}]"),
                work.factor_v.get(r, c),
                |v| work.factor_v.set(r, c, v),
                grads.factor_v.get(r, c)
            );
        }
    }
    for c in 0..params.bn_entity.dim() {
        probe!(
            format!("bn_entity.gamma[{c}]"),
            work.bn_entity.gamma[c],
            |v| work.bn_entity.gamma[c] = v,
            grads.bn_entity_gamma[c]
        );
        probe!(
            format!("bn_entity.beta[{c}]"),
            work.bn_entity.beta[c],
            |v| work.bn_entity.beta[c] = v,
            grads.bn_entity_beta[c]
        );
    }
    for c in 0..params.bn_pooled.dim() {
        probe!(
            format!("bn_pooled.gamma[{c}]"),
            work.bn_pooled.gamma[c],
            |v| work.bn_pooled.gamma[c] = v,
            grads.bn_pooled_gamma[c]
        );
        probe!(
            format!("bn_pooled.beta[{c}]"),
            work.bn_pooled.beta[c],
            |v| work.bn_pooled.beta[c] = v,
            grads.bn_pooled_beta[c]
        );
    }
    report
}
