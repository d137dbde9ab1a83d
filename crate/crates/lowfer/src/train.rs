//! Mini-batch 1-N training: grouped targets, seeded shuffling, Adam with
//! bias correction and per-epoch learning-rate decay, and a loss/validation
//! history. Relation rows that receive no gradient in a step keep both their
//! values and their Adam moments.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::graph::{GroupedTargets, KnowledgeGraph};
use crate::linalg::Matrix;
use crate::model::{
    init_params, loss_and_grads, Batch, DropoutMasks, Gradients, Hyperparams, ModelParams,
};

/// Adam moment decay rates and denominator offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        AdamSettings {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Everything that defines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hyper: Hyperparams,
    /// Base learning rate; epoch `t` uses `learning_rate * decay_rate^t`.
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Coefficient of the squared-norm penalty; zero disables it.
    pub l2_lambda: f64,
    pub seed: u64,
    /// Evaluate validation MRR every this many epochs; zero disables it.
    pub eval_every: usize,
    pub adam: AdamSettings,
}

impl TrainConfig {
    /// Defaults: 500 epochs of batches of 128, no decay, no penalty.
    pub fn new(hyper: Hyperparams) -> Self {
        TrainConfig {
            hyper,
            learning_rate: 0.0005,
            decay_rate: 1.0,
            epochs: 500,
            batch_size: 128,
            l2_lambda: 0.0,
            seed: 0,
            eval_every: 20,
            adam: AdamSettings::default(),
        }
    }

    /// Range checks for every numeric field.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let bad = |reason: String| Err(Error::Config { reason });
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.decay_rate <= 0.0 || !self.decay_rate.is_finite() {
            return bad(format!("decay_rate must be positive, got {}", self.decay_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.l2_lambda < 0.0 || !self.l2_lambda.is_finite() {
            return bad(format!("l2_lambda must be non-negative, got {}", self.l2_lambda));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("adam betas must lie in [0, 1)".into());
        }
        if self.adam.eps <= 0.0 {
            return bad("adam eps must be positive".into());
        }
        Ok(())
    }
}

/// First and second moment estimates for one tensor.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Matrix,
    v: Matrix,
}

impl Moments {
    fn like(t: &Matrix) -> Self {
        Moments {
            m: Matrix::zeros(t.rows(), t.cols()),
            v: Matrix::zeros(t.rows(), t.cols()),
        }
    }
}

/// Adam state for every trainable tensor, sharing one global step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    entity: Moments,
    relation: Moments,
    factor_u: Moments,
    factor_v: Moments,
    bn_entity_gamma: Moments,
    bn_entity_beta: Moments,
    bn_pooled_gamma: Moments,
    bn_pooled_beta: Moments,
    step: u64,
}

impl AdamState {
    /// Zero moments shaped like the given parameters.
    pub fn new(params: &ModelParams) -> Self {
        let vec_moments = |v: &[f64]| Moments::like(&Matrix::zeros(1, v.len()));
        AdamState {
            entity: Moments::like(&params.entity),
            relation: Moments::like(&params.relation),
            factor_u: Moments::like(&params.factor_u),
            factor_v: Moments::like(&params.factor_v),
            bn_entity_gamma: vec_moments(&params.bn_entity.gamma),
            bn_entity_beta: vec_moments(&params.bn_entity.beta),
            bn_pooled_gamma: vec_moments(&params.bn_pooled.gamma),
            bn_pooled_beta: vec_moments(&params.bn_pooled.beta),
            step: 0,
        }
    }

    /// Number of completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Updates one contiguous span of parameters with bias-corrected Adam.
fn adam_span(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    settings: &AdamSettings,
    lr: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = settings.beta1 * m[i] + (1.0 - settings.beta1) * g;
        v[i] = settings.beta2 * v[i] + (1.0 - settings.beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + settings.eps);
    }
}

/// One Adam step over all tensors. Dense tensors update every entry;
/// the relation table updates only the rows listed in
/// `grads.touched_relations`, leaving other rows and their moments alone.
/// The step counter is global, so a row skipped for many steps still uses
/// the current bias correction when it is next touched.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    settings: &AdamSettings,
    lr: f64,
) {
    state.step += 1;
    let c1 = 1.0 - settings.beta1.powi(state.step as i32);
    let c2 = 1.0 - settings.beta2.powi(state.step as i32);

    adam_span(
        params.entity.data_mut(),
        grads.entity.data(),
        state.entity.m.data_mut(),
        state.entity.v.data_mut(),
        settings,
        lr,
        c1,
        c2,
    );
    for &row in &grads.touched_relations {
        adam_span(
            params.relation.row_mut(row),
            grads.relation.row(row),
            state.relation.m.row_mut(row),
            state.relation.v.row_mut(row),
            settings,
            lr,
            c1,
            c2,
        );
    }
    adam_span(
        params.factor_u.data_mut(),
        grads.factor_u.data(),
        state.factor_u.m.data_mut(),
        state.factor_u.v.data_mut(),
        settings,
        lr,
        c1,
        c2,
    );
    adam_span(
        params.factor_v.data_mut(),
        grads.factor_v.data(),
        state.factor_v.m.data_mut(),
        state.factor_v.v.data_mut(),
        settings,
        lr,
        c1,
        c2,
    );
    adam_span(
        &mut params.bn_entity.gamma,
        &grads.bn_entity_gamma,
        state.bn_entity_gamma.m.data_mut(),
        state.bn_entity_gamma.v.data_mut(),
        settings,
        lr,
        c1,
        c2,
    );
    adam_span(
        &mut params.bn_entity.beta,
        &grads.bn_entity_beta,
        state.bn_entity_beta.m.data_mut(),
        state.bn_entity_beta.v.data_mut(),
        settings,
        lr,
        c1,
        c2,
    );
    adam_span(
        &mut params.bn_pooled.gamma,
        &grads.bn_pooled_gamma,
        state.bn_pooled_gamma.m.data_mut(),
        state.bn_pooled_gamma.v.data_mut(),
        settings,
        lr,
        c1,
        c2,
    );
    adam_span(
        &mut params.bn_pooled.beta,
        &grads.bn_pooled_beta,
        state.bn_pooled_beta.m.data_mut(),
        state.bn_pooled_beta.v.data_mut(),
        settings,
        lr,
        c1,
        c2,
    );
}

/// Shuffles the grouped keys with the given RNG and chunks them; every chunk
/// except possibly the last has exactly `batch_size` keys.
pub fn make_batches(
    grouped: &GroupedTargets,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<(usize, usize)>> {
    assert!(batch_size > 0, "batch_size must be positive");
    let mut keys: Vec<(usize, usize)> = grouped.keys().collect();
    keys.shuffle(rng);
    keys.chunks(batch_size).map(<[_]>::to_vec).collect()
}

/// Builds the dense 0/1 target rows for a chunk of keys.
pub fn batch_targets(grouped: &GroupedTargets, keys: &[(usize, usize)], n_entities: usize) -> Matrix {
    let mut targets = Matrix::zeros(keys.len(), n_entities);
    for (row, &(s, r)) in keys.iter().enumerate() {
        let bucket = grouped
            .get(s, r)
            .expect("batch key missing from grouped targets");
        let dst = targets.row_mut(row);
        for &o in bucket {
            dst[o] = 1.0;
        }
    }
    targets
}

/// Validation MRR recorded at one epoch.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ValidationPoint {
    pub epoch: usize,
    pub mrr: f64,
}

/// Per-epoch record of a training run. `epoch_seconds` holds wall-clock
/// times and is the only non-deterministic field.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub validation: Vec<ValidationPoint>,
    pub epoch_seconds: Vec<f64>,
}

/// A trained model with its history.
#[derive(Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub history: TrainHistory,
}

/// Trains a model on the graph's augmented training set.
///
/// Deterministic for a fixed `(config, seed)`: one seeded RNG drives
/// initialization, per-epoch shuffles, and dropout masks, in that order.
/// Fails fast with the epoch and batch index if the loss leaves the finite
/// range.
pub fn train(kg: &KnowledgeGraph, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let n_e = kg.n_entities();
    let relation_rows = 2 * kg.n_relations();
    if config.hyper.rank > 0 && n_e == 0 {
        return Err(Error::Config {
            reason: "cannot train on an empty graph".into(),
        });
    }
    let grouped = kg.grouped_targets();
    if grouped.is_empty() {
        return Err(Error::Config {
            reason: "training split has no keys".into(),
        });
    }
    let filter = if config.eval_every > 0 && !kg.valid.is_empty() {
        Some(kg.filter_index())
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init_params(n_e, relation_rows, &config.hyper, &mut rng);
    let mut adam = AdamState::new(&params);
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.learning_rate * config.decay_rate.powi(epoch as i32);
        let batches = make_batches(&grouped, config.batch_size, &mut rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, keys) in batches.iter().enumerate() {
            let targets = batch_targets(&grouped, keys, n_e);
            let masks = DropoutMasks::sample(&mut rng, keys.len(), &config.hyper);
            let batch = Batch {
                keys: keys.clone(),
                targets,
            };
            let (loss, grads, cache) =
                loss_and_grads(&params, &config.hyper, &batch, config.l2_lambda, &masks);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                    value: loss,
                });
            }
            adam_step(&mut params, &grads, &mut adam, &config.adam, lr);
            params
                .bn_entity
                .commit(cache.bn_entity_stats().expect("train cache"));
            params
                .bn_pooled
                .commit(cache.bn_pooled_stats().expect("train cache"));
            epoch_loss += loss;
        }
        history.epoch_loss.push(epoch_loss / batches.len() as f64);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());

        if let Some(filter) = &filter {
            if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 {
                let report = evaluate(&params, &config.hyper, &kg.valid, filter, kg.n_relations())?;
                history.validation.push(ValidationPoint {
                    epoch,
                    mrr: report.mrr,
                });
            }
        }
    }
    Ok(TrainOutput { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synthetic_graph;

    fn toy_config(seed: u64) -> TrainConfig {
        let hyper = Hyperparams {
            dropout_entity: 0.1,
            dropout_fusion: 0.1,
            dropout_output: 0.1,
            label_smoothing: 0.1,
            ..Hyperparams::bare(8, 6, 2)
        };
        TrainConfig {
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 16,
            seed,
            eval_every: 2,
            ..TrainConfig::new(hyper)
        }
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate_for_unit_gradient() {
        let mut theta = [0.0];
        let mut m = [0.0];
        let mut v = [0.0];
        let settings = AdamSettings::default();
        adam_span(&mut theta, &[1.0], &mut m, &mut v, &settings, 0.1,
            1.0 - settings.beta1, 1.0 - settings.beta2);
        assert!(
            (theta[0] + 0.1).abs() < 1e-8,
            "expected ~-0.1, got {}",
            theta[0]
        );
    }

    #[test]
    fn untouched_relation_rows_keep_values_and_moments() {
        let hyper = Hyperparams::bare(4, 3, 2);
        let kg = synthetic_graph(6, 2, 12, 0, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = init_params(6, 4, &hyper, &mut rng);
        let mut state = AdamState::new(&params);
        let grouped = kg.grouped_targets();
        let keys: Vec<(usize, usize)> = grouped.keys().filter(|&(_, r)| r == 0).take(2).collect();
        assert!(!keys.is_empty());
        let batch = Batch {
            targets: batch_targets(&grouped, &keys, 6),
            keys,
        };
        let before_row3 = params.relation.row(3).to_vec();
        let (_, grads, _) = loss_and_grads(&params, &hyper, &batch, 0.0, &DropoutMasks::none());
        adam_step(&mut params, &grads, &mut state, &AdamSettings::default(), 0.01);
        assert_eq!(before_row3.as_slice(), params.relation.row(3));
        assert!(state.relation.m.row(3).iter().all(|&x| x == 0.0));
        assert_eq!(state.step_count(), 1);
        // Touched rows did move.
        assert!(grads
            .touched_relations
            .iter()
            .all(|&r| state.relation.m.row(r).iter().any(|&x| x != 0.0)));
    }

    #[test]
    fn batches_cover_all_keys_with_fixed_sizes() {
        let kg = synthetic_graph(10, 2, 18, 0, 3);
        let grouped = kg.grouped_targets();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batches = make_batches(&grouped, 4, &mut rng);
        let total: usize = batches.iter().map(Vec::len).sum();
        assert_eq!(total, grouped.len());
        for (i, b) in batches.iter().enumerate() {
            if i + 1 < batches.len() {
                assert_eq!(b.len(), 4);
            } else {
                assert!(b.len() <= 4 && !b.is_empty());
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_batch_sequences() {
        let kg = synthetic_graph(10, 2, 18, 0, 3);
        let grouped = kg.grouped_targets();
        let a = make_batches(&grouped, 4, &mut ChaCha8Rng::seed_from_u64(7));
        let b = make_batches(&grouped, 4, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        let c = make_batches(&grouped, 4, &mut ChaCha8Rng::seed_from_u64(8));
        assert_ne!(a, c);
    }

    #[test]
    fn targets_put_ones_exactly_on_bucket_objects() {
        let kg = crate::graph::KnowledgeGraph::from_id_triples(
            3,
            1,
            vec![
                crate::graph::Triple::new(0, 0, 1),
                crate::graph::Triple::new(0, 0, 2),
            ],
            vec![],
            vec![],
        );
        let grouped = kg.grouped_targets();
        let targets = batch_targets(&grouped, &[(0, 0)], 3);
        assert_eq!(targets.row(0), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn training_is_bitwise_deterministic_for_a_fixed_seed() {
        let kg = synthetic_graph(12, 3, 30, 6, 21);
        let config = toy_config(77);
        let a = train(&kg, &config).unwrap();
        let b = train(&kg, &config).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history.epoch_loss, b.history.epoch_loss);
        assert_eq!(a.history.validation, b.history.validation);
    }

    #[test]
    fn loss_decreases_on_a_memorizable_graph() {
        let kg = synthetic_graph(12, 3, 30, 0, 13);
        let mut config = toy_config(3);
        config.epochs = 30;
        config.eval_every = 0;
        let out = train(&kg, &config).unwrap();
        let first = out.history.epoch_loss[0];
        let last = *out.history.epoch_loss.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        assert!(out.params.all_finite());
    }

    #[test]
    fn history_records_every_epoch_and_validation_interval() {
        let kg = synthetic_graph(12, 3, 30, 5, 2);
        let config = toy_config(5);
        let out = train(&kg, &config).unwrap();
        assert_eq!(out.history.epoch_loss.len(), 3);
        assert_eq!(out.history.epoch_seconds.len(), 3);
        // eval_every = 2 over 3 epochs: recorded after epoch index 1.
        assert_eq!(out.history.validation.len(), 1);
        assert_eq!(out.history.validation[0].epoch, 1);
    }

    #[test]
    fn runaway_learning_rate_reports_non_finite_loss_with_position() {
        let kg = synthetic_graph(10, 2, 20, 0, 4);
        let mut config = toy_config(1);
        config.learning_rate = 1e200;
        config.epochs = 4;
        config.eval_every = 0;
        match train(&kg, &config) {
            Err(Error::NonFiniteLoss { value, .. }) => assert!(!value.is_finite()),
            other => panic!("expected non-finite loss error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let mut config = toy_config(0);
        config.learning_rate = 0.0;
        assert!(config.validate().is_err());
        let mut config = toy_config(0);
        config.batch_size = 0;
        assert!(config.validate().is_err());
        let mut config = toy_config(0);
        config.hyper.dropout_entity = 1.0;
        assert!(config.validate().is_err());
    }
}
