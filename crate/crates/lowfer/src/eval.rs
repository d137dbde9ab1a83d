//! Filtered ranking evaluation.
//!
//! Every test statement is asked in both directions: `(subject, relation)`
//! ranking the object, and `(object, relation + n_relations)` ranking the
//! subject. Competitors that are known positives for the query key are
//! masked out (except the target itself), and the rank counts strictly
//! better logits, so ties resolve optimistically.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FilterIndex, Triple, Vocabulary};
use crate::model::{fuse_batch, DropoutMasks, Hyperparams, Mode, ModelParams};

/// Aggregate ranking quality over a set of queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean reciprocal rank, in (0, 1].
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub n_queries: usize,
}

impl EvalReport {
    /// Aggregates a list of ranks.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        assert!(!ranks.is_empty(), "no ranks to aggregate");
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        EvalReport {
            mrr,
            hits_at_1: frac(1),
            hits_at_3: frac(3),
            hits_at_10: frac(10),
            n_queries: ranks.len(),
        }
    }
}

/// Overall report together with one report per raw relation label; both
/// query directions of a statement count toward its raw relation.
#[derive(Debug, Clone, Serialize)]
pub struct PerRelationReport {
    pub overall: EvalReport,
    pub per_relation: BTreeMap<String, EvalReport>,
}

/// Filtered rank of the object among all entities for `(subject, relation)`.
///
/// Known positives other than the target are removed from the comparison;
/// the rank is `1 +` the number of surviving logits strictly above the
/// target's. Errors if the filter index does not list the target itself
/// (the index was not built from a superset of the evaluated triples).
pub fn filtered_rank(
    params: &ModelParams,
    hyper: &Hyperparams,
    triple: Triple,
    filter: &FilterIndex,
) -> Result<usize> {
    let keys = [(triple.subject, triple.relation)];
    let cache = fuse_batch(params, hyper, &keys, Mode::Eval, &DropoutMasks::none());
    let logits = params.entity.matvec(cache.z.row(0));
    let bucket = filter.bucket(triple.subject, triple.relation);
    if bucket.binary_search(&triple.object).is_err() {
        return Err(Error::FilterInconsistent {
            subject: triple.subject,
            relation: triple.relation,
            object: triple.object,
        });
    }
    let target = logits[triple.object];
    debug_assert!(target.is_finite(), "non-finite target logit");
    let mut better = 0usize;
    let mut masked = bucket.iter().peekable();
    for (e, &logit) in logits.iter().enumerate() {
        // Advance the sorted mask pointer; skip masked competitors.
        while masked.peek().is_some_and(|&&m| m < e) {
            masked.next();
        }
        if masked.peek() == Some(&&e) && e != triple.object {
            continue;
        }
        if logit > target {
            better += 1;
        }
    }
    Ok(1 + better)
}

/// Ranks for both directions of each statement, in input order.
fn ranked_queries(
    params: &ModelParams,
    hyper: &Hyperparams,
    triples: &[Triple],
    filter: &FilterIndex,
    n_relations: usize,
) -> Result<Vec<(usize, usize)>> {
    triples
        .par_iter()
        .map(|&t| {
            let forward = filtered_rank(params, hyper, t, filter)?;
            let backward = filtered_rank(params, hyper, t.reciprocal(n_relations), filter)?;
            Ok((forward, backward))
        })
        .collect()
}

/// Filtered MRR and Hits@{1,3,10} over both directions of every statement.
pub fn evaluate(
    params: &ModelParams,
    hyper: &Hyperparams,
    triples: &[Triple],
    filter: &FilterIndex,
    n_relations: usize,
) -> Result<EvalReport> {
    if triples.is_empty() {
        return Err(Error::Config {
            reason: "evaluation split is empty".into(),
        });
    }
    let pairs = ranked_queries(params, hyper, triples, filter, n_relations)?;
    let mut ranks = Vec::with_capacity(pairs.len() * 2);
    for (f, b) in pairs {
        ranks.push(f);
        ranks.push(b);
    }
    Ok(EvalReport::from_ranks(&ranks))
}

/// Like [`evaluate`], additionally grouping ranks by raw relation label.
pub fn evaluate_per_relation(
    params: &ModelParams,
    hyper: &Hyperparams,
    triples: &[Triple],
    filter: &FilterIndex,
    vocab: &Vocabulary,
) -> Result<PerRelationReport> {
    if triples.is_empty() {
        return Err(Error::Config {
            reason: "evaluation split is empty".into(),
        });
    }
    let n_relations = vocab.n_relations();
    let pairs = ranked_queries(params, hyper, triples, filter, n_relations)?;
    let mut all = Vec::with_capacity(pairs.len() * 2);
    let mut grouped: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (t, (f, b)) in triples.iter().zip(pairs) {
        all.push(f);
        all.push(b);
        let label = vocab.relation_label(t.relation).to_owned();
        grouped.entry(label).or_default().extend([f, b]);
    }
    Ok(PerRelationReport {
        overall: EvalReport::from_ranks(&all),
        per_relation: grouped
            .into_iter()
            .map(|(label, ranks)| (label, EvalReport::from_ranks(&ranks)))
            .collect(),
    })
}

/// One point of the noise-robustness probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbPoint {
    /// Variance of the Gaussian noise added to both factor matrices.
    pub variance: f64,
    pub mrr: f64,
}

/// Adds zero-mean Gaussian noise of each listed variance to copies of the
/// factor matrices and re-evaluates. Variance zero evaluates the model as
/// is. Deterministic for a fixed seed; noise is drawn per variance in list
/// order (factor_u first, then factor_v, row-major).
pub fn perturb_and_evaluate(
    params: &ModelParams,
    hyper: &Hyperparams,
    triples: &[Triple],
    filter: &FilterIndex,
    n_relations: usize,
    variances: &[f64],
    seed: u64,
) -> Result<Vec<PerturbPoint>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(variances.len());
    for &variance in variances {
        assert!(
            variance >= 0.0 && variance.is_finite(),
            "noise variance must be non-negative"
        );
        let report = if variance == 0.0 {
            evaluate(params, hyper, triples, filter, n_relations)?
        } else {
            let noise = Normal::new(0.0, variance.sqrt()).expect("valid normal");
            let mut noisy = params.clone();
            for v in noisy.factor_u.data_mut() {
                *v += noise.sample(&mut rng);
            }
            for v in noisy.factor_v.data_mut() {
                *v += noise.sample(&mut rng);
            }
            evaluate(&noisy, hyper, triples, filter, n_relations)?
        };
        points.push(PerturbPoint {
            variance,
            mrr: report.mrr,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synthetic_graph, KnowledgeGraph};
    use crate::model::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (KnowledgeGraph, ModelParams, Hyperparams) {
        let kg = synthetic_graph(15, 4, 60, 12, 3);
        let hyper = Hyperparams::bare(6, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = init_params(kg.n_entities(), 2 * kg.n_relations(), &hyper, &mut rng);
        (kg, params, hyper)
    }

    /// Sort-based reference: order unmasked logits descending and locate the
    /// first position whose logit equals the target's.
    fn sort_rank_oracle(
        params: &ModelParams,
        hyper: &Hyperparams,
        triple: Triple,
        filter: &FilterIndex,
    ) -> usize {
        let keys = [(triple.subject, triple.relation)];
        let cache = fuse_batch(params, hyper, &keys, Mode::Eval, &DropoutMasks::none());
        let logits = params.entity.matvec(cache.z.row(0));
        let target = logits[triple.object];
        let mut survivors: Vec<f64> = logits
            .iter()
            .enumerate()
            .filter(|&(e, _)| {
                e == triple.object || !filter.contains(triple.subject, triple.relation, e)
            })
            .map(|(_, &l)| l)
            .collect();
        survivors.sort_by(|a, b| b.partial_cmp(a).unwrap());
        1 + survivors.iter().position(|&l| l == target).unwrap()
    }

    #[test]
    fn filtered_rank_matches_sort_oracle_on_random_queries() {
        let (kg, params, hyper) = fixture();
        let filter = kg.filter_index();
        let n_r = kg.n_relations();
        for t in &kg.test {
            for q in [*t, t.reciprocal(n_r)] {
                let fast = filtered_rank(&params, &hyper, q, &filter).unwrap();
                let slow = sort_rank_oracle(&params, &hyper, q, &filter);
                assert_eq!(fast, slow, "query {q:?}");
            }
        }
    }

    #[test]
    fn ties_resolve_to_the_best_rank() {
        let (kg, mut params, hyper) = fixture();
        // Duplicate several entity rows so their logits tie exactly.
        let row0 = params.entity.row(0).to_vec();
        for dup in [1, 2, 3] {
            params.entity.row_mut(dup).copy_from_slice(&row0);
        }
        let filter = kg.filter_index();
        let q = kg.test[0];
        let fast = filtered_rank(&params, &hyper, q, &filter).unwrap();
        let slow = sort_rank_oracle(&params, &hyper, q, &filter);
        assert_eq!(fast, slow);
    }

    #[test]
    fn masking_skips_known_positives_but_never_the_target() {
        // Construct a two-object key: ranking one object must not let the
        // other (a known positive) compete against it.
        let kg = KnowledgeGraph::from_id_triples(
            4,
            1,
            vec![Triple::new(0, 0, 1), Triple::new(0, 0, 2)],
            vec![],
            vec![],
        );
        let hyper = Hyperparams::bare(4, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = init_params(4, 2, &hyper, &mut rng);
        let filter = kg.filter_index();
        let r1 = filtered_rank(&params, &hyper, Triple::new(0, 0, 1), &filter).unwrap();
        let r2 = filtered_rank(&params, &hyper, Triple::new(0, 0, 2), &filter).unwrap();
        // Only entities 0 and 3 compete with each target: rank is at most 3.
        assert!(r1 <= 3 && r2 <= 3);
    }

    #[test]
    fn missing_target_in_filter_is_an_error() {
        let (kg, params, hyper) = fixture();
        let filter = kg.filter_index();
        // A statement absent from every split: find one by brute force.
        let n_r = kg.n_relations();
        let mut unknown = None;
        'outer: for s in 0..kg.n_entities() {
            for o in 0..kg.n_entities() {
                if !filter.contains(s, 0, o) {
                    unknown = Some(Triple::new(s, 0, o));
                    break 'outer;
                }
            }
        }
        let unknown = unknown.expect("graph is sparse");
        assert!(unknown.relation < n_r);
        match filtered_rank(&params, &hyper, unknown, &filter) {
            Err(Error::FilterInconsistent { .. }) => {}
            other => panic!("expected filter inconsistency, got {other:?}"),
        }
    }

    #[test]
    fn report_invariants_hold_on_random_models() {
        let (kg, params, hyper) = fixture();
        let filter = kg.filter_index();
        let report = evaluate(&params, &hyper, &kg.test, &filter, kg.n_relations()).unwrap();
        assert_eq!(report.n_queries, 2 * kg.test.len());
        assert!(report.mrr > 0.0 && report.mrr <= 1.0);
        assert!(report.mrr >= report.hits_at_1);
        assert!(report.hits_at_1 <= report.hits_at_3);
        assert!(report.hits_at_3 <= report.hits_at_10);
        assert!(report.hits_at_10 <= 1.0);
    }

    #[test]
    fn per_relation_reports_aggregate_back_to_the_overall_mrr() {
        let (kg, params, hyper) = fixture();
        let filter = kg.filter_index();
        let report =
            evaluate_per_relation(&params, &hyper, &kg.test, &filter, &kg.vocab).unwrap();
        let total: usize = report.per_relation.values().map(|r| r.n_queries).sum();
        assert_eq!(total, report.overall.n_queries);
        let weighted: f64 = report
            .per_relation
            .values()
            .map(|r| r.mrr * r.n_queries as f64)
            .sum::<f64>()
            / total as f64;
        assert!((weighted - report.overall.mrr).abs() < 1e-12);
    }

    #[test]
    fn empty_split_is_rejected() {
        let (kg, params, hyper) = fixture();
        let filter = kg.filter_index();
        assert!(matches!(
            evaluate(&params, &hyper, &[], &filter, kg.n_relations()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn zero_variance_probe_equals_plain_evaluation() {
        let (kg, params, hyper) = fixture();
        let filter = kg.filter_index();
        let plain = evaluate(&params, &hyper, &kg.test, &filter, kg.n_relations()).unwrap();
        let points = perturb_and_evaluate(
            &params,
            &hyper,
            &kg.test,
            &filter,
            kg.n_relations(),
            &[0.0],
            123,
        )
        .unwrap();
        assert_eq!(points[0].variance, 0.0);
        assert_eq!(points[0].mrr, plain.mrr);
    }

    #[test]
    fn perturbation_is_deterministic_per_seed() {
        let (kg, params, hyper) = fixture();
        let filter = kg.filter_index();
        let run = |seed| {
            perturb_and_evaluate(
                &params,
                &hyper,
                &kg.test,
                &filter,
                kg.n_relations(),
                &[0.5, 1.0],
                seed,
            )
            .unwrap()
        };
        let a = run(7);
        let b = run(7);
        assert_eq!(a[0].mrr, b[0].mrr);
        assert_eq!(a[1].mrr, b[1].mrr);
    }
}
