//! Knowledge-graph ingestion: tab-separated split files, label interning,
//! reciprocal augmentation, and the two lookup indexes used by training
//! (grouped targets) and evaluation (filtering known positives).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// An encoded `(subject, relation, object)` statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
}

impl Triple {
    /// Convenience constructor.
    pub fn new(subject: usize, relation: usize, object: usize) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }

    /// The same statement read in the opposite direction, using the shifted
    /// relation id `relation + n_relations`.
    pub fn reciprocal(&self, n_relations: usize) -> Triple {
        Triple {
            subject: self.object,
            relation: self.relation + n_relations,
            object: self.subject,
        }
    }
}

/// Bidirectional mapping between string labels and dense ids, assigned in
/// first-appearance order.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// Interns an entity label, returning its id.
    pub fn intern_entity(&mut self, label: &str) -> usize {
        if let Some(&id) = self.entity_ids.get(label) {
            return id;
        }
        let id = self.entities.len();
        self.entities.push(label.to_owned());
        self.entity_ids.insert(label.to_owned(), id);
        id
    }

    /// Interns a relation label, returning its id.
    pub fn intern_relation(&mut self, label: &str) -> usize {
        if let Some(&id) = self.relation_ids.get(label) {
            return id;
        }
        let id = self.relations.len();
        self.relations.push(label.to_owned());
        self.relation_ids.insert(label.to_owned(), id);
        id
    }

    /// Id of a known entity label.
    pub fn entity_id(&self, label: &str) -> Option<usize> {
        self.entity_ids.get(label).copied()
    }

    /// Id of a known relation label.
    pub fn relation_id(&self, label: &str) -> Option<usize> {
        self.relation_ids.get(label).copied()
    }

    /// Label of an entity id.
    pub fn entity_label(&self, id: usize) -> &str {
        &self.entities[id]
    }

    /// Label of a relation id.
    pub fn relation_label(&self, id: usize) -> &str {
        &self.relations[id]
    }

    /// Number of distinct entities.
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    /// Number of distinct relations (before reciprocal augmentation).
    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }
}

/// A dataset with encoded splits and the reciprocal-augmented training set.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    pub vocab: Vocabulary,
    /// Encoded training triples as read (deduplicated, no reciprocals).
    pub train: Vec<Triple>,
    /// Training triples plus one reciprocal per triple; always `2 * train.len()`.
    pub train_augmented: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl KnowledgeGraph {
    /// Number of distinct entities.
    pub fn n_entities(&self) -> usize {
        self.vocab.n_entities()
    }

    /// Number of distinct relations before augmentation; trained models hold
    /// twice as many relation embeddings.
    pub fn n_relations(&self) -> usize {
        self.vocab.n_relations()
    }

    /// Builds a graph from already-encoded id triples, synthesizing labels
    /// `e0..` / `r0..`. Intended for generated fixtures and benchmarks.
    pub fn from_id_triples(
        n_entities: usize,
        n_relations: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Self {
        let mut vocab = Vocabulary::default();
        for e in 0..n_entities {
            vocab.intern_entity(&format!("e{e}"));
        }
        for r in 0..n_relations {
            vocab.intern_relation(&format!("r{r}"));
        }
        for t in train.iter().chain(&valid).chain(&test) {
            assert!(
                t.subject < n_entities && t.object < n_entities && t.relation < n_relations,
                "triple {:?} out of range for {} entities / {} relations",
                t,
                n_entities,
                n_relations
            );
        }
        let train = dedup_triples(train, "train");
        let valid = dedup_triples(valid, "valid");
        let test = dedup_triples(test, "test");
        let train_augmented = augment(&train, n_relations);
        KnowledgeGraph {
            vocab,
            train,
            train_augmented,
            valid,
            test,
        }
    }

    /// Grouped training targets: every augmented `(subject, relation)` key
    /// mapped to the sorted set of objects observed with it.
    pub fn grouped_targets(&self) -> GroupedTargets {
        GroupedTargets {
            map: bucket(self.train_augmented.iter()),
        }
    }

    /// Filter over all splits in both directions, for filtered ranking.
    pub fn filter_index(&self) -> FilterIndex {
        let n_r = self.n_relations();
        let mut all: Vec<Triple> = Vec::new();
        for t in self.train.iter().chain(&self.valid).chain(&self.test) {
            all.push(*t);
            all.push(t.reciprocal(n_r));
        }
        FilterIndex {
            map: bucket(all.iter()),
        }
    }
}

/// Maps each `(subject, relation)` key of the augmented training set to the
/// sorted object ids observed with it; rows of the 1-N training targets.
#[derive(Debug, Clone)]
pub struct GroupedTargets {
    map: BTreeMap<(usize, usize), Vec<usize>>,
}

impl GroupedTargets {
    /// Objects observed with the key, sorted ascending.
    pub fn get(&self, subject: usize, relation: usize) -> Option<&[usize]> {
        self.map.get(&(subject, relation)).map(Vec::as_slice)
    }

    /// Keys in deterministic (sorted) order.
    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.map.keys().copied()
    }

    /// Number of distinct keys.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// True when no key is present.
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Known positives across train, valid, and test in both directions; used to
/// mask competitors during filtered ranking.
#[derive(Debug, Clone)]
pub struct FilterIndex {
    map: BTreeMap<(usize, usize), Vec<usize>>,
}

impl FilterIndex {
    /// All known objects for the key, sorted ascending.
    pub fn bucket(&self, subject: usize, relation: usize) -> &[usize] {
        self.map
            .get(&(subject, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// True when the exact statement is a known positive.
    pub fn contains(&self, subject: usize, relation: usize, object: usize) -> bool {
        self.bucket(subject, relation).binary_search(&object).is_ok()
    }

    /// Keys in deterministic (sorted) order.
    pub fn keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.map.keys().copied()
    }
}

/// Groups triples into sorted, deduplicated object buckets per key.
fn bucket<'a>(triples: impl Iterator<Item = &'a Triple>) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for t in triples {
        map.entry((t.subject, t.relation)).or_default().push(t.object);
    }
    for objects in map.values_mut() {
        objects.sort_unstable();
        objects.dedup();
    }
    map
}

/// Appends one reciprocal per triple; the result is exactly twice as long.
fn augment(train: &[Triple], n_relations: usize) -> Vec<Triple> {
    let mut out = Vec::with_capacity(train.len() * 2);
    for t in train {
        out.push(*t);
        out.push(t.reciprocal(n_relations));
    }
    out
}

/// Drops exact duplicates, keeping first occurrences, and warns with a count.
fn dedup_triples(triples: Vec<Triple>, split: &str) -> Vec<Triple> {
    let mut seen = HashSet::with_capacity(triples.len());
    let before = triples.len();
    let out: Vec<Triple> = triples.into_iter().filter(|t| seen.insert(*t)).collect();
    if out.len() < before {
        log::warn!(
            "{} split: dropped {} duplicate triple(s)",
            split,
            before - out.len()
        );
    }
    out
}

/// Reads one split file: one `subject<TAB>relation<TAB>object` statement per
/// line, fields whitespace-trimmed, blank lines skipped. Reports malformed
/// lines with their 1-based line number.
pub fn load_split(path: &Path) -> Result<Vec<(String, String, String)>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedTriple {
                path: path.to_owned(),
                line: idx + 1,
                found: fields.len(),
            });
        }
        out.push((
            fields[0].trim().to_owned(),
            fields[1].trim().to_owned(),
            fields[2].trim().to_owned(),
        ));
    }
    Ok(out)
}

/// Interns labels in first-appearance order (train, then valid, then test;
/// subject before object within a triple), encodes all splits, deduplicates
/// each, and augments the training set with reciprocals.
pub fn build_graph(
    train: &[(String, String, String)],
    valid: &[(String, String, String)],
    test: &[(String, String, String)],
) -> KnowledgeGraph {
    let mut vocab = Vocabulary::default();
    let encode = |vocab: &mut Vocabulary, raw: &[(String, String, String)]| -> Vec<Triple> {
        raw.iter()
            .map(|(s, r, o)| {
                let subject = vocab.intern_entity(s);
                let object = vocab.intern_entity(o);
                let relation = vocab.intern_relation(r);
                Triple {
                    subject,
                    relation,
                    object,
                }
            })
            .collect()
    };
    let train = encode(&mut vocab, train);
    let valid = encode(&mut vocab, valid);
    let test = encode(&mut vocab, test);
    let train = dedup_triples(train, "train");
    let valid = dedup_triples(valid, "valid");
    let test = dedup_triples(test, "test");
    let n_r = vocab.n_relations();
    let train_augmented = augment(&train, n_r);
    KnowledgeGraph {
        vocab,
        train,
        train_augmented,
        valid,
        test,
    }
}

/// Loads `train.txt`, `valid.txt`, and `test.txt` from a directory and builds
/// the encoded graph.
pub fn load_dataset(dir: &Path) -> Result<KnowledgeGraph> {
    let train = load_split(&dir.join("train.txt"))?;
    let valid = load_split(&dir.join("valid.txt"))?;
    let test = load_split(&dir.join("test.txt"))?;
    Ok(build_graph(&train, &valid, &test))
}

/// Generates a deterministic random graph: `n_triples` distinct statements
/// over the given vocabulary sizes, all assigned to the training split, plus
/// `n_holdout` of them copied into both valid and test. Every entity and
/// relation id is guaranteed to occur.
pub fn synthetic_graph(
    n_entities: usize,
    n_relations: usize,
    n_triples: usize,
    n_holdout: usize,
    seed: u64,
) -> KnowledgeGraph {
    assert!(n_entities >= 2 && n_relations >= 1);
    assert!(n_triples >= n_entities.max(n_relations));
    assert!(n_holdout <= n_triples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut train = Vec::with_capacity(n_triples);
    // Seed coverage: every entity appears as a subject, every relation is used.
    for s in 0..n_entities {
        let r = rng.random_range(0..n_relations);
        let o = rng.random_range(0..n_entities);
        let t = Triple::new(s, r, o);
        if seen.insert(t) {
            train.push(t);
        }
    }
    for r in 0..n_relations {
        loop {
            let t = Triple::new(
                rng.random_range(0..n_entities),
                r,
                rng.random_range(0..n_entities),
            );
            if seen.insert(t) {
                train.push(t);
                break;
            }
        }
    }
    while train.len() < n_triples {
        let t = Triple::new(
            rng.random_range(0..n_entities),
            rng.random_range(0..n_relations),
            rng.random_range(0..n_entities),
        );
        if seen.insert(t) {
            train.push(t);
        }
    }
    let mut holdout = train.clone();
    holdout.shuffle(&mut rng);
    holdout.truncate(n_holdout);
    KnowledgeGraph::from_id_triples(n_entities, n_relations, train, holdout.clone(), holdout)
}
