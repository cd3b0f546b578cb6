//! Data model and corpus handling.
//!
//! A [`Dataset`] is a validated collection of relations and entity-annotated
//! instances together with a train/validation/test split. Datasets come from
//! either the JSONL loader ([`jsonl`]) or the synthetic generator ([`synth`]),
//! and are carved into class-incremental [`TaskStream`]s by [`split_tasks`].

mod jsonl;
mod synth;

pub use jsonl::{load_dataset, load_jsonl, save_dataset};
pub use synth::{entity_type_of, generate_synthetic, AnalogMode, SynthConfig};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seeding::{self, ns};

/// Dense 0-based relation identifier. Synthetic augmentation classes share
/// this space, carved out above the dataset's maximum real id.
pub type RelId = u32;

/// Reserved entity-marker tokens. They occupy the first vocabulary slots and
/// must never appear as corpus tokens.
pub const MARKERS: [&str; 4] = ["[E11]", "[E12]", "[E21]", "[E22]"];

/// Token-count cap applied during validation.
pub const DEFAULT_TOKEN_LIMIT: usize = 512;

/// Half-open token-index interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn disjoint(&self, other: &Span) -> bool {
        self.end <= other.start || other.end <= self.start
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end)
    }
}

/// A relation label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub rel_id: RelId,
    pub name: String,
    pub symmetric: bool,
    /// Ground-truth analogous counterpart, synthetic corpora only. Mutual
    /// when present.
    pub analog_of: Option<RelId>,
}

/// A tokenized sentence with head/tail entity spans and a relation label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub head_span: Span,
    pub tail_span: Span,
    pub relation: RelId,
}

/// Split assignment of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// A validated corpus: relations, instances, and per-instance splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub relations: Vec<Relation>,
    pub instances: Vec<Instance>,
    pub splits: BTreeMap<String, Split>,
}

/// One task of a class-incremental stream: a set of new relations with their
/// train and test instances.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub relation_ids: BTreeSet<RelId>,
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
}

/// An ordered sequence of disjoint tasks covering the dataset's relations.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// A single invariant violation found by [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTokens,
    TokenLimitExceeded { len: usize, limit: usize },
    EmptySpan { which: &'static str, span: Span },
    OutOfBounds { which: &'static str, span: Span, len: usize },
    OverlappingSpans { head: Span, tail: Span },
    ReservedMarkerToken { position: usize, token: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTokens => write!(f, "token list is empty"),
            Violation::TokenLimitExceeded { len, limit } => {
                write!(f, "{len} tokens exceed the limit of {limit}")
            }
            Violation::EmptySpan { which, span } => write!(f, "{which} span {span} is empty"),
            Violation::OutOfBounds { which, span, len } => {
                write!(f, "{which} span {span} exceeds the {len}-token sentence")
            }
            Violation::OverlappingSpans { head, tail } => {
                write!(f, "head span {head} overlaps tail span {tail}")
            }
            Violation::ReservedMarkerToken { position, token } => {
                write!(f, "reserved marker token {token:?} at position {position}")
            }
        }
    }
}

/// Errors from corpus loading, validation, and task construction.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("instance {instance_id} is invalid: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidInstance {
        instance_id: String,
        violations: Vec<Violation>,
    },
    #[error("unknown relation name {name:?} (line {line})")]
    UnknownRelation { name: String, line: usize },
    #[error("dataset has no instances")]
    EmptyDataset,
    #[error("dataset is inconsistent: {0}")]
    Inconsistent(String),
    #[error("relation {name} has {count} instances, fewer than the {parts} split parts")]
    SplitTooSmall {
        name: String,
        count: usize,
        parts: usize,
    },
    #[error("invalid task count {k} for {n_relations} relations")]
    BadTaskCount { k: usize, n_relations: usize },
    #[error("invalid synthetic config: {0}")]
    BadSynthConfig(String),
}

/// Check every instance invariant, returning all violations rather than the
/// first. An empty vector means the instance is valid.
pub fn validate_instance(inst: &Instance, n_tokens_limit: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    let len = inst.tokens.len();
    if len == 0 {
        out.push(Violation::EmptyTokens);
    }
    if len > n_tokens_limit {
        out.push(Violation::TokenLimitExceeded {
            len,
            limit: n_tokens_limit,
        });
    }
    for (which, span) in [("head", inst.head_span), ("tail", inst.tail_span)] {
        if span.is_empty() {
            out.push(Violation::EmptySpan { which, span });
        } else if span.end > len {
            out.push(Violation::OutOfBounds { which, span, len });
        }
    }
    if !inst.head_span.is_empty()
        && !inst.tail_span.is_empty()
        && !inst.head_span.disjoint(&inst.tail_span)
    {
        out.push(Violation::OverlappingSpans {
            head: inst.head_span,
            tail: inst.tail_span,
        });
    }
    // The vocabulary reserves the marker strings; a corpus token colliding
    // with one would alias its embedding.
    for (position, token) in inst.tokens.iter().enumerate() {
        if MARKERS.contains(&token.as_str()) {
            out.push(Violation::ReservedMarkerToken {
                position,
                token: token.clone(),
            });
        }
    }
    out
}

impl Dataset {
    pub fn relation_by_name(&self, name: &str) -> Option<&Relation> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn relation(&self, id: RelId) -> &Relation {
        &self.relations[id as usize]
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    /// Train instances of one relation, in file order.
    pub fn train_of(&self, rel: RelId) -> Vec<&Instance> {
        self.of_split(rel, Split::Train)
    }

    pub fn test_of(&self, rel: RelId) -> Vec<&Instance> {
        self.of_split(rel, Split::Test)
    }

    fn of_split(&self, rel: RelId, split: Split) -> Vec<&Instance> {
        self.instances
            .iter()
            .filter(|i| i.relation == rel && self.splits.get(&i.instance_id) == Some(&split))
            .collect()
    }

    /// Verify every dataset invariant. Called by the loader and the
    /// generator; also useful after hand-editing corpus files.
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.instances.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        for (i, rel) in self.relations.iter().enumerate() {
            if rel.rel_id as usize != i {
                return Err(CorpusError::Inconsistent(format!(
                    "relation ids are not dense: {} at position {}",
                    rel.rel_id, i
                )));
            }
            if let Some(other) = rel.analog_of {
                let partner = self.relations.get(other as usize).ok_or_else(|| {
                    CorpusError::Inconsistent(format!(
                        "relation {} points at missing analog {}",
                        rel.name, other
                    ))
                })?;
                if partner.analog_of != Some(rel.rel_id) {
                    return Err(CorpusError::Inconsistent(format!(
                        "analog link {} -> {} is not mutual",
                        rel.name, partner.name
                    )));
                }
            }
        }
        let mut names = BTreeSet::new();
        for rel in &self.relations {
            if !names.insert(rel.name.as_str()) {
                return Err(CorpusError::Inconsistent(format!(
                    "duplicate relation name {:?}",
                    rel.name
                )));
            }
        }
        let mut ids = BTreeSet::new();
        let mut per_rel: HashMap<RelId, (usize, usize)> = HashMap::new();
        for inst in &self.instances {
            if !ids.insert(inst.instance_id.as_str()) {
                return Err(CorpusError::Inconsistent(format!(
                    "duplicate instance id {:?}",
                    inst.instance_id
                )));
            }
            if inst.relation as usize >= self.relations.len() {
                return Err(CorpusError::Inconsistent(format!(
                    "instance {} references unknown relation id {}",
                    inst.instance_id, inst.relation
                )));
            }
            let violations = validate_instance(inst, DEFAULT_TOKEN_LIMIT);
            if !violations.is_empty() {
                return Err(CorpusError::InvalidInstance {
                    instance_id: inst.instance_id.clone(),
                    violations,
                });
            }
            let split = self.splits.get(&inst.instance_id).ok_or_else(|| {
                CorpusError::Inconsistent(format!(
                    "instance {} has no split assignment",
                    inst.instance_id
                ))
            })?;
            let counts = per_rel.entry(inst.relation).or_default();
            match split {
                Split::Train => counts.0 += 1,
                Split::Test => counts.1 += 1,
                Split::Validation => {}
            }
        }
        for rel in &self.relations {
            let (train, test) = per_rel.get(&rel.rel_id).copied().unwrap_or((0, 0));
            if train == 0 || test == 0 {
                return Err(CorpusError::Inconsistent(format!(
                    "relation {} needs at least one train and one test instance (has {train}/{test})",
                    rel.name
                )));
            }
        }
        Ok(())
    }
}

/// Assign splits per relation at the given ratio, deterministically in
/// `seed`. Counts follow the largest-remainder rule over the exact
/// proportions, so e.g. 5 instances at 3:1:1 become 3/1/1 and 700 become
/// 420/140/140. Every relation needs at least `ratio.0 + ratio.1 + ratio.2`
/// instances, which guarantees each split is nonempty.
pub fn assign_splits(
    mut ds: Dataset,
    ratio: (u32, u32, u32),
    seed: u64,
) -> Result<Dataset, CorpusError> {
    if ratio.0 == 0 || ratio.1 == 0 || ratio.2 == 0 {
        return Err(CorpusError::Inconsistent(
            "split ratio components must be positive".into(),
        ));
    }
    let parts = (ratio.0 + ratio.1 + ratio.2) as usize;
    let mut splits = BTreeMap::new();
    for rel in &ds.relations {
        let mut ids: Vec<&str> = ds
            .instances
            .iter()
            .filter(|i| i.relation == rel.rel_id)
            .map(|i| i.instance_id.as_str())
            .collect();
        let n = ids.len();
        if n < parts {
            return Err(CorpusError::SplitTooSmall {
                name: rel.name.clone(),
                count: n,
                parts,
            });
        }
        let counts = largest_remainder(n, &[ratio.0 as usize, ratio.1 as usize, ratio.2 as usize]);
        let mut rng = seeding::rng(seed, &[ns::SPLIT_ASSIGN, rel.rel_id as u64]);
        ids.shuffle(&mut rng);
        let mut offset = 0;
        for (count, split) in counts
            .iter()
            .zip([Split::Train, Split::Validation, Split::Test])
        {
            for id in &ids[offset..offset + count] {
                splits.insert(id.to_string(), split);
            }
            offset += count;
        }
    }
    ds.splits = splits;
    ds.validate()?;
    Ok(ds)
}

/// Apportion `n` into parts proportional to `weights`, leftover units going
/// to the largest fractional remainders (ties to earlier parts).
fn largest_remainder(n: usize, weights: &[usize]) -> Vec<usize> {
    let total: usize = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|w| n * w / total).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(n * weights[i] % total), i));
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Shuffle the dataset's relations with a seeded PRNG and deal them
/// round-robin into `k` tasks, so task sizes differ by at most one. Each
/// task's train/test sets come from the dataset's split assignment.
pub fn split_tasks(ds: &Dataset, k: usize, seed: u64) -> Result<TaskStream, CorpusError> {
    let n = ds.relations.len();
    if k == 0 || k > n {
        return Err(CorpusError::BadTaskCount { k, n_relations: n });
    }
    let mut rel_ids: Vec<RelId> = ds.relations.iter().map(|r| r.rel_id).collect();
    let mut rng = seeding::rng(seed, &[ns::TASK_SPLIT]);
    rel_ids.shuffle(&mut rng);

    let mut tasks: Vec<Task> = (0..k)
        .map(|_| Task {
            relation_ids: BTreeSet::new(),
            train: Vec::new(),
            test: Vec::new(),
        })
        .collect();
    for (i, rel) in rel_ids.iter().enumerate() {
        tasks[i % k].relation_ids.insert(*rel);
    }
    for inst in &ds.instances {
        let task = tasks
            .iter_mut()
            .find(|t| t.relation_ids.contains(&inst.relation))
            .expect("every relation is dealt to a task");
        match ds.splits.get(&inst.instance_id) {
            Some(Split::Train) => task.train.push(inst.clone()),
            Some(Split::Test) => task.test.push(inst.clone()),
            _ => {}
        }
    }
    Ok(TaskStream { tasks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth::{generate_synthetic, SynthConfig};

    fn inst(id: &str, tokens: &[&str], head: (usize, usize), tail: (usize, usize)) -> Instance {
        Instance {
            instance_id: id.into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            head_span: Span::new(head.0, head.1),
            tail_span: Span::new(tail.0, tail.1),
            relation: 0,
        }
    }

    #[test]
    fn valid_instance_passes() {
        let i = inst("a", &["x", "loves", "y"], (0, 1), (2, 3));
        assert!(validate_instance(&i, DEFAULT_TOKEN_LIMIT).is_empty());
    }

    #[test]
    fn empty_span_is_flagged() {
        let i = inst("a", &["a", "b", "c", "d", "e", "f"], (5, 5), (0, 1));
        let v = validate_instance(&i, DEFAULT_TOKEN_LIMIT);
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::EmptySpan { which: "head", .. })));
    }

    #[test]
    fn out_of_bounds_tail_is_flagged() {
        let i = inst("a", &["a", "b", "c"], (0, 1), (2, 4));
        let v = validate_instance(&i, DEFAULT_TOKEN_LIMIT);
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::OutOfBounds { which: "tail", .. })));
    }

    #[test]
    fn overlap_and_marker_are_flagged_together() {
        let i = inst("a", &["[E11]", "b", "c"], (0, 2), (1, 3));
        let v = validate_instance(&i, DEFAULT_TOKEN_LIMIT);
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::OverlappingSpans { .. })));
        assert!(v
            .iter()
            .any(|v| matches!(v, Violation::ReservedMarkerToken { .. })));
    }

    #[test]
    fn largest_remainder_matches_hand_counts() {
        assert_eq!(largest_remainder(5, &[3, 1, 1]), vec![3, 1, 1]);
        assert_eq!(largest_remainder(700, &[3, 1, 1]), vec![420, 140, 140]);
        assert_eq!(largest_remainder(6, &[3, 1, 1]), vec![4, 1, 1]);
        assert_eq!(largest_remainder(7, &[3, 1, 1]), vec![4, 2, 1]);
    }

    fn tiny_synth(n_relations: u32, per_rel: u32, seed: u64) -> Dataset {
        generate_synthetic(&SynthConfig {
            n_relations,
            n_analog_pairs: 0,
            instances_per_relation: per_rel,
            shortcut_strength: 1.0,
            entity_type_vocab_size: 4,
            template_length: (4, 6),
            symmetric_fraction: 0.0,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn split_tasks_round_robin_sizes() {
        let ds = tiny_synth(7, 10, 3);
        let stream = split_tasks(&ds, 3, 11).unwrap();
        let mut sizes: Vec<usize> = stream.tasks.iter().map(|t| t.relation_ids.len()).collect();
        assert_eq!(sizes.remove(0), 3);
        assert_eq!(sizes, vec![2, 2]);
    }

    #[test]
    fn split_tasks_is_deterministic_and_partitions() {
        let ds = tiny_synth(8, 10, 3);
        let a = split_tasks(&ds, 4, 99).unwrap();
        let b = split_tasks(&ds, 4, 99).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<RelId> = a
            .tasks
            .iter()
            .flat_map(|t| t.relation_ids.iter().copied())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn split_tasks_rejects_bad_k() {
        let ds = tiny_synth(4, 10, 3);
        assert!(matches!(
            split_tasks(&ds, 5, 0),
            Err(CorpusError::BadTaskCount { .. })
        ));
        assert!(matches!(
            split_tasks(&ds, 0, 0),
            Err(CorpusError::BadTaskCount { .. })
        ));
    }

    #[test]
    fn assign_splits_stratified_counts() {
        let ds = tiny_synth(3, 5, 7);
        let ds = assign_splits(ds, (3, 1, 1), 5).unwrap();
        for rel in 0..3 {
            assert_eq!(ds.train_of(rel).len(), 3);
            assert_eq!(ds.test_of(rel).len(), 1);
        }
    }

    #[test]
    fn assign_splits_rejects_tiny_relations() {
        let mut ds = tiny_synth(2, 6, 7);
        // Shrink relation 1 to two instances.
        ds.instances
            .retain(|i| i.relation == 0 || i.instance_id.ends_with("000") || i.instance_id.ends_with("001"));
        let err = assign_splits(ds, (3, 1, 1), 5).unwrap_err();
        assert!(matches!(err, CorpusError::SplitTooSmall { count: 2, .. }));
    }
}
