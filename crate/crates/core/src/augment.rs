//! Adversarial class augmentation.
//!
//! For a task with `N` new relations this builds up to `N + floor(N/2)` hard
//! negative classes from the task's own training data:
//!
//! * one *hybrid* class per random relation pair, whose instances concatenate
//!   a head-bearing span from one relation's instance with a tail-bearing
//!   span from the other's;
//! * one *reversed* class per asymmetric relation, whose instances swap the
//!   head and tail entity roles.
//!
//! Symmetric relations are never reversed: swapping their entities preserves
//! the label, so the result would not be a negative class.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, RelId, Relation, Task};
use crate::seeding::{self, ns};

/// What an augmented class was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentKind {
    Hybrid(RelId, RelId),
    Reversed(RelId),
}

/// A synthetic negative class for one task's initial training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedClass {
    /// Classifier id, allocated above all real relation ids and never
    /// persisted into evaluation outputs.
    pub synth_id: RelId,
    pub kind: AugmentKind,
    pub instances: Vec<Instance>,
}

/// Total `rel_id -> symmetric` map for a dataset; absent ids default to
/// asymmetric.
#[derive(Debug, Clone, Default)]
pub struct SymmetricRegistry {
    symmetric: std::collections::BTreeSet<RelId>,
}

impl SymmetricRegistry {
    pub fn from_relations(relations: &[Relation]) -> Self {
        SymmetricRegistry {
            symmetric: relations
                .iter()
                .filter(|r| r.symmetric)
                .map(|r| r.rel_id)
                .collect(),
        }
    }

    pub fn is_symmetric(&self, rel: RelId) -> bool {
        self.symmetric.contains(&rel)
    }
}

/// Randomly pair the task's relations: exactly `floor(N/2)` disjoint pairs,
/// leaving one relation unpaired when `N` is odd. Deterministic in `seed`.
pub fn pair_relations(rel_ids: &[RelId], seed: u64) -> Vec<(RelId, RelId)> {
    let mut ids: Vec<RelId> = rel_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = seeding::rng(seed, &[ns::PAIRING]);
    ids.shuffle(&mut rng);
    ids.chunks_exact(2).map(|c| (c[0], c[1])).collect()
}

/// The contiguous piece of `x` that contains the head entity and excludes
/// the tail entity, as (range, head span rebased into it).
fn head_side_span(x: &Instance) -> (std::ops::Range<usize>, crate::corpus::Span) {
    let head = x.head_span;
    let tail = x.tail_span;
    if head.start < tail.start {
        // Head first: keep everything before the tail.
        (0..tail.start, head)
    } else {
        // Tail first: keep everything after it.
        (
            tail.end..x.tokens.len(),
            crate::corpus::Span::new(head.start - tail.end, head.end - tail.end),
        )
    }
}

/// Mirror of [`head_side_span`] for the tail entity.
fn tail_side_span(x: &Instance) -> (std::ops::Range<usize>, crate::corpus::Span) {
    let head = x.head_span;
    let tail = x.tail_span;
    if tail.start < head.start {
        (0..head.start, tail)
    } else {
        (
            head.end..x.tokens.len(),
            crate::corpus::Span::new(tail.start - head.end, tail.end - head.end),
        )
    }
}

/// Concatenate the head-bearing span of `x_i` with the tail-bearing span of
/// `x_j` into a hybrid instance labeled `synth_id`.
pub fn hybrid_instance(x_i: &Instance, x_j: &Instance, synth_id: RelId) -> Instance {
    let (range_i, head) = head_side_span(x_i);
    let (range_j, tail) = tail_side_span(x_j);
    assert!(!range_i.is_empty() && !range_j.is_empty(), "span extraction from valid instances is never empty");
    let offset = range_i.len();
    let mut tokens = Vec::with_capacity(offset + range_j.len());
    tokens.extend_from_slice(&x_i.tokens[range_i]);
    tokens.extend_from_slice(&x_j.tokens[range_j]);
    Instance {
        instance_id: format!("hyb({},{})", x_i.instance_id, x_j.instance_id),
        tokens,
        head_span: head,
        tail_span: crate::corpus::Span::new(tail.start + offset, tail.end + offset),
        relation: synth_id,
    }
}

/// Swap head and tail entity roles; tokens are untouched.
pub fn reversed_instance(x: &Instance, synth_id: RelId) -> Instance {
    Instance {
        instance_id: format!("rev({})", x.instance_id),
        tokens: x.tokens.clone(),
        head_span: x.tail_span,
        tail_span: x.head_span,
        relation: synth_id,
    }
}

/// Build the task's augmented classes: one hybrid class per relation pair
/// (instances pair up seeded shuffles of the two train sets, one-to-one, so
/// the class holds `min(|a|,|b|)` instances) and one reversed class per
/// asymmetric relation. `synth_base` is the first id of the synthetic
/// namespace — callers pass the dataset's relation count so synthetic ids can
/// never collide with a real relation registered from any task.
pub fn build_augmented_classes(
    task: &Task,
    registry: &SymmetricRegistry,
    synth_base: RelId,
    seed: u64,
) -> Vec<AugmentedClass> {
    let rel_ids: Vec<RelId> = task.relation_ids.iter().copied().collect();
    let max_real = rel_ids.iter().copied().max().unwrap_or(0);
    assert!(
        synth_base > max_real,
        "synthetic id namespace must start above all real relation ids"
    );
    let mut next_id = synth_base;
    let mut classes = Vec::new();

    let train_of = |rel: RelId| -> Vec<&Instance> {
        task.train.iter().filter(|i| i.relation == rel).collect()
    };

    for (a, b) in pair_relations(&rel_ids, seed) {
        let mut insts_a = train_of(a);
        let mut insts_b = train_of(b);
        let mut rng_a = seeding::rng(seed, &[ns::HYBRID_SHUFFLE, a as u64]);
        let mut rng_b = seeding::rng(seed, &[ns::HYBRID_SHUFFLE, b as u64]);
        insts_a.shuffle(&mut rng_a);
        insts_b.shuffle(&mut rng_b);
        let synth_id = next_id;
        next_id += 1;
        let instances = insts_a
            .iter()
            .zip(insts_b.iter())
            .map(|(xi, xj)| hybrid_instance(xi, xj, synth_id))
            .collect();
        classes.push(AugmentedClass {
            synth_id,
            kind: AugmentKind::Hybrid(a, b),
            instances,
        });
    }

    for rel in &rel_ids {
        if registry.is_symmetric(*rel) {
            continue;
        }
        let synth_id = next_id;
        next_id += 1;
        let instances = train_of(*rel)
            .iter()
            .map(|x| reversed_instance(x, synth_id))
            .collect();
        classes.push(AugmentedClass {
            synth_id,
            kind: AugmentKind::Reversed(*rel),
            instances,
        });
    }

    classes
}

/// Debug export of augmented classes in the corpus JSONL schema, with
/// relation names `HYB:<a>+<b>` and `REV:<r>`.
pub fn export_jsonl<W: Write>(
    classes: &[AugmentedClass],
    relations: &[Relation],
    mut out: W,
) -> std::io::Result<()> {
    let name = |id: RelId| relations[id as usize].name.clone();
    for class in classes {
        let rel_name = match class.kind {
            AugmentKind::Hybrid(a, b) => format!("HYB:{}+{}", name(a), name(b)),
            AugmentKind::Reversed(r) => format!("REV:{}", name(r)),
        };
        for inst in &class.instances {
            let line = serde_json::json!({
                "id": inst.instance_id,
                "tokens": inst.tokens,
                "head": [inst.head_span.start, inst.head_span.end],
                "tail": [inst.tail_span.start, inst.tail_span.end],
                "relation": rel_name,
            });
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}
