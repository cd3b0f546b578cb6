//! Forgetting diagnostics.
//!
//! Everything here consumes immutable trajectory logs and model snapshots:
//! per-relation F1 from confusion counts, performance degradation (drop from
//! a relation's best historical F1), forgetting rate (its mean over
//! subsequent tasks), equal-sized metric grouping, prototype cosine
//! similarity, bad-case scanning, and the retrieval test.

mod retrieval;

pub use retrieval::{
    retrieval_test, retrieval_with_model, PrecisionCutoff, RetrievalConfig, RetrievalOutcome,
};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, RelId, Relation};
use crate::model::ModelState;
use crate::trainer::TrajectoryLog;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("predictions ({predictions}) and gold ({gold}) differ in length")]
    LengthMismatch { predictions: usize, gold: usize },
    #[error("empty instance set")]
    EmptyInstances,
    #[error("similarity needs at least two relations")]
    SingleRelation,
    #[error("step {j} is not after the introduction task {intro}")]
    BadStep { j: usize, intro: usize },
    #[error("relation {0} is not in the similarity matrix")]
    UnknownRelation(RelId),
    #[error("only {have} distractor candidates, need {need}")]
    FewDistractors { have: usize, need: usize },
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One-vs-rest F1 per relation from multiclass confusion counts. Relations
/// that never occur in either slice are excluded; F1 is zero when precision
/// and recall are both undefined or zero.
pub fn per_relation_f1(
    predictions: &[RelId],
    gold: &[RelId],
) -> Result<BTreeMap<RelId, f64>, MetricsError> {
    if predictions.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            gold: gold.len(),
        });
    }
    let mut tp: BTreeMap<RelId, usize> = BTreeMap::new();
    let mut fp: BTreeMap<RelId, usize> = BTreeMap::new();
    let mut fn_: BTreeMap<RelId, usize> = BTreeMap::new();
    for (&p, &g) in predictions.iter().zip(gold) {
        if p == g {
            *tp.entry(p).or_default() += 1;
        } else {
            *fp.entry(p).or_default() += 1;
            *fn_.entry(g).or_default() += 1;
        }
    }
    let mut rels: BTreeSet<RelId> = BTreeSet::new();
    rels.extend(tp.keys());
    rels.extend(fp.keys());
    rels.extend(fn_.keys());
    Ok(rels
        .into_iter()
        .map(|r| {
            let tp = *tp.get(&r).unwrap_or(&0) as f64;
            let fp = *fp.get(&r).unwrap_or(&0) as f64;
            let fn_ = *fn_.get(&r).unwrap_or(&0) as f64;
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rc = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if p + rc > 0.0 {
                2.0 * p * rc / (p + rc)
            } else {
                0.0
            };
            (r, f1)
        })
        .collect())
}

/// One relation's F1 trajectory across the stream: `f1[0]` is the score
/// right after its introduction task, `f1[t]` after task `intro_task + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelTrajectory {
    pub rel_id: RelId,
    pub intro_task: usize,
    pub f1: Vec<f64>,
}

/// Extract per-relation trajectories from a run log.
pub fn rel_trajectories(log: &TrajectoryLog, relations: &[Relation]) -> Vec<RelTrajectory> {
    let id_of: BTreeMap<&str, RelId> = relations
        .iter()
        .map(|r| (r.name.as_str(), r.rel_id))
        .collect();
    let mut out: BTreeMap<RelId, RelTrajectory> = BTreeMap::new();
    for (step_idx, step) in log.steps.iter().enumerate() {
        for (name, &f1) in &step.per_relation_f1 {
            let Some(&rel_id) = id_of.get(name.as_str()) else {
                continue;
            };
            out.entry(rel_id)
                .or_insert_with(|| RelTrajectory {
                    rel_id,
                    intro_task: step_idx,
                    f1: Vec::new(),
                })
                .f1
                .push(f1);
        }
    }
    out.into_values().collect()
}

/// Drop of the relation's F1 at step `j` (absolute task index) below its best
/// score over steps `intro..j-1`. Negative when the score improved.
pub fn performance_degradation(traj: &RelTrajectory, j: usize) -> Result<f64, MetricsError> {
    if j <= traj.intro_task || j - traj.intro_task >= traj.f1.len() + 1 {
        return Err(MetricsError::BadStep {
            j,
            intro: traj.intro_task,
        });
    }
    let rel_j = j - traj.intro_task;
    if rel_j >= traj.f1.len() {
        return Err(MetricsError::BadStep {
            j,
            intro: traj.intro_task,
        });
    }
    let best = traj.f1[..rel_j]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best - traj.f1[rel_j])
}

/// Mean performance degradation over every task after the relation's
/// introduction, through step `k - 1`. Undefined (None) for relations
/// introduced at the final task.
pub fn forgetting_rate(traj: &RelTrajectory, k: usize) -> Option<f64> {
    if traj.intro_task + 1 >= k {
        return None;
    }
    let count = k - 1 - traj.intro_task;
    let sum: f64 = (traj.intro_task + 1..k)
        .map(|j| performance_degradation(traj, j).expect("trajectory covers i..k"))
        .sum();
    Some(sum / count as f64)
}

/// Full forgetting record for one relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FRRecord {
    pub rel_id: RelId,
    pub intro_task: usize,
    pub pd: Vec<f64>,
    pub fr: f64,
}

pub fn fr_record(traj: &RelTrajectory, k: usize) -> Option<FRRecord> {
    let fr = forgetting_rate(traj, k)?;
    let pd = (traj.intro_task + 1..k)
        .map(|j| performance_degradation(traj, j).expect("trajectory covers i..k"))
        .collect();
    Some(FRRecord {
        rel_id: traj.rel_id,
        intro_task: traj.intro_task,
        pd,
        fr,
    })
}

/// Sort ascending by value (ties by relation id) and cut into `g` contiguous
/// groups whose sizes differ by at most one, earlier groups taking the extra
/// element.
pub fn group_by_metric(values: &BTreeMap<RelId, f64>, g: usize) -> Vec<Vec<RelId>> {
    assert!(g >= 1, "need at least one group");
    let mut ordered: Vec<(RelId, f64)> = values.iter().map(|(r, v)| (*r, *v)).collect();
    ordered.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite metric").then(a.0.cmp(&b.0)));
    let n = ordered.len();
    let base = n / g;
    let rem = n % g;
    let mut out = Vec::with_capacity(g);
    let mut offset = 0;
    for i in 0..g {
        let size = base + usize::from(i < rem);
        out.push(
            ordered[offset..offset + size]
                .iter()
                .map(|(r, _)| *r)
                .collect(),
        );
        offset += size;
    }
    out
}

/// Mean encoding of a relation's instances.
pub fn prototype(model: &ModelState, instances: &[&Instance]) -> Result<Vec<f64>, MetricsError> {
    if instances.is_empty() {
        return Err(MetricsError::EmptyInstances);
    }
    let encodings = model.encode_batch(instances);
    let dim = encodings[0].len();
    let mut mean = vec![0.0; dim];
    for enc in &encodings {
        for (m, e) in mean.iter_mut().zip(enc) {
            *m += e;
        }
    }
    let inv = 1.0 / encodings.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// Where prototype similarities came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeSource {
    /// Supervised joint-trained encoder.
    TrainedEncoder,
    /// Freshly initialized encoder, before any task training; the stand-in
    /// for generic sentence embeddings. Similarity then reflects surface
    /// overlap (shared entity-type pools and templates) rather than learned
    /// class separation.
    VanillaEncoder,
    /// Analog links of a synthetic corpus.
    GroundTruthAnalogs,
}

/// Symmetric matrix of pairwise relation similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub rel_ids: Vec<RelId>,
    pub values: Vec<Vec<f64>>,
    pub source: PrototypeSource,
}

impl SimilarityMatrix {
    /// Pairwise cosine of prototype vectors, aligned with `rel_ids`.
    pub fn from_prototypes(
        rel_ids: Vec<RelId>,
        prototypes: &[Vec<f64>],
        source: PrototypeSource,
    ) -> Self {
        let n = rel_ids.len();
        let mut values = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i..n {
                let s = cosine(&prototypes[i], &prototypes[j]);
                values[i][j] = s;
                values[j][i] = s;
            }
        }
        SimilarityMatrix {
            rel_ids,
            values,
            source,
        }
    }

    /// Degenerate matrix from ground-truth analog links: 1 for mutual analog
    /// pairs (and the diagonal), 0 elsewhere. Useful for synthetic corpora
    /// where the confusable pairs are known by construction.
    pub fn ground_truth(relations: &[Relation]) -> Self {
        let rel_ids: Vec<RelId> = relations.iter().map(|r| r.rel_id).collect();
        let n = rel_ids.len();
        let mut values = vec![vec![0.0; n]; n];
        for (i, rel) in relations.iter().enumerate() {
            values[i][i] = 1.0;
            if let Some(other) = rel.analog_of {
                values[i][other as usize] = 1.0;
            }
        }
        SimilarityMatrix {
            rel_ids,
            values,
            source: PrototypeSource::GroundTruthAnalogs,
        }
    }

    fn pos(&self, rel: RelId) -> Result<usize, MetricsError> {
        self.rel_ids
            .iter()
            .position(|r| *r == rel)
            .ok_or(MetricsError::UnknownRelation(rel))
    }

    pub fn get(&self, a: RelId, b: RelId) -> Result<f64, MetricsError> {
        Ok(self.values[self.pos(a)?][self.pos(b)?])
    }

    /// Most similar other relations, sorted descending, ties by relation id.
    pub fn top_k(&self, rel: RelId, k: usize) -> Result<Vec<(RelId, f64)>, MetricsError> {
        if self.rel_ids.len() < 2 {
            return Err(MetricsError::SingleRelation);
        }
        let row = self.pos(rel)?;
        let mut others: Vec<(RelId, f64)> = self
            .rel_ids
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != row)
            .map(|(i, r)| (*r, self.values[row][i]))
            .collect();
        others.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then(a.0.cmp(&b.0)));
        others.truncate(k);
        Ok(others)
    }

    /// Largest off-diagonal similarity for the relation, with its argmax.
    pub fn max_similarity(&self, rel: RelId) -> Result<(f64, RelId), MetricsError> {
        let top = self.top_k(rel, 1)?;
        let (argmax, value) = top[0];
        Ok((value, argmax))
    }
}

/// One detected forgetting event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadCase {
    pub run: usize,
    pub rel_id: RelId,
    pub step: usize,
    pub drop: f64,
    /// The step's newly learned task contains one of the relation's top-k
    /// most similar relations.
    pub analog_present: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BadCaseReport {
    pub cases: Vec<BadCase>,
}

impl BadCaseReport {
    /// Total forgetting cases.
    pub fn n_cf(&self) -> usize {
        self.cases.len()
    }

    /// Cases accompanied by the arrival of a top-k similar relation.
    pub fn n_sim(&self) -> usize {
        self.cases.iter().filter(|c| c.analog_present).count()
    }
}

/// Scan run logs for steps where a relation's F1 falls more than `drop`
/// below its running maximum, and mark the cases where the newly learned
/// task contains one of that relation's `topk` most similar relations.
pub fn bad_case_scan(
    logs: &[TrajectoryLog],
    relations: &[Relation],
    sim: &SimilarityMatrix,
    drop: f64,
    topk: usize,
) -> Result<BadCaseReport, MetricsError> {
    let id_of: BTreeMap<&str, RelId> = relations
        .iter()
        .map(|r| (r.name.as_str(), r.rel_id))
        .collect();
    let mut cases = Vec::new();
    for (run, log) in logs.iter().enumerate() {
        // Relations newly introduced at every step.
        let mut new_at_step: Vec<BTreeSet<RelId>> = Vec::with_capacity(log.steps.len());
        let mut prev: BTreeSet<RelId> = BTreeSet::new();
        for step in &log.steps {
            let seen: BTreeSet<RelId> = step
                .seen_relations
                .iter()
                .filter_map(|n| id_of.get(n.as_str()).copied())
                .collect();
            new_at_step.push(seen.difference(&prev).copied().collect());
            prev = seen;
        }
        for traj in rel_trajectories(log, relations) {
            let mut running_max = traj.f1[0];
            for (t, &f1) in traj.f1.iter().enumerate().skip(1) {
                let step = traj.intro_task + t;
                let fall = running_max - f1;
                if fall > drop {
                    let top = sim.top_k(traj.rel_id, topk)?;
                    let analog_present = top
                        .iter()
                        .any(|(other, _)| new_at_step[step].contains(other));
                    cases.push(BadCase {
                        run,
                        rel_id: traj.rel_id,
                        step,
                        drop: fall,
                        analog_present,
                    });
                }
                running_max = running_max.max(f1);
            }
        }
    }
    Ok(BadCaseReport { cases })
}
