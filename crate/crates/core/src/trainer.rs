//! Two-stage continual training.
//!
//! Each task runs through the same loop: expand the classifier for the new
//! relations, train on the task's own data (optionally joined by adversarial
//! augmented classes, whose class nodes are removed again at the end of the
//! stage), select replay instances into the memory bank, then replay the
//! whole bank to restore earlier relations. After every task the model is
//! evaluated on the union of all seen test sets.
//!
//! Training itself is single-threaded and bitwise deterministic per seed;
//! batch evaluation and encoding fan out through [`crate::exec`].

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::augment::{build_augmented_classes, AugmentKind, SymmetricRegistry};
use crate::corpus::{Dataset, Instance, RelId, Relation, Task, TaskStream};
use crate::exec;
use crate::metrics::per_relation_f1;
use crate::model::{
    expand_classes, forward, loss_and_grads, remove_classes, sgd_step, ModelError, ModelState,
    Vocab,
};
use crate::seeding::{self, ns};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("relation {0} has no training instances")]
    EmptyRelation(RelId),
    #[error("memory for relation {0} is frozen once written")]
    MemoryFrozen(RelId),
    #[error("task stream is empty")]
    EmptyStream,
    #[error("memory instance for relation {0} is not a registered real relation")]
    BadMemoryLabel(RelId),
}

/// Which augmentation arms to disable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablate {
    #[default]
    None,
    NoHybrid,
    NoReversed,
}

/// Training hyperparameters. Defaults give minutes-scale runs on the bundled
/// synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_initial: u32,
    pub epochs_replay: u32,
    pub lr: f64,
    pub batch_size: usize,
    /// Replay instances kept per relation.
    pub memory_size: usize,
    pub aca_enabled: bool,
    pub ablate: Ablate,
    pub seed: u64,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
    /// Momentum and weight decay are available but off by default.
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_initial: 20,
            epochs_replay: 10,
            lr: 0.1,
            batch_size: 16,
            memory_size: 10,
            aca_enabled: false,
            ablate: Ablate::None,
            seed: 0,
            embed_dim: crate::model::DEFAULT_EMBED_DIM,
            hidden_dim: crate::model::DEFAULT_HIDDEN_DIM,
            init_scale: crate::model::DEFAULT_INIT_SCALE,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

/// Per-relation bounded replay store. Entries are frozen once a relation's
/// task has been processed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemoryBank {
    entries: BTreeMap<RelId, Vec<Instance>>,
}

impl MemoryBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, rel: RelId) -> bool {
        self.entries.contains_key(&rel)
    }

    pub fn get(&self, rel: RelId) -> Option<&[Instance]> {
        self.entries.get(&rel).map(|v| v.as_slice())
    }

    pub fn relations(&self) -> impl Iterator<Item = RelId> + '_ {
        self.entries.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All stored instances in relation-id order.
    pub fn all_instances(&self) -> Vec<&Instance> {
        self.entries.values().flatten().collect()
    }
}

/// One evaluation snapshot after finishing a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub task_index: usize,
    /// Accuracy over the union of all seen test sets.
    pub accuracy: f64,
    pub per_relation_f1: BTreeMap<String, f64>,
    pub seen_relations: Vec<String>,
    pub wall_ms: u64,
}

/// F1/accuracy trajectory of one full continual run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub config: TrainConfig,
    /// Seed of the task permutation this run was built from; filled by the
    /// experiment harness.
    #[serde(default)]
    pub stream_seed: u64,
    /// Arm label ("baseline", "aca", ...); filled by the experiment harness.
    #[serde(default)]
    pub arm: String,
    pub steps: Vec<StepRecord>,
}

/// Momentum state for one training phase. Plain SGD when momentum is zero.
struct SgdState {
    vel_embedding: BTreeMap<usize, Vec<f64>>,
    vel_hidden_w: Vec<Vec<f64>>,
    vel_hidden_b: Vec<f64>,
    vel_head_w: Vec<Vec<f64>>,
    vel_head_b: Vec<f64>,
}

fn apply_update(
    model: &mut ModelState,
    grads: &mut crate::model::Gradients,
    cfg: &TrainConfig,
    state: &mut Option<SgdState>,
) -> Result<(), TrainError> {
    if cfg.weight_decay > 0.0 {
        let wd = cfg.weight_decay;
        for (row, g) in grads.embedding.iter_mut() {
            for (gi, wi) in g.iter_mut().zip(&model.encoder.embedding[*row]) {
                *gi += wd * wi;
            }
        }
        for (g_row, w_row) in grads.hidden_w.iter_mut().zip(&model.encoder.hidden_w) {
            for (gi, wi) in g_row.iter_mut().zip(w_row) {
                *gi += wd * wi;
            }
        }
    }
    if cfg.momentum > 0.0 {
        let m = cfg.momentum;
        let st = state.get_or_insert_with(|| SgdState {
            vel_embedding: BTreeMap::new(),
            vel_hidden_w: vec![vec![0.0; grads.hidden_w[0].len()]; grads.hidden_w.len()],
            vel_hidden_b: vec![0.0; grads.hidden_b.len()],
            vel_head_w: Vec::new(),
            vel_head_b: Vec::new(),
        });
        // The head can grow between phases; size the velocity lazily.
        if st.vel_head_w.len() != grads.head_w.len() {
            st.vel_head_w = vec![vec![0.0; model.encoder.hidden_dim]; grads.head_w.len()];
            st.vel_head_b = vec![0.0; grads.head_b.len()];
        }
        for (row, g) in grads.embedding.iter_mut() {
            let v = st
                .vel_embedding
                .entry(*row)
                .or_insert_with(|| vec![0.0; g.len()]);
            for (vi, gi) in v.iter_mut().zip(g.iter_mut()) {
                *vi = m * *vi + *gi;
                *gi = *vi;
            }
        }
        for (vel, grad) in [
            (&mut st.vel_hidden_w, &mut grads.hidden_w),
            (&mut st.vel_head_w, &mut grads.head_w),
        ] {
            for (v_row, g_row) in vel.iter_mut().zip(grad.iter_mut()) {
                for (vi, gi) in v_row.iter_mut().zip(g_row.iter_mut()) {
                    *vi = m * *vi + *gi;
                    *gi = *vi;
                }
            }
        }
        for (vel, grad) in [
            (&mut st.vel_hidden_b, &mut grads.hidden_b),
            (&mut st.vel_head_b, &mut grads.head_b),
        ] {
            for (vi, gi) in vel.iter_mut().zip(grad.iter_mut()) {
                *vi = m * *vi + *gi;
                *gi = *vi;
            }
        }
    }
    sgd_step(model, grads, cfg.lr)?;
    Ok(())
}

/// Seeded-shuffle mini-batch training over `data` for `epochs` epochs.
fn train_epochs(
    mut model: ModelState,
    data: &[&Instance],
    epochs: u32,
    cfg: &TrainConfig,
    stage: u64,
    task_index: usize,
) -> Result<ModelState, TrainError> {
    let mut opt_state = None;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..epochs {
        let mut rng = seeding::rng(
            cfg.seed,
            &[ns::EPOCH_SHUFFLE, stage, task_index as u64, epoch as u64],
        );
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| data[i]).collect();
            let (_, mut grads) = loss_and_grads(&model, &batch)?;
            apply_update(&mut model, &mut grads, cfg, &mut opt_state)?;
        }
    }
    Ok(model)
}

/// Stage one: expand the head for the task's relations, optionally build and
/// register augmented classes, train on the union, then drop every synthetic
/// class node. `synth_base` must clear all real relation ids; pass the
/// dataset's relation count.
pub fn initial_training(
    model: ModelState,
    task: &Task,
    cfg: &TrainConfig,
    registry: &SymmetricRegistry,
    synth_base: RelId,
    task_index: usize,
) -> Result<ModelState, TrainError> {
    let real_ids: Vec<RelId> = task.relation_ids.iter().copied().collect();
    let mut model = model;
    model.head = expand_classes(
        &model.head,
        &real_ids,
        cfg.init_scale,
        seeding::derive(cfg.seed, &[ns::EXPAND_REAL, task_index as u64]),
    )?;

    let augmented = if cfg.aca_enabled {
        let classes = build_augmented_classes(
            task,
            registry,
            synth_base,
            seeding::derive(cfg.seed, &[ns::AUGMENT, task_index as u64]),
        );
        classes
            .into_iter()
            .filter(|c| match (cfg.ablate, c.kind) {
                (Ablate::NoHybrid, AugmentKind::Hybrid(..)) => false,
                (Ablate::NoReversed, AugmentKind::Reversed(..)) => false,
                _ => true,
            })
            .collect()
    } else {
        Vec::new()
    };

    let synth_ids: Vec<RelId> = augmented.iter().map(|c| c.synth_id).collect();
    model.head = expand_classes(
        &model.head,
        &synth_ids,
        cfg.init_scale,
        seeding::derive(cfg.seed, &[ns::EXPAND_SYNTH, task_index as u64]),
    )?;

    let mut data: Vec<&Instance> = task.train.iter().collect();
    for class in &augmented {
        data.extend(class.instances.iter());
    }
    model = train_epochs(model, &data, cfg.epochs_initial, cfg, 0, task_index)?;

    model.head = remove_classes(&model.head, &synth_ids)?;
    Ok(model)
}

/// Select up to `b` replay instances per new relation: the ones whose
/// encodings lie nearest (cosine) to the relation's mean encoding, ties
/// broken by instance id. Entries already in the bank are frozen.
pub fn update_memory(
    memory: &mut MemoryBank,
    task: &Task,
    model: &ModelState,
    b: usize,
) -> Result<(), TrainError> {
    for &rel in &task.relation_ids {
        if memory.contains(rel) {
            return Err(TrainError::MemoryFrozen(rel));
        }
        let insts: Vec<&Instance> = task.train.iter().filter(|i| i.relation == rel).collect();
        if insts.is_empty() {
            return Err(TrainError::EmptyRelation(rel));
        }
        let encodings = model.encode_batch(&insts);
        let dim = encodings[0].len();
        let mut proto = vec![0.0; dim];
        for enc in &encodings {
            for (p, e) in proto.iter_mut().zip(enc) {
                *p += e;
            }
        }
        let inv = 1.0 / encodings.len() as f64;
        proto.iter_mut().for_each(|p| *p *= inv);

        let mut ranked: Vec<(usize, f64)> = encodings
            .iter()
            .enumerate()
            .map(|(i, enc)| (i, crate::metrics::cosine(&proto, enc)))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite cosine")
                .then_with(|| insts[a.0].instance_id.cmp(&insts[b.0].instance_id))
        });
        let selected: Vec<Instance> = ranked
            .iter()
            .take(b)
            .map(|(i, _)| insts[*i].clone())
            .collect();
        memory.entries.insert(rel, selected);
    }
    Ok(())
}

/// Stage two: replay the whole memory bank. A warning no-op when the bank is
/// empty. No augmented classes take part here.
pub fn memory_replay(
    model: ModelState,
    memory: &MemoryBank,
    cfg: &TrainConfig,
    task_index: usize,
) -> Result<ModelState, TrainError> {
    if memory.is_empty() {
        eprintln!("warning: replay skipped, memory bank is empty");
        return Ok(model);
    }
    let data = memory.all_instances();
    for inst in &data {
        if !model.head.contains(inst.relation) {
            return Err(TrainError::BadMemoryLabel(inst.relation));
        }
    }
    train_epochs(model, &data, cfg.epochs_replay, cfg, 1, task_index)
}

/// Accuracy and per-relation F1 over a test slice.
pub fn evaluate(
    model: &ModelState,
    test: &[&Instance],
    relations: &[Relation],
) -> (f64, BTreeMap<String, f64>) {
    let predictions = exec::map_slice(test, |x| forward(model, x).argmax);
    let gold: Vec<RelId> = test.iter().map(|x| x.relation).collect();
    let correct = predictions
        .iter()
        .zip(&gold)
        .filter(|(p, g)| p == g)
        .count();
    let accuracy = correct as f64 / test.len().max(1) as f64;
    let f1 = per_relation_f1(&predictions, &gold).expect("aligned slices");
    let named = f1
        .into_iter()
        .map(|(rel, v)| (relations[rel as usize].name.clone(), v))
        .collect();
    (accuracy, named)
}

/// Run the full continual loop, invoking `observer` with the trained model
/// after every task (before the next one starts).
pub fn run_stream_observed<F>(
    stream: &TaskStream,
    relations: &[Relation],
    cfg: &TrainConfig,
    mut observer: F,
) -> Result<TrajectoryLog, TrainError>
where
    F: FnMut(usize, &ModelState),
{
    if stream.is_empty() {
        return Err(TrainError::EmptyStream);
    }
    let vocab = Vocab::build(
        stream
            .tasks
            .iter()
            .flat_map(|t| t.train.iter().chain(t.test.iter())),
    );
    let mut model = ModelState::new(
        vocab,
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.init_scale,
        seeding::derive(cfg.seed, &[ns::ENCODER_INIT]),
    );
    let registry = SymmetricRegistry::from_relations(relations);
    let synth_base = relations.len() as RelId;
    let mut memory = MemoryBank::new();
    let mut steps = Vec::with_capacity(stream.len());
    let mut seen_test: Vec<&Instance> = Vec::new();
    let mut seen_rels: Vec<RelId> = Vec::new();

    for (task_index, task) in stream.tasks.iter().enumerate() {
        let start = Instant::now();
        model = initial_training(model, task, cfg, &registry, synth_base, task_index)?;
        update_memory(&mut memory, task, &model, cfg.memory_size)?;
        model = memory_replay(model, &memory, cfg, task_index)?;

        seen_rels.extend(task.relation_ids.iter().copied());
        seen_rels.sort_unstable();
        debug_assert_eq!(
            model
                .head
                .classes()
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>(),
            seen_rels.iter().copied().collect::<std::collections::BTreeSet<_>>(),
            "registered classes must equal seen real relations"
        );
        seen_test.extend(task.test.iter());
        let (accuracy, per_relation_f1) = evaluate(&model, &seen_test, relations);
        steps.push(StepRecord {
            task_index,
            accuracy,
            per_relation_f1,
            seen_relations: seen_rels
                .iter()
                .map(|r| relations[*r as usize].name.clone())
                .collect(),
            wall_ms: start.elapsed().as_millis() as u64,
        });
        observer(task_index, &model);
    }

    Ok(TrajectoryLog {
        config: cfg.clone(),
        stream_seed: 0,
        arm: String::new(),
        steps,
    })
}

/// Run the full continual loop over a task stream.
pub fn run_stream(
    stream: &TaskStream,
    relations: &[Relation],
    cfg: &TrainConfig,
) -> Result<TrajectoryLog, TrainError> {
    run_stream_observed(stream, relations, cfg, |_, _| {})
}

/// Joint training on all relations at once; the ceiling a continual run is
/// compared against.
pub struct SupervisedResult {
    pub accuracy: f64,
    pub per_relation_f1: BTreeMap<String, f64>,
    pub model: ModelState,
}

pub fn supervised_upper_bound(
    ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<SupervisedResult, TrainError> {
    let vocab = Vocab::build(ds.instances.iter());
    let mut model = ModelState::new(
        vocab,
        cfg.embed_dim,
        cfg.hidden_dim,
        cfg.init_scale,
        seeding::derive(cfg.seed, &[ns::SUPERVISED, 0]),
    );
    let all_ids: Vec<RelId> = ds.relations.iter().map(|r| r.rel_id).collect();
    model.head = expand_classes(
        &model.head,
        &all_ids,
        cfg.init_scale,
        seeding::derive(cfg.seed, &[ns::SUPERVISED, 1]),
    )?;
    let train: Vec<&Instance> = ds
        .instances
        .iter()
        .filter(|i| ds.splits.get(&i.instance_id) == Some(&crate::corpus::Split::Train))
        .collect();
    model = train_epochs(model, &train, cfg.epochs_initial, cfg, 2, 0)?;

    let test: Vec<&Instance> = ds
        .instances
        .iter()
        .filter(|i| ds.splits.get(&i.instance_id) == Some(&crate::corpus::Split::Test))
        .collect();
    let (accuracy, per_relation_f1) = evaluate(&model, &test, &ds.relations);
    Ok(SupervisedResult {
        accuracy,
        per_relation_f1,
        model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_tasks, SynthConfig};

    fn quick_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs_initial: 6,
            epochs_replay: 3,
            embed_dim: 8,
            hidden_dim: 12,
            seed,
            ..TrainConfig::default()
        }
    }

    fn tiny_corpus(seed: u64) -> Dataset {
        generate_synthetic(&SynthConfig {
            n_relations: 6,
            n_analog_pairs: 1,
            instances_per_relation: 10,
            shortcut_strength: 0.9,
            entity_type_vocab_size: 4,
            template_length: (4, 6),
            symmetric_fraction: 0.2,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn baseline_initial_training_registers_only_real_ids() {
        let ds = tiny_corpus(1);
        let stream = split_tasks(&ds, 3, 5).unwrap();
        let cfg = quick_cfg(9);
        let vocab = Vocab::build(ds.instances.iter());
        let model = ModelState::new(vocab, 8, 12, 0.1, 3);
        let registry = SymmetricRegistry::from_relations(&ds.relations);
        let task = &stream.tasks[0];
        let model = initial_training(model, task, &cfg, &registry, 6, 0).unwrap();
        let registered: std::collections::BTreeSet<RelId> =
            model.head.classes().iter().copied().collect();
        assert_eq!(registered, task.relation_ids);
    }

    #[test]
    fn aca_initial_training_still_ends_with_real_ids_only() {
        let ds = tiny_corpus(2);
        let stream = split_tasks(&ds, 3, 5).unwrap();
        let cfg = TrainConfig {
            aca_enabled: true,
            ..quick_cfg(9)
        };
        let vocab = Vocab::build(ds.instances.iter());
        let model = ModelState::new(vocab, 8, 12, 0.1, 3);
        let registry = SymmetricRegistry::from_relations(&ds.relations);
        let task = &stream.tasks[0];
        let model = initial_training(model, task, &cfg, &registry, 6, 0).unwrap();
        assert!(model.head.classes().iter().all(|c| *c < 6));
        let registered: std::collections::BTreeSet<RelId> =
            model.head.classes().iter().copied().collect();
        assert_eq!(registered, task.relation_ids);
    }

    #[test]
    fn memory_respects_bound_and_freezes() {
        let ds = tiny_corpus(3);
        let stream = split_tasks(&ds, 2, 5).unwrap();
        let cfg = quick_cfg(11);
        let vocab = Vocab::build(ds.instances.iter());
        let model = ModelState::new(vocab, 8, 12, 0.1, 3);
        let registry = SymmetricRegistry::from_relations(&ds.relations);
        let task = &stream.tasks[0];
        let model = initial_training(model, task, &cfg, &registry, 6, 0).unwrap();

        let mut memory = MemoryBank::new();
        update_memory(&mut memory, task, &model, 4).unwrap();
        for rel in task.relation_ids.iter() {
            // 6 train instances per relation in this corpus, so the bound binds.
            assert_eq!(memory.get(*rel).unwrap().len(), 4);
        }
        let err = update_memory(&mut memory, task, &model, 4).unwrap_err();
        assert!(matches!(err, TrainError::MemoryFrozen(_)));
    }

    #[test]
    fn small_relations_are_stored_without_padding() {
        let ds = tiny_corpus(3);
        let stream = split_tasks(&ds, 2, 5).unwrap();
        let vocab = Vocab::build(ds.instances.iter());
        let model = ModelState::new(vocab, 8, 12, 0.1, 3);
        let task = &stream.tasks[1];
        let mut memory = MemoryBank::new();
        update_memory(&mut memory, task, &model, 100).unwrap();
        for rel in task.relation_ids.iter() {
            assert_eq!(memory.get(*rel).unwrap().len(), 6);
        }
    }

    #[test]
    fn memory_selection_matches_brute_force_ranking() {
        let ds = tiny_corpus(4);
        let stream = split_tasks(&ds, 2, 7).unwrap();
        let cfg = quick_cfg(13);
        let vocab = Vocab::build(ds.instances.iter());
        let model = ModelState::new(vocab, 8, 12, 0.1, 3);
        let registry = SymmetricRegistry::from_relations(&ds.relations);
        let task = &stream.tasks[0];
        let model = initial_training(model, task, &cfg, &registry, 6, 0).unwrap();

        let mut memory = MemoryBank::new();
        let b = 3;
        update_memory(&mut memory, task, &model, b).unwrap();

        // Independent ranking: cosine to the mean encoding computed the slow
        // way, ties by instance id.
        for &rel in task.relation_ids.iter() {
            let insts: Vec<&Instance> = task.train.iter().filter(|i| i.relation == rel).collect();
            let encs: Vec<Vec<f64>> = insts.iter().map(|i| model.encode(i)).collect();
            let dim = encs[0].len();
            let mean: Vec<f64> = (0..dim)
                .map(|j| encs.iter().map(|e| e[j]).sum::<f64>() / encs.len() as f64)
                .collect();
            let cos = |a: &[f64], b: &[f64]| {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot / (na * nb)
                }
            };
            let mut ranked: Vec<(String, f64)> = insts
                .iter()
                .zip(&encs)
                .map(|(i, e)| (i.instance_id.clone(), cos(&mean, e)))
                .collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            let expected: Vec<String> = ranked.iter().take(b).map(|(id, _)| id.clone()).collect();
            let got: Vec<String> = memory
                .get(rel)
                .unwrap()
                .iter()
                .map(|i| i.instance_id.clone())
                .collect();
            assert_eq!(got, expected, "relation {rel}");
        }
    }

    #[test]
    fn replay_on_empty_bank_is_a_noop() {
        let ds = tiny_corpus(5);
        let vocab = Vocab::build(ds.instances.iter());
        let model = ModelState::new(vocab, 8, 12, 0.1, 3);
        let before = model.clone();
        let out = memory_replay(model, &MemoryBank::new(), &quick_cfg(1), 0).unwrap();
        assert_eq!(out, before);
    }

    #[test]
    fn replay_decreases_memory_loss() {
        let ds = tiny_corpus(6);
        let stream = split_tasks(&ds, 2, 3).unwrap();
        let cfg = quick_cfg(17);
        let vocab = Vocab::build(ds.instances.iter());
        let model = ModelState::new(vocab, 8, 12, 0.1, 3);
        let registry = SymmetricRegistry::from_relations(&ds.relations);
        let task = &stream.tasks[0];
        let model = initial_training(model, task, &cfg, &registry, 6, 0).unwrap();
        let mut memory = MemoryBank::new();
        update_memory(&mut memory, task, &model, 4).unwrap();

        let data = memory.all_instances();
        let (loss_before, _) = loss_and_grads(&model, &data).unwrap();
        let replay_cfg = TrainConfig {
            epochs_replay: 5,
            ..cfg
        };
        let model = memory_replay(model, &memory, &replay_cfg, 0).unwrap();
        let (loss_after, _) = loss_and_grads(&model, &data).unwrap();
        assert!(loss_after < loss_before, "{loss_after} !< {loss_before}");
    }

    #[test]
    fn run_stream_is_deterministic_and_tracks_seen_relations() {
        let ds = tiny_corpus(7);
        let stream = split_tasks(&ds, 3, 3).unwrap();
        let cfg = quick_cfg(19);
        let log_a = run_stream(&stream, &ds.relations, &cfg).unwrap();
        let log_b = run_stream(&stream, &ds.relations, &cfg).unwrap();
        assert_eq!(log_a.steps.len(), 3);
        for (a, b) in log_a.steps.iter().zip(&log_b.steps) {
            assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
            assert_eq!(a.per_relation_f1, b.per_relation_f1);
            assert_eq!(a.seen_relations, b.seen_relations);
        }
        // Step j sees exactly the relations of tasks 0..=j.
        let mut expected: Vec<String> = Vec::new();
        for (j, task) in stream.tasks.iter().enumerate() {
            expected.extend(
                task.relation_ids
                    .iter()
                    .map(|r| ds.relations[*r as usize].name.clone()),
            );
            expected.sort();
            assert_eq!(log_a.steps[j].seen_relations, expected);
            for name in log_a.steps[j].per_relation_f1.keys() {
                assert!(expected.contains(name));
            }
        }
    }

    #[test]
    fn single_task_stream_matches_supervised_on_same_data() {
        // With one task the continual loop degenerates to plain supervised
        // training; on this separable corpus both saturate.
        let ds = tiny_corpus(8);
        let stream = split_tasks(&ds, 1, 3).unwrap();
        let cfg = TrainConfig {
            epochs_initial: 12,
            ..quick_cfg(23)
        };
        let log = run_stream(&stream, &ds.relations, &cfg).unwrap();
        let sup = supervised_upper_bound(&ds, &cfg).unwrap();
        assert_eq!(log.steps.len(), 1);
        assert!((log.steps[0].accuracy - sup.accuracy).abs() < 0.101);
        assert!(sup
            .per_relation_f1
            .values()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn supervised_is_deterministic() {
        let ds = tiny_corpus(9);
        let cfg = quick_cfg(29);
        let a = supervised_upper_bound(&ds, &cfg).unwrap();
        let b = supervised_upper_bound(&ds, &cfg).unwrap();
        assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        assert_eq!(a.per_relation_f1, b.per_relation_f1);
    }
}
