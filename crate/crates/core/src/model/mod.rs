//! From-scratch differentiable classifier.
//!
//! [`ModelState`] bundles the vocabulary, the pooling encoder, and the
//! expandable softmax head. Gradients are computed manually in
//! [`loss_and_grads`] and checked against central finite differences in the
//! test suite. Everything is 64-bit floats for reproducibility and tight
//! gradient-check tolerances.

mod encoder;
mod head;
mod vocab;

pub use encoder::{encode, encode_trace, EncodeTrace, EncoderParams};
pub use head::{expand_classes, remove_classes, ClassifierHead};
pub use vocab::{Vocab, UNK_INDEX};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, RelId};
use crate::exec;

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_HIDDEN_DIM: usize = 128;
pub const DEFAULT_INIT_SCALE: f64 = 0.1;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("class {0} is already registered")]
    DuplicateClass(RelId),
    #[error("class {0} is not registered")]
    UnknownClass(RelId),
    #[error("batch label {0} is not a registered class")]
    UnregisteredLabel(RelId),
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),
    #[error("checkpoint io: {0}")]
    CheckpointIo(String),
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
}

/// The trainable object: embeddings, hidden layer, classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    pub head: ClassifierHead,
}

impl ModelState {
    pub fn new(vocab: Vocab, embed_dim: usize, hidden_dim: usize, init_scale: f64, seed: u64) -> Self {
        let encoder = EncoderParams::init(vocab.len(), embed_dim, hidden_dim, init_scale, seed);
        let head = ClassifierHead::new(hidden_dim);
        ModelState {
            vocab,
            encoder,
            head,
        }
    }

    pub fn encode(&self, x: &Instance) -> Vec<f64> {
        encode(&self.encoder, &self.vocab, x)
    }

    /// Encode a batch; data-parallel under the `parallel` feature, output
    /// order always equals input order.
    pub fn encode_batch(&self, xs: &[&Instance]) -> Vec<Vec<f64>> {
        exec::map_slice(xs, |x| self.encode(x))
    }
}

/// Logits and probabilities over the currently registered classes.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub classes: Vec<RelId>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub argmax: RelId,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Probability distribution over registered classes for one instance.
pub fn forward(model: &ModelState, x: &Instance) -> Prediction {
    assert!(!model.head.is_empty(), "forward needs at least one registered class");
    let rep = model.encode(x);
    let logits = model.head.logits(&rep);
    let probs = softmax(&logits);
    let argmax_pos = probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
        .map(|(i, _)| i)
        .expect("nonempty head");
    Prediction {
        classes: model.head.classes().to_vec(),
        logits,
        probs,
        argmax: model.head.classes()[argmax_pos],
    }
}

/// Gradients for every parameter touched by a batch. Embedding rows are kept
/// sparse; hidden and head gradients are dense.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub embedding: BTreeMap<usize, Vec<f64>>,
    pub hidden_w: Vec<Vec<f64>>,
    pub hidden_b: Vec<f64>,
    pub head_w: Vec<Vec<f64>>,
    pub head_b: Vec<f64>,
}

/// Mean cross-entropy over the batch plus gradients for all parameters.
/// Labels are the instances' `relation` fields and must be registered.
pub fn loss_and_grads(model: &ModelState, batch: &[&Instance]) -> Result<(f64, Gradients), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let d = model.encoder.embed_dim;
    let h = model.encoder.hidden_dim;
    let n_classes = model.head.len();
    let mut grads = Gradients {
        embedding: BTreeMap::new(),
        hidden_w: vec![vec![0.0; 3 * d]; h],
        hidden_b: vec![0.0; h],
        head_w: vec![vec![0.0; h]; n_classes],
        head_b: vec![0.0; n_classes],
    };
    let mut total_loss = 0.0;

    for x in batch {
        let label_pos = model
            .head
            .position(x.relation)
            .ok_or(ModelError::UnregisteredLabel(x.relation))?;
        let trace = encode_trace(&model.encoder, &model.vocab, x);
        let logits = model.head.logits(&trace.rep);
        let probs = softmax(&logits);
        total_loss += -probs[label_pos].max(f64::MIN_POSITIVE).ln();

        // d loss / d logits
        let mut dlogits = probs;
        dlogits[label_pos] -= 1.0;

        // Head rows and representation gradient.
        let mut drep = vec![0.0; h];
        for (c, dl) in dlogits.iter().enumerate() {
            let (w, _) = model.head.row(c);
            for i in 0..h {
                grads.head_w[c][i] += dl * trace.rep[i];
                drep[i] += dl * w[i];
            }
            grads.head_b[c] += dl;
        }

        // Through tanh into the hidden layer.
        let mut dpooled = vec![0.0; 3 * d];
        for i in 0..h {
            let da = drep[i] * (1.0 - trace.rep[i] * trace.rep[i]);
            let row = &model.encoder.hidden_w[i];
            let grow = &mut grads.hidden_w[i];
            for j in 0..3 * d {
                grow[j] += da * trace.pooled[j];
                dpooled[j] += da * row[j];
            }
            grads.hidden_b[i] += da;
        }

        // Distribute the three pooled-segment gradients to embedding rows.
        let segments = [
            (&trace.head_idx, 0),
            (&trace.tail_idx, d),
            (&trace.full_idx, 2 * d),
        ];
        for (idx, offset) in segments {
            let inv = 1.0 / idx.len() as f64;
            for &row in idx.iter() {
                let slot = grads.embedding.entry(row).or_insert_with(|| vec![0.0; d]);
                for j in 0..d {
                    slot[j] += dpooled[offset + j] * inv;
                }
            }
        }
    }

    let inv_n = 1.0 / batch.len() as f64;
    for row in grads.embedding.values_mut() {
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    for row in &mut grads.hidden_w {
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    grads.hidden_b.iter_mut().for_each(|v| *v *= inv_n);
    for row in &mut grads.head_w {
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    grads.head_b.iter_mut().for_each(|v| *v *= inv_n);

    Ok((total_loss * inv_n, grads))
}

fn check_finite(values: impl IntoIterator<Item = f64>, what: &'static str) -> Result<(), ModelError> {
    for v in values {
        if !v.is_finite() {
            return Err(ModelError::NonFiniteGradient(what));
        }
    }
    Ok(())
}

/// Plain gradient step `theta -= lr * g` over every parameter in `grads`.
/// Aborts on non-finite gradients before touching the model.
pub fn sgd_step(model: &mut ModelState, grads: &Gradients, lr: f64) -> Result<(), ModelError> {
    check_finite(grads.embedding.values().flatten().copied(), "embedding")?;
    check_finite(grads.hidden_w.iter().flatten().copied(), "hidden weights")?;
    check_finite(grads.hidden_b.iter().copied(), "hidden bias")?;
    check_finite(grads.head_w.iter().flatten().copied(), "head weights")?;
    check_finite(grads.head_b.iter().copied(), "head bias")?;

    for (&row, grad) in &grads.embedding {
        let emb = &mut model.encoder.embedding[row];
        for (w, g) in emb.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
    for (w_row, g_row) in model.encoder.hidden_w.iter_mut().zip(&grads.hidden_w) {
        for (w, g) in w_row.iter_mut().zip(g_row) {
            *w -= lr * g;
        }
    }
    for (b, g) in model.encoder.hidden_b.iter_mut().zip(&grads.hidden_b) {
        *b -= lr * g;
    }
    model.head.apply_grads(&grads.head_w, &grads.head_b, lr);
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: ModelState,
}

/// Write a version-tagged JSON checkpoint. 64-bit values survive the round
/// trip exactly (shortest-representation float formatting).
pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<(), ModelError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    };
    let json = serde_json::to_string(&ckpt).map_err(|e| ModelError::CheckpointIo(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| ModelError::CheckpointIo(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::CheckpointIo(e.to_string()))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| ModelError::CheckpointIo(e.to_string()))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(ModelError::CheckpointVersion {
            found: ckpt.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut model = ckpt.model;
    model.vocab.reindex();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;
    use rand::Rng;

    fn inst(tokens: &[&str], head: (usize, usize), tail: (usize, usize), rel: RelId) -> Instance {
        Instance {
            instance_id: format!("{tokens:?}-{rel}"),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            head_span: Span::new(head.0, head.1),
            tail_span: Span::new(tail.0, tail.1),
            relation: rel,
        }
    }

    fn tiny_model(classes: &[RelId], seed: u64) -> (ModelState, Vec<Instance>) {
        let xs = vec![
            inst(&["a", "u", "b"], (0, 1), (2, 3), classes[0]),
            inst(&["c", "v", "d", "e"], (0, 1), (2, 4), classes[classes.len() - 1]),
            inst(&["b", "w", "a"], (2, 3), (0, 1), classes[classes.len() / 2]),
        ];
        let vocab = Vocab::build(xs.iter());
        let mut model = ModelState::new(vocab, 3, 4, 0.1, seed);
        model.head = expand_classes(&model.head, classes, 0.1, seed + 1).unwrap();
        (model, xs)
    }

    #[test]
    fn zero_head_gives_uniform_distribution() {
        let (mut model, xs) = tiny_model(&[0, 1, 2], 3);
        model.head = ClassifierHead::new(4);
        model.head = expand_classes(&model.head, &[0, 1, 2], 0.0, 0).unwrap();
        let pred = forward(&model, &xs[0]);
        for p in &pred.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_stable_under_huge_logits() {
        let probs = softmax(&[1e6, 0.0, -5.0]);
        assert!(probs.iter().all(|p| p.is_finite()));
        assert!((probs[0] - 1.0).abs() < 1e-12);
        let sum: f64 = probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_ignores_constant_shifts() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[100.3, 98.8, 102.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_softmax_on_fixed_logits() {
        let probs = softmax(&[1.0, 2.0]);
        let e1 = 1.0f64.exp();
        let e2 = 2.0f64.exp();
        assert!((probs[0] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((probs[1] - e2 / (e1 + e2)).abs() < 1e-15);
    }

    #[test]
    fn uniform_prediction_loss_is_ln_c() {
        let (mut model, xs) = tiny_model(&[0, 1, 2], 3);
        model.head = ClassifierHead::new(4);
        model.head = expand_classes(&model.head, &[0, 1, 2], 0.0, 0).unwrap();
        let batch: Vec<&Instance> = xs.iter().collect();
        let (loss, _) = loss_and_grads(&model, &batch).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_and_unregistered_label_error() {
        let (model, xs) = tiny_model(&[0, 1, 2], 3);
        assert!(matches!(loss_and_grads(&model, &[]), Err(ModelError::EmptyBatch)));
        let mut stray = xs[0].clone();
        stray.relation = 99;
        assert!(matches!(
            loss_and_grads(&model, &[&stray]),
            Err(ModelError::UnregisteredLabel(99))
        ));
    }

    #[test]
    fn zero_learning_rate_leaves_model_unchanged() {
        let (mut model, xs) = tiny_model(&[0, 1, 2], 5);
        let before = model.clone();
        let batch: Vec<&Instance> = xs.iter().collect();
        let (_, grads) = loss_and_grads(&model, &batch).unwrap();
        sgd_step(&mut model, &grads, 0.0).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn one_step_decreases_loss() {
        let (mut model, xs) = tiny_model(&[0, 1, 2], 7);
        let batch: Vec<&Instance> = xs.iter().collect();
        let (loss0, grads) = loss_and_grads(&model, &batch).unwrap();
        sgd_step(&mut model, &grads, 0.05).unwrap();
        let (loss1, _) = loss_and_grads(&model, &batch).unwrap();
        assert!(loss1 < loss0, "{loss1} !< {loss0}");
    }

    #[test]
    fn non_finite_gradients_abort_without_mutation() {
        let (mut model, xs) = tiny_model(&[0, 1, 2], 7);
        let batch: Vec<&Instance> = xs.iter().collect();
        let (_, mut grads) = loss_and_grads(&model, &batch).unwrap();
        grads.hidden_b[0] = f64::NAN;
        let before = model.clone();
        assert!(matches!(
            sgd_step(&mut model, &grads, 0.1),
            Err(ModelError::NonFiniteGradient(_))
        ));
        assert_eq!(model, before);
    }

    #[test]
    fn predictions_never_name_removed_classes() {
        let (mut model, xs) = tiny_model(&[0, 1, 2], 11);
        model.head = expand_classes(&model.head, &[10, 11], 0.1, 2).unwrap();
        model.head = remove_classes(&model.head, &[10, 11]).unwrap();
        for x in &xs {
            let pred = forward(&model, x);
            assert!(!pred.classes.contains(&10));
            assert!([0, 1, 2].contains(&pred.argmax));
        }
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let (model, _) = tiny_model(&[0, 1, 2], 13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model, loaded);
        for (a, b) in model
            .encoder
            .embedding
            .iter()
            .flatten()
            .zip(loaded.encoder.embedding.iter().flatten())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    /// Numeric loss under a single perturbed parameter.
    fn loss_with<F: Fn(&mut ModelState)>(model: &ModelState, batch: &[&Instance], tweak: F) -> f64 {
        let mut m = model.clone();
        tweak(&mut m);
        loss_and_grads(&m, batch).unwrap().0
    }

    fn rel_err(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
    }

    /// Central finite differences over every parameter of a tiny model.
    fn max_grad_check_error(seed: u64) -> f64 {
        let mut rng = crate::seeding::rng(seed, &[0xfd]);
        let classes: Vec<RelId> = (0..rng.gen_range(2..5)).collect();
        let (model, xs) = tiny_model(&classes, seed);
        let batch: Vec<&Instance> = xs.iter().collect();
        let (_, grads) = loss_and_grads(&model, &batch).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;

        for (row, grad) in &grads.embedding {
            for j in 0..model.encoder.embed_dim {
                let up = loss_with(&model, &batch, |m| m.encoder.embedding[*row][j] += eps);
                let dn = loss_with(&model, &batch, |m| m.encoder.embedding[*row][j] -= eps);
                worst = worst.max(rel_err(grad[j], (up - dn) / (2.0 * eps)));
            }
        }
        for i in 0..model.encoder.hidden_dim {
            for j in 0..3 * model.encoder.embed_dim {
                let up = loss_with(&model, &batch, |m| m.encoder.hidden_w[i][j] += eps);
                let dn = loss_with(&model, &batch, |m| m.encoder.hidden_w[i][j] -= eps);
                worst = worst.max(rel_err(grads.hidden_w[i][j], (up - dn) / (2.0 * eps)));
            }
            let up = loss_with(&model, &batch, |m| m.encoder.hidden_b[i] += eps);
            let dn = loss_with(&model, &batch, |m| m.encoder.hidden_b[i] -= eps);
            worst = worst.max(rel_err(grads.hidden_b[i], (up - dn) / (2.0 * eps)));
        }
        // Head rows: perturb through a cloned head.
        for c in 0..model.head.len() {
            for i in 0..model.encoder.hidden_dim {
                let up = loss_with(&model, &batch, |m| {
                    let mut w: Vec<Vec<f64>> = vec![vec![0.0; m.encoder.hidden_dim]; m.head.len()];
                    w[c][i] = -1.0; // apply_grads subtracts lr * g
                    m.head.apply_grads(&w, &vec![0.0; m.head.len()], eps);
                });
                let dn = loss_with(&model, &batch, |m| {
                    let mut w: Vec<Vec<f64>> = vec![vec![0.0; m.encoder.hidden_dim]; m.head.len()];
                    w[c][i] = 1.0;
                    m.head.apply_grads(&w, &vec![0.0; m.head.len()], eps);
                });
                worst = worst.max(rel_err(grads.head_w[c][i], (up - dn) / (2.0 * eps)));
            }
            let up = loss_with(&model, &batch, |m| {
                let mut b = vec![0.0; m.head.len()];
                b[c] = -1.0;
                m.head.apply_grads(&vec![vec![0.0; m.encoder.hidden_dim]; m.head.len()], &b, eps);
            });
            let dn = loss_with(&model, &batch, |m| {
                let mut b = vec![0.0; m.head.len()];
                b[c] = 1.0;
                m.head.apply_grads(&vec![vec![0.0; m.encoder.hidden_dim]; m.head.len()], &b, eps);
            });
            worst = worst.max(rel_err(grads.head_b[c], (up - dn) / (2.0 * eps)));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..8 {
            let err = max_grad_check_error(seed);
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }
}
