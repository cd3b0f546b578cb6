//! Entity-marker-aware pooling encoder.
//!
//! An instance is virtually wrapped with marker tokens around its head and
//! tail spans. Three mean-pooled embedding segments — head (markers plus head
//! tokens), tail, and the full marked sequence — are concatenated and pushed
//! through one tanh hidden layer. The segment structure lets entity features
//! carry class signal independently of the rest of the sentence, which is
//! exactly the surface a type shortcut can attach to.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, E11, E12, E21, E22};
use crate::corpus::Instance;
use crate::seeding::{self, ns};

/// Embedding table plus one hidden layer, all 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// vocab x d
    pub embedding: Vec<Vec<f64>>,
    /// h rows of length 3d
    pub hidden_w: Vec<Vec<f64>>,
    pub hidden_b: Vec<f64>,
}

impl EncoderParams {
    /// Seeded uniform(-init_scale, init_scale) initialization.
    pub fn init(vocab_size: usize, embed_dim: usize, hidden_dim: usize, init_scale: f64, seed: u64) -> Self {
        let mut rng = seeding::rng(seed, &[ns::ENCODER_INIT]);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if init_scale == 0.0 {
                        0.0
                    } else {
                        rng.gen_range(-init_scale..init_scale)
                    }
                })
                .collect()
        };
        let embedding = (0..vocab_size).map(|_| draw(embed_dim)).collect();
        let hidden_w = (0..hidden_dim).map(|_| draw(3 * embed_dim)).collect();
        let hidden_b = draw(hidden_dim);
        EncoderParams {
            embed_dim,
            hidden_dim,
            embedding,
            hidden_w,
            hidden_b,
        }
    }
}

/// Forward-pass intermediates kept for backpropagation.
pub struct EncodeTrace {
    pub head_idx: Vec<usize>,
    pub tail_idx: Vec<usize>,
    pub full_idx: Vec<usize>,
    /// Concatenated pooled segments, length 3d.
    pub pooled: Vec<f64>,
    /// tanh activation, length h.
    pub rep: Vec<f64>,
}

fn mean_rows(params: &EncoderParams, idx: &[usize]) -> Vec<f64> {
    let d = params.embed_dim;
    let mut out = vec![0.0; d];
    for &i in idx {
        let row = &params.embedding[i];
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let inv = 1.0 / idx.len() as f64;
    for o in &mut out {
        *o *= inv;
    }
    out
}

/// Encode with intermediates. `x` must be valid; unknown tokens map to the
/// unknown embedding.
pub fn encode_trace(params: &EncoderParams, vocab: &Vocab, x: &Instance) -> EncodeTrace {
    let token_ids: Vec<usize> = x.tokens.iter().map(|t| vocab.lookup(t)).collect();

    let mut head_idx = Vec::with_capacity(x.head_span.len() + 2);
    head_idx.push(E11);
    head_idx.extend(&token_ids[x.head_span.start..x.head_span.end]);
    head_idx.push(E12);

    let mut tail_idx = Vec::with_capacity(x.tail_span.len() + 2);
    tail_idx.push(E21);
    tail_idx.extend(&token_ids[x.tail_span.start..x.tail_span.end]);
    tail_idx.push(E22);

    // Mean pooling is insertion-position independent, so the "virtually
    // inserted" markers just join the multiset.
    let mut full_idx = Vec::with_capacity(token_ids.len() + 4);
    full_idx.extend([E11, E12, E21, E22]);
    full_idx.extend(&token_ids);

    let head_mean = mean_rows(params, &head_idx);
    let tail_mean = mean_rows(params, &tail_idx);
    let full_mean = mean_rows(params, &full_idx);

    let mut pooled = Vec::with_capacity(3 * params.embed_dim);
    pooled.extend(head_mean);
    pooled.extend(tail_mean);
    pooled.extend(full_mean);

    let rep: Vec<f64> = params
        .hidden_w
        .iter()
        .zip(&params.hidden_b)
        .map(|(row, b)| {
            let a: f64 = row.iter().zip(&pooled).map(|(w, z)| w * z).sum::<f64>() + b;
            a.tanh()
        })
        .collect();

    EncodeTrace {
        head_idx,
        tail_idx,
        full_idx,
        pooled,
        rep,
    }
}

/// The h-dimensional representation of an instance.
pub fn encode(params: &EncoderParams, vocab: &Vocab, x: &Instance) -> Vec<f64> {
    encode_trace(params, vocab, x).rep
}
