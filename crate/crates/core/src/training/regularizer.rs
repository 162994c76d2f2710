//! Opinion-word similarity regularizer.

use log::warn;

use crate::corpus::{Embeddings, Vocab};
use crate::linalg::{cosine, dot, softmax};
use crate::model::AspectModel;

use super::objective::Batch;

/// `τ(z; γ)`: `z` when `|z| ≥ γ`, else 0.
pub fn threshold(z: f64, gamma: f64) -> f64 {
    if z.abs() >= gamma {
        z
    } else {
        0.0
    }
}

/// Thresholded cosine similarity of two words; 0 when either word has no
/// embedding or a zero-norm one.
pub fn similarity_score(a: &str, b: &str, emb: &Embeddings, gamma: f64) -> f64 {
    let (Some(va), Some(vb)) = (emb.get(a), emb.get(b)) else {
        return 0.0;
    };
    match cosine(va, vb) {
        Some(c) => threshold(c, gamma),
        None => {
            warn!("zero-norm embedding for `{a}` or `{b}`, similarity set to 0");
            0.0
        }
    }
}

/// Similarity scores between opinion-vocabulary ids, computed on demand from
/// unit-normalized embeddings.
#[derive(Debug, Clone)]
pub struct OpinionSimilarity {
    unit: Vec<Option<Vec<f64>>>,
    gamma: f64,
}

impl OpinionSimilarity {
    pub fn new(opinions: &Vocab, emb: &Embeddings, gamma: f64) -> Self {
        let unit = (0..opinions.len())
            .map(|i| {
                let v = emb.get(opinions.word(i))?;
                let n = dot(v, v).sqrt();
                if n == 0.0 {
                    warn!("zero-norm embedding for `{}`", opinions.word(i));
                    return None;
                }
                Some(v.iter().map(|x| x / n).collect())
            })
            .collect();
        OpinionSimilarity { unit, gamma }
    }

    /// From explicit vectors, one per opinion id.
    pub fn from_vectors(vectors: &[Vec<f64>], gamma: f64) -> Self {
        let unit = vectors
            .iter()
            .map(|v| {
                let n = dot(v, v).sqrt();
                (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
            })
            .collect();
        OpinionSimilarity { unit, gamma }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn score(&self, i: usize, j: usize) -> f64 {
        match (&self.unit[i], &self.unit[j]) {
            (Some(a), Some(b)) => threshold(dot(a, b).clamp(-1.0, 1.0), self.gamma),
            _ => 0.0,
        }
    }
}

/// Squared Euclidean distance between two distributions.
pub fn squared_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Unweighted `Σ_{i≠j} -d(q_i, q_j) s(w_i, w_j)` over ordered document
/// pairs of the batch.
pub fn regularizer(model: &AspectModel, batch: &Batch, sim: &OpinionSimilarity) -> f64 {
    let q: Vec<Vec<f64>> = batch
        .examples
        .iter()
        .map(|ex| softmax(&model.sentiment.logits(&ex.features)))
        .collect();
    let mut total = 0.0;
    for (i, ei) in batch.examples.iter().enumerate() {
        for (j, ej) in batch.examples.iter().enumerate() {
            if i == j {
                continue;
            }
            if let (Some(oi), Some(oj)) = (ei.reg_opinion, ej.reg_opinion) {
                total -= squared_distance(&q[i], &q[j]) * sim.score(oi, oj);
            }
        }
    }
    total
}
