//! Likelihood-ratio (score-function) gradient of the bound with respect to
//! the sentiment classifier weights.
//!
//! With learning signal `A(c) = f(c) - α log q(c|x)` the gradient of
//! `E_q[f] + α H(q)` is `E_q[A(c) ∇ log q(c|x)]`, estimated from `K` draws
//! of `c ~ q`.

use rand::Rng;

use crate::error::Result;
use crate::linalg::{axpy, log_softmax, softmax, Matrix};
use crate::model::AspectModel;

use super::objective::{data_terms, Batch, ObjectiveKind};

pub fn learning_signal(f: &[f64], log_q: &[f64], alpha: f64) -> Vec<f64> {
    f.iter().zip(log_q).map(|(fc, lq)| fc - alpha * lq).collect()
}

fn sample_class<R: Rng + ?Sized>(q: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (c, p) in q.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return c;
        }
    }
    // rounding left u marginally positive: last class with mass
    q.iter().rposition(|p| *p > 0.0).unwrap_or(q.len() - 1)
}

/// `(1/K) Σ_j A(c_j) ∇_W log q(c_j|x)` summed over the batch's pairs.
pub fn score_function_grad<R: Rng + ?Sized>(
    model: &AspectModel,
    batch: &Batch,
    kind: ObjectiveKind,
    alpha: f64,
    samples: usize,
    rng: &mut R,
) -> Result<Matrix> {
    assert!(samples >= 1, "need at least one sample");
    let classes = model.num_classes();
    let mut grad = Matrix::zeros(classes, model.sentiment.dim());
    for ex in &batch.examples {
        let z = model.sentiment.logits(&ex.features);
        let q = softmax(&z);
        let log_q = log_softmax(&z);
        for pair in &ex.pairs {
            let signal = learning_signal(&data_terms(model, kind, pair), &log_q, alpha);
            let mut dz = vec![0.0; classes];
            for _ in 0..samples {
                let c = sample_class(&q, rng);
                // ∇_z log q(c) = e_c - q
                for (k, d) in dz.iter_mut().enumerate() {
                    let indicator = if k == c { 1.0 } else { 0.0 };
                    *d += signal[c] * (indicator - q[k]) / samples as f64;
                }
            }
            for (c, d) in dz.iter().enumerate() {
                axpy(*d, &ex.features, grad.row_mut(c));
            }
        }
    }
    Ok(grad)
}

/// The same expectation computed exactly by enumerating classes.
pub fn exact_expectation_grad(
    model: &AspectModel,
    batch: &Batch,
    kind: ObjectiveKind,
    alpha: f64,
) -> Result<Matrix> {
    let classes = model.num_classes();
    let mut grad = Matrix::zeros(classes, model.sentiment.dim());
    for ex in &batch.examples {
        let z = model.sentiment.logits(&ex.features);
        let q = softmax(&z);
        let log_q = log_softmax(&z);
        for pair in &ex.pairs {
            let signal = learning_signal(&data_terms(model, kind, pair), &log_q, alpha);
            let mut dz = vec![0.0; classes];
            for c in 0..classes {
                for (k, d) in dz.iter_mut().enumerate() {
                    let indicator = if k == c { 1.0 } else { 0.0 };
                    *d += q[c] * signal[c] * (indicator - q[k]);
                }
            }
            for (c, d) in dz.iter().enumerate() {
                axpy(*d, &ex.features, grad.row_mut(c));
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OpinionModel, PriorModel, SentimentModel};
    use crate::training::objective::{evaluate, Example, Gradients, ObjectiveSpec, PairIds};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(rng: &mut ChaCha8Rng) -> (AspectModel, Batch) {
        let model = AspectModel {
            name: "t".into(),
            sentiment: SentimentModel::gaussian(3, 4, 0.7, rng),
            opinion: OpinionModel {
                polarity: Matrix::gaussian(3, 3, 1.0, rng),
                opinion_emb: Matrix::gaussian(5, 3, 1.0, rng),
                targets: [0usize].into_iter().collect(),
            },
            prior: PriorModel::Uniform,
        };
        let batch = Batch {
            examples: vec![Example {
                features: vec![0.5, -0.2, 0.8, 0.1],
                pairs: vec![PairIds {
                    opinion: 2,
                    target: 0,
                    negatives: vec![],
                }],
                reg_opinion: None,
            }],
        };
        (model, batch)
    }

    #[test]
    fn exact_expectation_equals_analytic_bound_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (model, batch) = toy(&mut rng);
        for alpha in [1.0, 0.3] {
            let exact = exact_expectation_grad(&model, &batch, ObjectiveKind::ExactL1, alpha).unwrap();
            let mut g = Gradients::zeros_like(&model);
            evaluate(
                &model,
                &batch,
                &ObjectiveSpec::new(ObjectiveKind::ExactL1, alpha),
                None,
                Some(&mut g),
            )
            .unwrap();
            for (a, b) in exact.as_slice().iter().zip(g.weights.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_posterior_gives_zero_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (mut model, batch) = toy(&mut rng);
        model.sentiment.weights = Matrix::from_rows(&[
            vec![0.0; 4],
            vec![4000.0, 0.0, 0.0, 0.0],
            vec![0.0; 4],
        ]);
        let g = score_function_grad(&model, &batch, ObjectiveKind::ExactL2, 1.0, 10, &mut rng).unwrap();
        assert!(g.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sampled_class_frequencies_follow_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = [0.2, 0.5, 0.3];
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[sample_class(&q, &mut rng)] += 1;
        }
        for c in 0..3 {
            assert!((counts[c] as f64 / 30_000.0 - q[c]).abs() < 0.015);
        }
    }
}
