//! Optimization of the variational objectives.

mod config;
pub mod estimator;
pub mod gradcheck;
pub mod objective;
pub mod optimizer;
pub mod regularizer;
pub mod sampler;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{CorpusProfile, GradEstimator, PriorKind, TrainConfig};
pub use estimator::{exact_expectation_grad, score_function_grad};
pub use gradcheck::gradient_check;
pub use objective::{
    elbo_exact, evaluate, Batch, Example, Gradients, ObjectiveKind, ObjectiveSpec, ObjectiveValue,
    PairIds,
};
pub use optimizer::{Optimizer, OptimizerConfig};
pub use regularizer::{regularizer, similarity_score, OpinionSimilarity};
pub use sampler::{pair_weight, sample_weighted, NegativeDistribution, NegativeSampler};

use crate::corpus::{
    build_vocab_with, BowEncoder, Document, DocumentEncoder, Embeddings, TokenFilter, Vocab,
};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::extraction::PairSet;
use crate::linalg::Matrix;
use crate::model::{AspectModel, Checkpoint, OpinionModel, PriorModel, SentimentModel};

/// Negative-sampled bound on a batch: draws `negatives` words per pair from
/// `sampler` (replacing any already present) and evaluates
/// `Σ E_q[log σ(φ⁺) + Σ log(1 - σ(φ⁻)) + log p(c)] + α Σ H(q)`.
pub fn elbo_negative_sampling<R: Rng + ?Sized>(
    model: &AspectModel,
    batch: &Batch,
    alpha: f64,
    negatives: usize,
    sampler: &NegativeSampler,
    rng: &mut R,
) -> Result<f64> {
    if model.opinion.num_opinions() < 2 {
        return Err(Error::Config("negative sampling needs at least two opinion words".into()));
    }
    let mut batch = batch.clone();
    for ex in &mut batch.examples {
        for pair in &mut ex.pairs {
            pair.negatives = sampler.draw_many(pair.opinion, negatives, rng);
        }
    }
    Ok(evaluate(
        model,
        &batch,
        &ObjectiveSpec::new(ObjectiveKind::NegSamplingL3, alpha),
        None,
        None,
    )?
    .bound())
}

/// One ascent step on a frozen batch. With the likelihood-ratio estimator
/// the classifier-weight gradient of the bound is replaced by its
/// Monte-Carlo estimate; regularizer and decay gradients stay analytic.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut AspectModel,
    batch: &Batch,
    spec: &ObjectiveSpec,
    sim: Option<&OpinionSimilarity>,
    estimator: GradEstimator,
    optimizer: &mut Optimizer,
    rng: &mut R,
) -> Result<ObjectiveValue> {
    let mut grads = Gradients::zeros_like(model);
    let value = evaluate(model, batch, spec, sim, Some(&mut grads))?;
    value.check_finite()?;
    if let GradEstimator::LikelihoodRatio(k) = estimator {
        // E_q[A ∇log q] equals the exact bound gradient, so swapping one
        // for the other leaves the remaining terms untouched
        let exact = exact_expectation_grad(model, batch, spec.kind, spec.alpha)?;
        let sampled = score_function_grad(model, batch, spec.kind, spec.alpha, k, rng)?;
        for ((g, e), s) in grads
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(exact.as_slice())
            .zip(sampled.as_slice())
        {
            *g += s - e;
        }
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let slices = grads.slices();
    optimizer.step(&mut objective::param_slices_mut(model), &slices);
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub objective: f64,
    pub reg_term: f64,
    pub dev_accuracy: Option<f64>,
}

/// Tab-separated `epoch objective reg_term dev_accuracy`, one line per epoch.
pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in history {
        let dev = r.dev_accuracy.map_or("nan".to_string(), |a| format!("{a}"));
        writeln!(out, "{}\t{}\t{}\t{}", r.epoch, r.objective, r.reg_term, dev).unwrap();
    }
    out
}

pub struct TrainData<'a> {
    pub train: &'a [Document],
    pub dev: &'a [Document],
    pub pairs: &'a PairSet,
    pub embeddings: Option<&'a Embeddings>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Descending count, then lexicographic.
fn counted_vocab<'a, I: IntoIterator<Item = &'a str>>(words: I) -> Vocab {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for w in words {
        *counts.entry(w).or_default() += 1;
    }
    let mut entries: Vec<(&str, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_counts(entries.into_iter().map(|(w, c)| (w.to_string(), c)))
}

fn dropout<R: Rng + ?Sized>(x: &[f64], rate: f64, rng: &mut R) -> Vec<f64> {
    if rate == 0.0 {
        return x.to_vec();
    }
    let keep = 1.0 - rate;
    x.iter()
        .map(|v| if rng.random::<f64>() < keep { v / keep } else { 0.0 })
        .collect()
}

/// Training documents of one aspect, each with its pairs as ids.
struct AspectData {
    docs: Vec<(usize, Vec<(usize, usize)>)>,
    targets: BTreeSet<usize>,
}

/// Trains one classifier pair per aspect by mini-batch ascent on
/// `L + β Σ R - λ‖θ‖²`. All randomness comes from one generator seeded with
/// `cfg.seed`.
pub fn train(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let filter = match cfg.profile {
        CorpusProfile::Reviews => TokenFilter::reviews(),
        CorpusProfile::Clinical => TokenFilter::clinical(),
    };
    let features = build_vocab_with(data.train, cfg.min_count, &filter);
    if features.is_empty() {
        return Err(Error::Invalid("training corpus has an empty vocabulary".into()));
    }
    let doc_index: HashMap<&str, usize> = data
        .train
        .iter()
        .enumerate()
        .map(|(i, d)| (d.id.as_str(), i))
        .collect();
    let train_pairs: Vec<_> = data
        .pairs
        .pairs
        .iter()
        .filter(|p| doc_index.contains_key(p.doc_id.as_str()))
        .collect();
    if train_pairs.is_empty() {
        return Err(Error::Invalid("no extracted pairs belong to training documents".into()));
    }
    let opinions = counted_vocab(train_pairs.iter().map(|p| p.opinion.as_str()));
    let targets = counted_vocab(train_pairs.iter().map(|p| p.target.as_str()));
    let alpha = cfg.effective_alpha();
    let spec = ObjectiveSpec::new(cfg.objective, alpha)
        .with_regularizer(cfg.beta)
        .with_weight_decay(cfg.weight_decay);

    let opinion_freqs: Vec<u64> = (0..opinions.len()).map(|i| opinions.freq(i)).collect();
    let neg_sampler = match cfg.objective {
        ObjectiveKind::NegSamplingL3 => {
            Some(NegativeSampler::new(&opinion_freqs, cfg.negative_distribution)?)
        }
        _ => None,
    };
    let sim = match (cfg.beta > 0.0, data.embeddings) {
        (true, Some(emb)) => Some(OpinionSimilarity::new(&opinions, emb, cfg.gamma)),
        (true, None) => {
            warn!("regularizer needs embeddings; training without it");
            None
        }
        _ => None,
    };

    let encoder = BowEncoder { vocab: features };
    let cached: Vec<Vec<f64>> = data.train.iter().map(|d| encoder.encode(d).0).collect();

    let mut per_aspect: Vec<AspectData> = Vec::new();
    for a in 0..data.pairs.aspects.len() {
        let mut docs: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        let mut ks = BTreeSet::new();
        for p in train_pairs.iter().filter(|p| p.aspect == a) {
            let o = opinions.index(&p.opinion).expect("opinion in vocab");
            let t = targets.index(&p.target).expect("target in vocab");
            docs.entry(doc_index[p.doc_id.as_str()]).or_default().push((o, t));
            ks.insert(t);
        }
        per_aspect.push(AspectData {
            docs: docs.into_iter().collect(),
            targets: ks,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let emb_dim = data.embeddings.map_or(cfg.embedding_dim, Embeddings::dim);
    let mut models = Vec::with_capacity(per_aspect.len());
    let mut optimizers = Vec::with_capacity(per_aspect.len());
    for (a, ad) in per_aspect.iter().enumerate() {
        let mut opinion_emb = Matrix::gaussian(opinions.len(), emb_dim, cfg.init_std, &mut rng);
        if let Some(emb) = data.embeddings {
            for o in 0..opinions.len() {
                if let Some(v) = emb.get(opinions.word(o)) {
                    opinion_emb.row_mut(o).copy_from_slice(v);
                }
            }
        }
        let model = AspectModel {
            name: data.pairs.aspects[a].clone(),
            sentiment: SentimentModel::gaussian(cfg.num_classes, encoder.dim(), cfg.init_std, &mut rng),
            opinion: OpinionModel {
                polarity: Matrix::gaussian(cfg.num_classes, emb_dim, cfg.init_std, &mut rng),
                opinion_emb,
                targets: ad.targets.clone(),
            },
            prior: match cfg.prior {
                PriorKind::Uniform => PriorModel::Uniform,
                PriorKind::Learned => PriorModel::Learned(vec![0.0; cfg.num_classes]),
            },
        };
        if ad.docs.is_empty() {
            warn!("aspect `{}` has no training pairs; left at initialization", model.name);
        }
        let n = objective::flatten_params(&model).len();
        optimizers.push(Optimizer::new(cfg.optimizer, n));
        models.push(model);
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut reg_total = 0.0;
        for (a, ad) in per_aspect.iter().enumerate() {
            let mut order: Vec<usize> = (0..ad.docs.len()).collect();
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let mut batch = Batch::default();
                for &k in chunk {
                    let (doc, pairs) = &ad.docs[k];
                    let weights: Vec<f64> = pairs
                        .iter()
                        .map(|&(o, _)| pair_weight(opinions.freq(o)))
                        .collect();
                    let picks = sample_weighted(&weights, cfg.pairs_per_doc, &mut rng);
                    let features = dropout(&cached[*doc], cfg.dropout, &mut rng);
                    let pair_ids: Vec<PairIds> = picks
                        .iter()
                        .map(|&i| {
                            let (o, t) = pairs[i];
                            let negatives = neg_sampler
                                .as_ref()
                                .map(|s| s.draw_many(o, cfg.negatives, &mut rng))
                                .unwrap_or_default();
                            PairIds {
                                opinion: o,
                                target: t,
                                negatives,
                            }
                        })
                        .collect();
                    batch.examples.push(Example {
                        features,
                        reg_opinion: pair_ids.first().map(|p| p.opinion),
                        pairs: pair_ids,
                    });
                }
                let value = train_step(
                    &mut models[a],
                    &batch,
                    &spec,
                    sim.as_ref(),
                    cfg.grad_estimator,
                    &mut optimizers[a],
                    &mut rng,
                )
                .map_err(|e| match e {
                    Error::NonFinite(term) => Error::NonFinite(format!(
                        "{term} at epoch {epoch}, aspect `{}`",
                        models[a].name
                    )),
                    other => other,
                })?;
                total += value.total();
                reg_total += value.regularizer;
            }
        }

        let mut dev_scores = Vec::new();
        for m in &models {
            if data.dev.iter().any(|d| d.gold_labels.contains_key(&m.name)) {
                dev_scores.push(evaluation::evaluate(&m.sentiment, data.dev, &encoder, &m.name)?);
            }
        }
        let dev_accuracy =
            (!dev_scores.is_empty()).then(|| dev_scores.iter().sum::<f64>() / dev_scores.len() as f64);
        info!(
            "epoch {epoch}: objective {total:.4} regularizer {reg_total:.4} dev {:?}",
            dev_accuracy
        );
        history.push(EpochRecord {
            epoch,
            objective: total,
            reg_term: reg_total,
            dev_accuracy,
        });
    }

    Ok(TrainOutput {
        checkpoint: Checkpoint {
            num_classes: cfg.num_classes,
            features: encoder.vocab,
            opinions,
            targets,
            aspects: models,
        },
        history,
    })
}
