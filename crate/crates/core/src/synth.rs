//! Synthetic corpora with known latent polarities.
//!
//! Every document draws one class per aspect. Each aspect contributes
//! `Poisson(pair_rate)` (at least one) two-word sentences `[target, opinion]`.
//! The opinion is drawn from
//! `sep · U(class block) + (1 - sep) · U(all opinions of the aspect)`, so the
//! total-variation distance between any two class-conditionals is `sep`.
//! Filler tokens, drawn independently of the classes, pad each document to
//! `doc_length`.

use rand::distr::Distribution as _;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, EmbeddingTable, Embeddings, Sentence, Vocab};
use crate::error::{Error, Result};
use crate::extraction::{PairSet, Rule, WordPair};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_aspects: usize,
    pub num_classes: usize,
    pub targets_per_aspect: usize,
    pub opinions_per_class: usize,
    pub filler_vocab_size: usize,
    pub doc_length: usize,
    pub pair_rate: f64,
    pub class_separation: f64,
    /// Standard deviation of the noise added to the one-hot embeddings.
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 2000,
            num_aspects: 2,
            num_classes: 2,
            targets_per_aspect: 3,
            opinions_per_class: 4,
            filler_vocab_size: 50,
            doc_length: 30,
            pair_rate: 3.0,
            class_separation: 1.0,
            embedding_noise: 0.1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.num_docs,
            self.num_aspects,
            self.num_classes,
            self.targets_per_aspect,
            self.opinions_per_class,
            self.filler_vocab_size,
            self.doc_length,
        ];
        if counts.contains(&0) {
            return Err(Error::Config("synthetic counts must all be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.class_separation) {
            return Err(Error::Config("class_separation must lie in [0, 1]".into()));
        }
        if !(self.pair_rate > 0.0 && self.pair_rate.is_finite()) {
            return Err(Error::Config("pair_rate must be positive".into()));
        }
        if !(self.embedding_noise >= 0.0 && self.embedding_noise.is_finite()) {
            return Err(Error::Config("embedding_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn aspect_name(a: usize) -> String {
        format!("aspect{a}")
    }

    pub fn target_word(a: usize, k: usize) -> String {
        format!("a{a}t{k}")
    }

    pub fn opinion_word(a: usize, c: usize, k: usize) -> String {
        format!("a{a}c{c}o{k}")
    }

    pub fn filler_word(k: usize) -> String {
        format!("f{k}")
    }

    /// Probability of drawing opinion `k` of class block `block` when the
    /// latent class is `class`.
    pub fn opinion_prob(&self, class: usize, block: usize) -> f64 {
        let m = self.opinions_per_class as f64;
        let mix = (1.0 - self.class_separation) / (m * self.num_classes as f64);
        if block == class {
            self.class_separation / m + mix
        } else {
            mix
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub docs: Vec<Document>,
    pub pairs: PairSet,
    pub embeddings: Embeddings,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let poisson = Poisson::new(cfg.pair_rate).map_err(|e| Error::Config(e.to_string()))?;
    let aspects: Vec<String> = (0..cfg.num_aspects).map(SynthConfig::aspect_name).collect();
    let fillers: Vec<String> = (0..cfg.filler_vocab_size).map(SynthConfig::filler_word).collect();

    let mut docs = Vec::with_capacity(cfg.num_docs);
    let mut pairs = Vec::new();
    for i in 0..cfg.num_docs {
        let id = format!("doc{i:05}");
        let mut doc = Document {
            id: id.clone(),
            ..Default::default()
        };
        let mut used = 0;
        for (a, name) in aspects.iter().enumerate() {
            let class = rng.random_range(0..cfg.num_classes);
            doc.gold_labels.insert(name.clone(), class);
            let n = (poisson.sample(&mut rng) as usize).max(1);
            for _ in 0..n {
                let target = SynthConfig::target_word(a, rng.random_range(0..cfg.targets_per_aspect));
                let block = if rng.random_bool(cfg.class_separation) {
                    class
                } else {
                    rng.random_range(0..cfg.num_classes)
                };
                let opinion =
                    SynthConfig::opinion_word(a, block, rng.random_range(0..cfg.opinions_per_class));
                doc.sentences.push(Sentence::unparsed(&[&target, &opinion]));
                pairs.push(WordPair {
                    target,
                    opinion,
                    aspect: a,
                    doc_id: id.clone(),
                    rule: Rule::Window,
                });
                used += 2;
            }
        }
        if used < cfg.doc_length {
            let pad: Vec<&str> = (used..cfg.doc_length)
                .map(|_| fillers.choose(&mut rng).expect("fillers nonempty").as_str())
                .collect();
            doc.sentences.push(Sentence::unparsed(&pad));
        }
        docs.push(doc);
    }

    let embeddings = embeddings(cfg, &mut rng)?;
    Ok(SynthCorpus {
        docs,
        pairs: PairSet { aspects, pairs },
        embeddings,
    })
}

/// One dimension per (aspect, class) opinion block, one per aspect's
/// targets, one for filler; plus Gaussian noise.
fn embeddings<R: Rng + ?Sized>(cfg: &SynthConfig, rng: &mut R) -> Result<Embeddings> {
    let opinion_dims = cfg.num_aspects * cfg.num_classes;
    let dim = opinion_dims + cfg.num_aspects + 1;
    let mut words = Vec::new();
    let mut hot = Vec::new();
    for a in 0..cfg.num_aspects {
        for c in 0..cfg.num_classes {
            for k in 0..cfg.opinions_per_class {
                words.push(SynthConfig::opinion_word(a, c, k));
                hot.push(a * cfg.num_classes + c);
            }
        }
        for k in 0..cfg.targets_per_aspect {
            words.push(SynthConfig::target_word(a, k));
            hot.push(opinion_dims + a);
        }
    }
    for k in 0..cfg.filler_vocab_size {
        words.push(SynthConfig::filler_word(k));
        hot.push(dim - 1);
    }
    let noise = Normal::new(0.0, cfg.embedding_noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut m = Matrix::zeros(words.len(), dim);
    for (r, h) in hot.iter().enumerate() {
        for (j, v) in m.row_mut(r).iter_mut().enumerate() {
            *v = noise.sample(rng) + if j == *h { 1.0 } else { 0.0 };
        }
    }
    Ok(Embeddings {
        vocab: Vocab::from_words(words),
        table: EmbeddingTable::new(m)?,
    })
}
