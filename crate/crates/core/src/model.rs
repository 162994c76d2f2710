//! The sentiment classifier `q(c|x)` and the opinion-word classifier
//! `p(w_o|c, w_t)`, as plain functions of explicit parameters.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FeatureVector, Vocab};
use crate::error::{Error, Result};
use crate::linalg::{dot, log_softmax, softmax, Matrix};

/// Probabilities over polarity classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Invalid("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Invalid(format!("invalid probabilities {probs:?}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("probabilities sum to {total}")));
        }
        Ok(Distribution(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Distribution(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut p = vec![0.0; n];
        p[k] = 1.0;
        Distribution(p)
    }

    pub(crate) fn from_softmax(logits: &[f64]) -> Self {
        Distribution(softmax(logits))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Most probable class, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy(q: &Distribution) -> f64 {
    -q.0.iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// `q(c|x) = softmax(W x)`; row `c` of `weights` is the class vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentModel {
    pub weights: Matrix,
}

impl SentimentModel {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        SentimentModel {
            weights: Matrix::zeros(num_classes, dim),
        }
    }

    pub fn gaussian<R: Rng + ?Sized>(num_classes: usize, dim: usize, std: f64, rng: &mut R) -> Self {
        SentimentModel {
            weights: Matrix::gaussian(num_classes, dim, std, rng),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.weights.matvec(x)
    }

    pub fn posterior(&self, x: &FeatureVector) -> Result<Distribution> {
        posterior(self, x)
    }
}

pub fn posterior(model: &SentimentModel, x: &FeatureVector) -> Result<Distribution> {
    if x.dim() != model.dim() {
        return Err(Error::Invalid(format!(
            "feature dimension {} does not match model dimension {}",
            x.dim(),
            model.dim()
        )));
    }
    if x.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("document features".into()));
    }
    let logits = model.logits(x.as_slice());
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("classifier logits".into()));
    }
    Ok(Distribution::from_softmax(&logits))
}

/// Scores `φ(w_o, w_t, c) = I(w_t ∈ K) ⟨a_c, w_o⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpinionModel {
    /// Row `c` is the polarity vector `a_c`.
    pub polarity: Matrix,
    /// Row `o` is the embedding of opinion word `o`.
    pub opinion_emb: Matrix,
    /// Target-word ids relevant to this aspect.
    pub targets: BTreeSet<usize>,
}

impl OpinionModel {
    pub fn num_classes(&self) -> usize {
        self.polarity.rows()
    }

    pub fn num_opinions(&self) -> usize {
        self.opinion_emb.rows()
    }

    pub fn dim(&self) -> usize {
        self.polarity.cols()
    }

    pub fn is_relevant(&self, target: usize) -> bool {
        self.targets.contains(&target)
    }

    pub fn phi(&self, opinion: usize, target: usize, class: usize) -> f64 {
        if self.is_relevant(target) {
            dot(self.polarity.row(class), self.opinion_emb.row(opinion))
        } else {
            0.0
        }
    }

    /// Scores of every opinion word for `(target, class)`.
    pub fn scores(&self, target: usize, class: usize) -> Vec<f64> {
        (0..self.num_opinions())
            .map(|o| self.phi(o, target, class))
            .collect()
    }

    /// `log p(· | class, target)` over the opinion vocabulary.
    pub fn opinion_log_probs(&self, target: usize, class: usize) -> Vec<f64> {
        log_softmax(&self.scores(target, class))
    }

    pub fn opinion_softmax(&self, target: usize, class: usize) -> Distribution {
        Distribution::from_softmax(&self.scores(target, class))
    }

    /// Exact Bayes posterior `p(c | w_t, w_o) ∝ p(w_o | c, w_t) p(c)`.
    pub fn true_posterior(&self, opinion: usize, target: usize, prior: &Distribution) -> Result<Distribution> {
        true_posterior(self, opinion, target, prior)
    }
}

pub fn true_posterior(
    model: &OpinionModel,
    opinion: usize,
    target: usize,
    prior: &Distribution,
) -> Result<Distribution> {
    let log_joint: Vec<f64> = (0..model.num_classes())
        .map(|c| model.opinion_log_probs(target, c)[opinion] + prior.probs()[c].ln())
        .collect();
    if log_joint.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Invalid("joint probability is zero for every class".into()));
    }
    Ok(Distribution::from_softmax(&log_joint))
}

/// Prior `p(c)`, either fixed uniform or a learned logit vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PriorModel {
    Uniform,
    Learned(Vec<f64>),
}

impl PriorModel {
    pub fn distribution(&self, num_classes: usize) -> Distribution {
        match self {
            PriorModel::Uniform => Distribution::uniform(num_classes),
            PriorModel::Learned(logits) => Distribution::from_softmax(logits),
        }
    }

    pub fn log_probs(&self, num_classes: usize) -> Vec<f64> {
        match self {
            PriorModel::Uniform => vec![-(num_classes as f64).ln(); num_classes],
            PriorModel::Learned(logits) => log_softmax(logits),
        }
    }
}

/// Everything learned for one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectModel {
    pub name: String,
    pub sentiment: SentimentModel,
    pub opinion: OpinionModel,
    pub prior: PriorModel,
}

impl AspectModel {
    pub fn num_classes(&self) -> usize {
        self.sentiment.num_classes()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct VocabRecord {
    hash: String,
    words: Vec<String>,
    counts: Vec<u64>,
}

impl VocabRecord {
    fn new(v: &Vocab) -> Self {
        VocabRecord {
            hash: v.content_hash(),
            words: v.words().to_vec(),
            counts: (0..v.len()).map(|i| v.freq(i)).collect(),
        }
    }

    fn restore(&self, which: &'static str) -> Result<Vocab> {
        if self.counts.len() != self.words.len() {
            return Err(Error::Invalid(format!("{which} vocabulary has mismatched counts")));
        }
        let v = Vocab::from_counts(self.words.iter().cloned().zip(self.counts.iter().copied()));
        let found = v.content_hash();
        if found != self.hash {
            return Err(Error::VocabMismatch {
                which,
                expected: self.hash.clone(),
                found,
            });
        }
        Ok(v)
    }
}

/// A trained model set with the vocabularies its ids refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub num_classes: usize,
    pub features: Vocab,
    pub opinions: Vocab,
    pub targets: Vocab,
    pub aspects: Vec<AspectModel>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    num_classes: usize,
    feature_dim: usize,
    embedding_dim: usize,
    features: VocabRecord,
    opinions: VocabRecord,
    targets: VocabRecord,
    aspects: Vec<AspectModel>,
}

const CHECKPOINT_FORMAT: &str = "pairsent-checkpoint-v1";

impl Checkpoint {
    pub fn aspect(&self, name: &str) -> Option<&AspectModel> {
        self.aspects.iter().find(|a| a.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            num_classes: self.num_classes,
            feature_dim: self.features.len(),
            embedding_dim: self.aspects.first().map_or(0, |a| a.opinion.dim()),
            features: VocabRecord::new(&self.features),
            opinions: VocabRecord::new(&self.opinions),
            targets: VocabRecord::new(&self.targets),
            aspects: self.aspects.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("unknown checkpoint format `{}`", file.format)));
        }
        let features = file.features.restore("features")?;
        let opinions = file.opinions.restore("opinions")?;
        let targets = file.targets.restore("targets")?;
        for a in &file.aspects {
            let ok = a.sentiment.num_classes() == file.num_classes
                && a.sentiment.dim() == features.len()
                && a.opinion.num_classes() == file.num_classes
                && a.opinion.num_opinions() == opinions.len()
                && a.opinion.targets.iter().all(|t| *t < targets.len());
            if !ok {
                return Err(Error::Invalid(format!(
                    "checkpoint aspect `{}` has inconsistent dimensions",
                    a.name
                )));
            }
        }
        Ok(Checkpoint {
            num_classes: file.num_classes,
            features,
            opinions,
            targets,
            aspects: file.aspects,
        })
    }

    /// Rejects a feature vocabulary other than the one trained against.
    pub fn check_features(&self, vocab: &Vocab) -> Result<()> {
        let (expected, found) = (self.features.content_hash(), vocab.content_hash());
        if expected != found {
            return Err(Error::VocabMismatch {
                which: "features",
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opinion_model(rng: &mut ChaCha8Rng, classes: usize, vo: usize, e: usize) -> OpinionModel {
        OpinionModel {
            polarity: Matrix::gaussian(classes, e, 1.0, rng),
            opinion_emb: Matrix::gaussian(vo, e, 1.0, rng),
            targets: [0usize, 2].into_iter().collect(),
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let m = SentimentModel::zeros(3, 4);
        let q = m.posterior(&FeatureVector(vec![0.5, 0.5, 0.5, 0.5])).unwrap();
        for p in q.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_two_class_softmax() {
        // logits (1, 1 + ln 3)
        let m = SentimentModel {
            weights: Matrix::from_rows(&[vec![1.0], vec![1.0 + 3f64.ln()]]),
        };
        let q = m.posterior(&FeatureVector(vec![1.0])).unwrap();
        assert!((q.probs()[0] - 0.25).abs() < 1e-15);
        assert!((q.probs()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn posterior_matches_naive_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = SentimentModel::gaussian(4, 6, 0.5, &mut rng);
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q = m.posterior(&FeatureVector(x.clone())).unwrap();
            let exps: Vec<f64> = (0..4)
                .map(|c| (0..6).map(|d| m.weights.get(c, d) * x[d]).sum::<f64>().exp())
                .collect();
            let z: f64 = exps.iter().sum();
            for c in 0..4 {
                assert!((q.probs()[c] - exps[c] / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_rejects_non_finite_and_wrong_dim() {
        let m = SentimentModel::zeros(2, 2);
        assert!(m.posterior(&FeatureVector(vec![f64::NAN, 0.0])).is_err());
        assert!(m.posterior(&FeatureVector(vec![0.0])).is_err());
    }

    #[test]
    fn phi_indicator_and_dot() {
        let mut m = OpinionModel {
            polarity: Matrix::from_rows(&[vec![1.0, 0.0, 0.0]]),
            opinion_emb: Matrix::from_rows(&[vec![5.0, 0.0, 0.0]]),
            targets: [3usize].into_iter().collect(),
        };
        assert_eq!(m.phi(0, 3, 0), 5.0);
        assert_eq!(m.phi(0, 4, 0), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        m = opinion_model(&mut rng, 2, 5, 4);
        for o in 0..5 {
            for c in 0..2 {
                let independent: f64 = (0..4)
                    .map(|k| m.polarity.get(c, k) * m.opinion_emb.get(o, k))
                    .sum();
                assert!((m.phi(o, 0, c) - independent).abs() < 1e-14);
                assert_eq!(m.phi(o, 1, c), 0.0);
            }
        }
    }

    #[test]
    fn opinion_softmax_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = opinion_model(&mut rng, 2, 4, 3);
        for c in 0..2 {
            let p = m.opinion_softmax(0, c);
            assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        m.polarity = Matrix::zeros(2, 3);
        assert!(m.opinion_softmax(0, 0).probs().iter().all(|p| (p - 0.25).abs() < 1e-15));
        let single = OpinionModel {
            polarity: Matrix::from_rows(&[vec![2.0]]),
            opinion_emb: Matrix::from_rows(&[vec![3.0]]),
            targets: [0usize].into_iter().collect(),
        };
        assert_eq!(single.opinion_softmax(0, 0).probs(), &[1.0]);
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(&Distribution::uniform(2)) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&Distribution::one_hot(3, 1)), 0.0);
        // -(1/4 ln 1/4 + 3/4 ln 3/4), evaluated by hand to 16 digits
        let h = entropy(&Distribution::new(vec![0.25, 0.75]).unwrap());
        assert!((h - 0.562_335_144_618_808_7).abs() < 1e-15);
    }

    #[test]
    fn true_posterior_cases() {
        let flat = OpinionModel {
            polarity: Matrix::zeros(2, 2),
            opinion_emb: Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            targets: [0usize].into_iter().collect(),
        };
        let p = flat.true_posterior(1, 0, &Distribution::uniform(2)).unwrap();
        assert!((p.probs()[0] - 0.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = opinion_model(&mut rng, 3, 5, 3);
        let p = m.true_posterior(2, 0, &Distribution::one_hot(3, 1)).unwrap();
        assert_eq!(p.argmax(), 1);
        assert!((p.probs()[1] - 1.0).abs() < 1e-15);

        // Bayes rule by brute-force normalization
        let prior = Distribution::new(vec![0.2, 0.5, 0.3]).unwrap();
        let p = m.true_posterior(3, 2, &prior).unwrap();
        let joint: Vec<f64> = (0..3)
            .map(|c| {
                let scores: Vec<f64> = (0..5).map(|o| m.phi(o, 2, c).exp()).collect();
                scores[3] / scores.iter().sum::<f64>() * prior.probs()[c]
            })
            .collect();
        let z: f64 = joint.iter().sum();
        for c in 0..3 {
            assert!((p.probs()[c] - joint[c] / z).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ck = Checkpoint {
            num_classes: 2,
            features: Vocab::from_words(["a", "b", "c"]),
            opinions: Vocab::from_words(["good", "bad", "ok", "fine", "poor"]),
            targets: Vocab::from_words(["x", "y", "z"]),
            aspects: vec![AspectModel {
                name: "room".into(),
                sentiment: SentimentModel::gaussian(2, 3, 0.1, &mut rng),
                opinion: opinion_model(&mut rng, 2, 5, 4),
                prior: PriorModel::Learned(vec![0.1, -0.2]),
            }],
        };
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        assert!(ck.check_features(&Vocab::from_words(["a", "b", "c"])).is_ok());
        assert!(matches!(
            ck.check_features(&Vocab::from_words(["a", "c", "b"])),
            Err(Error::VocabMismatch { .. })
        ));
        let tampered = ck.to_json().unwrap().replace("\"good\"", "\"great\"");
        assert!(matches!(
            Checkpoint::from_json(&tampered),
            Err(Error::VocabMismatch { .. })
        ));
    }
}
