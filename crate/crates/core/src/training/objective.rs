//! Batch objective and its analytic gradient.
//!
//! For each document `x` with posterior `q = softmax(W x)` and each sampled
//! pair `(w_o, w_t)` the data term is `E_q[f(c)] + α H(q)`, where `f(c)` is
//! `log p(w_o|c,w_t) [+ log p(c)]` for the exact objectives and the
//! negative-sampling surrogate for the approximate one. The regularizer adds
//! `β Σ_{i≠j} -d(q_i, q_j) s_ij` and weight decay subtracts
//! `λ (‖W‖² + ‖A‖²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, log_sigmoid, log_softmax, sigmoid, softmax, Matrix};
use crate::model::{AspectModel, PriorModel};

use super::regularizer::OpinionSimilarity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectiveKind {
    /// Exact softmax likelihood with the prior term `log p(c)`.
    ExactL1,
    /// Exact softmax likelihood, uniform prior dropped.
    ExactL2,
    /// Negative-sampling surrogate with `log p(c)`.
    NegSamplingL3,
}

impl ObjectiveKind {
    pub fn is_exact(self) -> bool {
        !matches!(self, ObjectiveKind::NegSamplingL3)
    }

    fn uses_prior(self) -> bool {
        !matches!(self, ObjectiveKind::ExactL2)
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "EXACT_L1" | "L1" => Ok(ObjectiveKind::ExactL1),
            "EXACT_L2" | "L2" => Ok(ObjectiveKind::ExactL2),
            "NEG_SAMPLING_L3" | "L3" => Ok(ObjectiveKind::NegSamplingL3),
            other => Err(Error::Config(format!("unknown objective `{other}`"))),
        }
    }
}

impl std::fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectiveKind::ExactL1 => "EXACT_L1",
            ObjectiveKind::ExactL2 => "EXACT_L2",
            ObjectiveKind::NegSamplingL3 => "NEG_SAMPLING_L3",
        })
    }
}

/// One sampled pair as vocabulary ids, with its negatives when the
/// negative-sampling objective is used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIds {
    pub opinion: usize,
    pub target: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Document features after any dropout.
    pub features: Vec<f64>,
    pub pairs: Vec<PairIds>,
    /// Opinion word representing the document in the regularizer.
    pub reg_opinion: Option<usize>,
}

/// A frozen mini-batch: all sampling already done.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub examples: Vec<Example>,
}

impl Batch {
    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub alpha: f64,
    pub beta: f64,
    pub weight_decay: f64,
    /// Test hook: flips the sign of the entropy gradient so verification
    /// can be shown to catch it.
    #[doc(hidden)]
    pub fault_entropy_sign: bool,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind, alpha: f64) -> Self {
        ObjectiveSpec {
            kind,
            alpha,
            beta: 0.0,
            weight_decay: 0.0,
            fault_entropy_sign: false,
        }
    }

    pub fn with_regularizer(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// Terms of the objective, each already weighted.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ObjectiveValue {
    /// `Σ E_q[f(c)]`
    pub expected: f64,
    /// `α Σ H(q)`, one entropy per pair
    pub entropy: f64,
    /// `β Σ R`
    pub regularizer: f64,
    /// `-λ (‖W‖² + ‖A‖²)`
    pub decay: f64,
}

impl ObjectiveValue {
    pub fn total(&self) -> f64 {
        self.expected + self.entropy + self.regularizer + self.decay
    }

    /// Lower bound part: expected log-likelihood plus weighted entropy.
    pub fn bound(&self) -> f64 {
        self.expected + self.entropy
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in [
            ("expected log-likelihood term", self.expected),
            ("entropy term", self.entropy),
            ("regularizer term", self.regularizer),
            ("weight decay term", self.decay),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} ({v})")));
            }
        }
        Ok(())
    }
}

/// Gradient with the same shapes as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Matrix,
    pub polarity: Matrix,
    pub opinion_emb: Matrix,
    /// Empty when the prior is not learned.
    pub prior: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &AspectModel) -> Self {
        Gradients {
            weights: Matrix::zeros(model.sentiment.weights.rows(), model.sentiment.weights.cols()),
            polarity: Matrix::zeros(model.opinion.polarity.rows(), model.opinion.polarity.cols()),
            opinion_emb: Matrix::zeros(
                model.opinion.opinion_emb.rows(),
                model.opinion.opinion_emb.cols(),
            ),
            prior: match &model.prior {
                PriorModel::Learned(l) => vec![0.0; l.len()],
                PriorModel::Uniform => Vec::new(),
            },
        }
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.weights.as_slice(),
            self.polarity.as_slice(),
            self.opinion_emb.as_slice(),
            &self.prior,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// Trainable parameters in the order matching [`Gradients::slices`].
pub fn param_slices_mut(model: &mut AspectModel) -> [&mut [f64]; 4] {
    let prior: &mut [f64] = match &mut model.prior {
        PriorModel::Learned(l) => l.as_mut_slice(),
        PriorModel::Uniform => &mut [],
    };
    [
        model.sentiment.weights.as_mut_slice(),
        model.opinion.polarity.as_mut_slice(),
        model.opinion.opinion_emb.as_mut_slice(),
        prior,
    ]
}

pub fn flatten_params(model: &AspectModel) -> Vec<f64> {
    let mut m = model.clone();
    param_slices_mut(&mut m).iter().flat_map(|s| s.iter().copied()).collect()
}

pub fn set_flat_params(model: &mut AspectModel, flat: &[f64]) {
    let mut offset = 0;
    for s in param_slices_mut(model) {
        s.copy_from_slice(&flat[offset..offset + s.len()]);
        offset += s.len();
    }
    assert_eq!(offset, flat.len(), "parameter count");
}

/// Per-class data term `f(c)` for one pair, and optionally the gradient of
/// `Σ_c weight_c f(c)` with respect to the opinion parameters.
fn pair_terms(
    model: &AspectModel,
    kind: ObjectiveKind,
    pair: &PairIds,
    log_prior: Option<&[f64]>,
    class_weights: Option<(&[f64], &mut Gradients)>,
) -> Vec<f64> {
    let opinion = &model.opinion;
    let classes = model.num_classes();
    let relevant = opinion.is_relevant(pair.target);
    let mut f = vec![0.0; classes];
    let mut grads = class_weights;

    for (c, fc) in f.iter_mut().enumerate() {
        match kind {
            ObjectiveKind::ExactL1 | ObjectiveKind::ExactL2 => {
                let scores = opinion.scores(pair.target, c);
                let logp = log_softmax(&scores);
                *fc = logp[pair.opinion];
                if let (true, Some((w, g))) = (relevant, grads.as_mut()) {
                    // d/dφ_o' log p(o|c) = δ_o'o - p(o'|c)
                    let probs = softmax(&scores);
                    let a_c = opinion.polarity.row(c).to_vec();
                    for (o2, p) in probs.iter().enumerate() {
                        let dphi = w[c] * (f64::from(u8::from(o2 == pair.opinion)) - p);
                        if dphi != 0.0 {
                            g.polarity.add_to_row(c, dphi, opinion.opinion_emb.row(o2));
                            g.opinion_emb.add_to_row(o2, dphi, &a_c);
                        }
                    }
                }
            }
            ObjectiveKind::NegSamplingL3 => {
                let phi_pos = opinion.phi(pair.opinion, pair.target, c);
                *fc = log_sigmoid(phi_pos)
                    + pair
                        .negatives
                        .iter()
                        .map(|&n| log_sigmoid(-opinion.phi(n, pair.target, c)))
                        .sum::<f64>();
                if let (true, Some((w, g))) = (relevant, grads.as_mut()) {
                    let a_c = opinion.polarity.row(c).to_vec();
                    let dpos = w[c] * (1.0 - sigmoid(phi_pos));
                    g.polarity.add_to_row(c, dpos, opinion.opinion_emb.row(pair.opinion));
                    g.opinion_emb.add_to_row(pair.opinion, dpos, &a_c);
                    for &n in &pair.negatives {
                        let dneg = -w[c] * sigmoid(opinion.phi(n, pair.target, c));
                        g.polarity.add_to_row(c, dneg, opinion.opinion_emb.row(n));
                        g.opinion_emb.add_to_row(n, dneg, &a_c);
                    }
                }
            }
        }
        if let Some(lp) = log_prior {
            *fc += lp[c];
        }
    }
    f
}

/// Per-class data terms `f(c)` for a pair; exposed for estimators and tests.
pub fn data_terms(model: &AspectModel, kind: ObjectiveKind, pair: &PairIds) -> Vec<f64> {
    let classes = model.num_classes();
    let log_prior = kind.uses_prior().then(|| model.prior.log_probs(classes));
    pair_terms(model, kind, pair, log_prior.as_deref(), None)
}

/// Adds `dL/dq` (chained through the softmax) to the logit gradient.
fn softmax_backward(q: &[f64], dq: &[f64], dz: &mut [f64]) {
    let mean: f64 = q.iter().zip(dq).map(|(p, g)| p * g).sum();
    for k in 0..q.len() {
        dz[k] += q[k] * (dq[k] - mean);
    }
}

/// Evaluates the objective on a frozen batch; fills `grads` (which must be
/// zeroed and shaped like `model`) with its gradient when given.
pub fn evaluate(
    model: &AspectModel,
    batch: &Batch,
    spec: &ObjectiveSpec,
    sim: Option<&OpinionSimilarity>,
    mut grads: Option<&mut Gradients>,
) -> Result<ObjectiveValue> {
    let classes = model.num_classes();
    let log_prior = spec.kind.uses_prior().then(|| model.prior.log_probs(classes));
    let prior_probs = match (&model.prior, spec.kind.uses_prior()) {
        (PriorModel::Learned(_), true) => Some(model.prior.distribution(classes)),
        _ => None,
    };
    let entropy_sign = if spec.fault_entropy_sign { -1.0 } else { 1.0 };

    let mut value = ObjectiveValue::default();
    let mut posteriors = Vec::with_capacity(batch.examples.len());
    let mut logit_grads = Vec::with_capacity(batch.examples.len());

    for ex in &batch.examples {
        let z = model.sentiment.logits(&ex.features);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier logits".into()));
        }
        let q = softmax(&z);
        let log_q = log_softmax(&z);
        let h: f64 = -q.iter().zip(&log_q).map(|(p, l)| p * l).sum::<f64>();
        let mut dz = vec![0.0; classes];

        for pair in &ex.pairs {
            let f = pair_terms(
                model,
                spec.kind,
                pair,
                log_prior.as_deref(),
                grads.as_deref_mut().map(|g| (q.as_slice(), g)),
            );
            value.expected += q.iter().zip(&f).map(|(p, fc)| p * fc).sum::<f64>();
            value.entropy += spec.alpha * h;

            if let Some(g) = grads.as_deref_mut() {
                // dH/dq_c = -(log q_c + 1)
                let dq: Vec<f64> = f
                    .iter()
                    .zip(&log_q)
                    .map(|(fc, lq)| fc - entropy_sign * spec.alpha * (lq + 1.0))
                    .collect();
                softmax_backward(&q, &dq, &mut dz);
                if let Some(p) = &prior_probs {
                    for k in 0..classes {
                        g.prior[k] += q[k] - p.probs()[k];
                    }
                }
            }
        }
        posteriors.push(q);
        logit_grads.push(dz);
    }

    if spec.beta != 0.0 {
        if let Some(sim) = sim {
            let n = batch.examples.len();
            let mut dq: Vec<Vec<f64>> = vec![vec![0.0; classes]; n];
            let mut r = 0.0;
            for i in 0..n {
                let Some(oi) = batch.examples[i].reg_opinion else { continue };
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let Some(oj) = batch.examples[j].reg_opinion else { continue };
                    let s = sim.score(oi, oj);
                    if s == 0.0 {
                        continue;
                    }
                    let (qi, qj) = (&posteriors[i], &posteriors[j]);
                    let d: f64 = qi.iter().zip(qj).map(|(a, b)| (a - b) * (a - b)).sum();
                    r -= d * s;
                    // only the (i, j) term here; (j, i) is visited separately
                    for c in 0..classes {
                        let diff = qi[c] - qj[c];
                        dq[i][c] -= spec.beta * s * 2.0 * diff;
                        dq[j][c] += spec.beta * s * 2.0 * diff;
                    }
                }
            }
            value.regularizer = spec.beta * r;
            if grads.is_some() {
                for i in 0..n {
                    softmax_backward(&posteriors[i], &dq[i], &mut logit_grads[i]);
                }
            }
        }
    }

    if spec.weight_decay != 0.0 {
        value.decay = -spec.weight_decay
            * (model.sentiment.weights.squared_norm() + model.opinion.polarity.squared_norm());
    }

    if let Some(g) = grads {
        for (ex, dz) in batch.examples.iter().zip(&logit_grads) {
            for (c, d) in dz.iter().enumerate() {
                if *d != 0.0 {
                    axpy(*d, &ex.features, g.weights.row_mut(c));
                }
            }
        }
        if spec.weight_decay != 0.0 {
            let wd = -2.0 * spec.weight_decay;
            axpy(wd, model.sentiment.weights.as_slice(), g.weights.as_mut_slice());
            axpy(wd, model.opinion.polarity.as_slice(), g.polarity.as_mut_slice());
        }
    }
    Ok(value)
}

/// Exact lower bound `Σ E_q[log p(w_o|c,w_t) (+ log p(c))] + α Σ H(q)` on a
/// batch; L1 keeps the prior term, L2 drops it.
pub fn elbo_exact(model: &AspectModel, batch: &Batch, kind: ObjectiveKind, alpha: f64) -> Result<f64> {
    if !kind.is_exact() {
        return Err(Error::Config("elbo_exact needs EXACT_L1 or EXACT_L2".into()));
    }
    if batch.is_empty() {
        return Ok(0.0);
    }
    Ok(evaluate(model, batch, &ObjectiveSpec::new(kind, alpha), None, None)?.bound())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OpinionModel, SentimentModel};
    use crate::training::gradcheck::gradient_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn toy(rng: &mut ChaCha8Rng, classes: usize, learned_prior: bool) -> (AspectModel, Batch) {
        let (d, e, vo) = (6, 4, 7);
        let model = AspectModel {
            name: "toy".into(),
            sentiment: SentimentModel::gaussian(classes, d, 0.8, rng),
            opinion: OpinionModel {
                polarity: Matrix::gaussian(classes, e, 0.8, rng),
                opinion_emb: Matrix::gaussian(vo, e, 0.8, rng),
                targets: [0usize, 1].into_iter().collect(),
            },
            prior: if learned_prior {
                PriorModel::Learned((0..classes).map(|_| rng.random_range(-1.0..1.0)).collect())
            } else {
                PriorModel::Uniform
            },
        };
        let examples = (0..4)
            .map(|i| Example {
                features: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                pairs: (0..3)
                    .map(|k| PairIds {
                        opinion: (i + 2 * k) % vo,
                        // target 2 is outside K and must contribute nothing
                        target: (i + k) % 3,
                        negatives: vec![(i + k + 1) % vo, (i + 3 * k + 2) % vo, 5],
                    })
                    .collect(),
                reg_opinion: Some(i % vo),
            })
            .collect();
        (model, Batch { examples })
    }

    #[test]
    fn one_hot_posterior_reduces_to_log_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (mut model, _) = toy(&mut rng, 2, false);
        // huge logit gap puts q on class 1
        model.sentiment.weights = Matrix::from_rows(&[vec![-400.0], vec![400.0]]);
        let batch = Batch {
            examples: vec![Example {
                features: vec![1.0],
                pairs: vec![PairIds {
                    opinion: 3,
                    target: 0,
                    negatives: vec![],
                }],
                reg_opinion: None,
            }],
        };
        let v = elbo_exact(&model, &batch, ObjectiveKind::ExactL1, 1.0).unwrap();
        let expected = model.opinion.opinion_log_probs(0, 1)[3] + 0.5f64.ln();
        assert!((v - expected).abs() < 1e-12);
        assert_eq!(elbo_exact(&model, &Batch::default(), ObjectiveKind::ExactL1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (kind, learned) in [
            (ObjectiveKind::ExactL1, true),
            (ObjectiveKind::ExactL1, false),
            (ObjectiveKind::ExactL2, false),
            (ObjectiveKind::NegSamplingL3, true),
        ] {
            for classes in [2, 3] {
                let (model, batch) = toy(&mut rng, classes, learned);
                let spec = ObjectiveSpec::new(kind, 0.3).with_weight_decay(0.01);
                let err = gradient_check(&model, &batch, &spec, None, 1e-5).unwrap();
                assert!(err < 1e-6, "{kind:?} C={classes}: {err}");
            }
        }
    }

    #[test]
    fn flipped_entropy_sign_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (model, batch) = toy(&mut rng, 3, false);
        let mut spec = ObjectiveSpec::new(ObjectiveKind::ExactL2, 1.0);
        spec.fault_entropy_sign = true;
        let err = gradient_check(&model, &batch, &spec, None, 1e-5).unwrap();
        assert!(err > 1e-3, "{err}");
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (model, _) = toy(&mut rng, 3, true);
        let flat = flatten_params(&model);
        let mut other = model.clone();
        set_flat_params(&mut other, &vec![0.0; flat.len()]);
        set_flat_params(&mut other, &flat);
        assert_eq!(other, model);
        assert_eq!(flat.len(), Gradients::zeros_like(&model).flatten().len());
    }
}
