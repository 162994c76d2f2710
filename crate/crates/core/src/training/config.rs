use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::objective::ObjectiveKind;
use super::optimizer::OptimizerConfig;
use super::sampler::NegativeDistribution;

/// How the gradient of the expectation over classes is obtained for the
/// sentiment classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GradEstimator {
    ExactExpectation,
    LikelihoodRatio(usize),
}

impl FromStr for GradEstimator {
    type Err = Error;

    /// `exact` or `likelihood_ratio:<K>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "exact" || s == "exact_expectation" {
            return Ok(GradEstimator::ExactExpectation);
        }
        if let Some(k) = s
            .strip_prefix("likelihood_ratio:")
            .or_else(|| s.strip_prefix("lr:"))
        {
            let k: usize = k
                .parse()
                .map_err(|_| Error::Config(format!("bad sample count `{k}`")))?;
            return Ok(GradEstimator::LikelihoodRatio(k));
        }
        Err(Error::Config(format!("unknown gradient estimator `{s}`")))
    }
}

impl TryFrom<String> for GradEstimator {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for GradEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradEstimator::ExactExpectation => f.write_str("exact"),
            GradEstimator::LikelihoodRatio(k) => write!(f, "likelihood_ratio:{k}"),
        }
    }
}

impl From<GradEstimator> for String {
    fn from(g: GradEstimator) -> String {
        g.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Uniform,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusProfile {
    Reviews,
    Clinical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Entropy weight; unset means 0.1 for the negative-sampling objective
    /// and 1 for the exact ones.
    pub alpha: Option<f64>,
    pub beta: f64,
    pub gamma: f64,
    pub negatives: usize,
    pub pairs_per_doc: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub objective: ObjectiveKind,
    pub grad_estimator: GradEstimator,
    pub prior: PriorKind,
    pub negative_distribution: NegativeDistribution,
    pub optimizer: OptimizerConfig,
    pub num_classes: usize,
    /// Opinion embedding width when no pretrained embeddings are given.
    pub embedding_dim: usize,
    pub init_std: f64,
    pub min_count: u64,
    pub profile: CorpusProfile,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: None,
            beta: 0.2,
            gamma: 0.8,
            negatives: 10,
            pairs_per_doc: 5,
            batch_size: 64,
            epochs: 20,
            seed: 42,
            weight_decay: 1e-3,
            dropout: 0.3,
            objective: ObjectiveKind::NegSamplingL3,
            grad_estimator: GradEstimator::ExactExpectation,
            prior: PriorKind::Uniform,
            negative_distribution: NegativeDistribution::Unigram75,
            optimizer: OptimizerConfig::default(),
            num_classes: 2,
            embedding_dim: 50,
            init_std: 0.01,
            min_count: 1,
            profile: CorpusProfile::Reviews,
        }
    }
}

impl TrainConfig {
    pub fn effective_alpha(&self) -> f64 {
        self.alpha.unwrap_or(match self.objective {
            ObjectiveKind::NegSamplingL3 => 0.1,
            _ => 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.effective_alpha() < 0.0 || !self.effective_alpha().is_finite() {
            return fail("alpha must be non-negative");
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return fail("beta must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if self.negatives == 0 {
            return fail("at least one negative sample is required");
        }
        if let GradEstimator::LikelihoodRatio(0) = self.grad_estimator {
            return fail("likelihood-ratio estimator needs K >= 1");
        }
        if self.pairs_per_doc == 0 || self.batch_size == 0 {
            return fail("pairs_per_doc and batch_size must be positive");
        }
        if self.num_classes < 2 {
            return fail("need at least two polarity classes");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 || self.init_std < 0.0 || self.embedding_dim == 0 {
            return fail("weight_decay and init_std must be non-negative, embedding_dim positive");
        }
        Ok(())
    }

    /// TOML with any subset of the fields.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_published_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.effective_alpha(), 0.1);
        assert_eq!(c.negatives, 10);
        assert_eq!(c.weight_decay, 1e-3);
        assert_eq!(c.dropout, 0.3);
        assert_eq!(c.pairs_per_doc, 5);
        let exact = TrainConfig {
            objective: ObjectiveKind::ExactL2,
            ..Default::default()
        };
        assert_eq!(exact.effective_alpha(), 1.0);
    }

    #[test]
    fn parse_partial_toml() {
        let c = TrainConfig::parse(
            "alpha = 0.5\nobjective = \"EXACT_L1\"\ngrad_estimator = \"likelihood_ratio:8\"\n\
             [optimizer]\nkind = \"sgd\"\nlearning_rate = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.alpha, Some(0.5));
        assert_eq!(c.objective, ObjectiveKind::ExactL1);
        assert_eq!(c.grad_estimator, GradEstimator::LikelihoodRatio(8));
        assert_eq!(c.optimizer, OptimizerConfig::Sgd { learning_rate: 0.1 });
        assert!(TrainConfig::parse("gamma = 1.5\n").is_err());
        assert!(TrainConfig::parse("negatives = 0\n").is_err());
        assert!(TrainConfig::parse("bogus = 1\n").is_err());
    }
}
