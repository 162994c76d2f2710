//! Negative-word and pair sampling.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeDistribution {
    /// `freq^0.75`
    Unigram75,
    Uniform,
}

/// Draws negative opinion words, never the observed one.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl NegativeSampler {
    pub fn new(freqs: &[u64], dist: NegativeDistribution) -> Result<Self> {
        if freqs.len() < 2 {
            return Err(Error::Config(
                "negative sampling needs at least two opinion words".into(),
            ));
        }
        let weights: Vec<f64> = freqs
            .iter()
            .map(|&f| match dist {
                NegativeDistribution::Unigram75 => (f.max(1) as f64).powf(0.75),
                NegativeDistribution::Uniform => 1.0,
            })
            .collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
        Ok(NegativeSampler { weights, index })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Probability of drawing `word` given that `positive` is excluded.
    pub fn probability(&self, word: usize, positive: usize) -> f64 {
        if word == positive {
            return 0.0;
        }
        let rest: f64 = self.weights.iter().sum::<f64>() - self.weights[positive];
        self.weights[word] / rest
    }

    /// One draw, rejecting the positive word.
    pub fn draw<R: Rng + ?Sized>(&self, positive: usize, rng: &mut R) -> usize {
        loop {
            let w = self.index.sample(rng);
            if w != positive {
                return w;
            }
        }
    }

    pub fn draw_many<R: Rng + ?Sized>(&self, positive: usize, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.draw(positive, rng)).collect()
    }
}

/// Selection weight of a pair whose opinion word has corpus frequency
/// `freq`: `freq^-0.25`, favouring rare opinion words.
pub fn pair_weight(freq: u64) -> f64 {
    (freq.max(1) as f64).powf(-0.25)
}

/// Picks `k` of `weights.len()` items with probability proportional to the
/// weights: without replacement when there are at least `k` items, i.i.d.
/// otherwise.
pub fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    assert!(!weights.is_empty(), "nothing to sample from");
    if weights.len() < k {
        let index = WeightedIndex::new(weights).expect("positive weights");
        return (0..k).map(|_| index.sample(rng)).collect();
    }
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (pos, &i) in remaining.iter().enumerate() {
            u -= weights[i];
            if u < 0.0 {
                pick = pos;
                break;
            }
        }
        out.push(remaining.remove(pick));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_word_vocab_is_rejected() {
        assert!(NegativeSampler::new(&[3], NegativeDistribution::Unigram75).is_err());
    }

    #[test]
    fn never_draws_positive() {
        let s = NegativeSampler::new(&[100, 1, 1], NegativeDistribution::Unigram75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(s.draw_many(0, 1000, &mut rng).iter().all(|&w| w != 0));
        let p: f64 = (0..3).map(|w| s.probability(w, 0)).sum();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_sampling_without_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks = sample_weighted(&[1.0, 2.0, 3.0, 4.0, 5.0], 5, &mut rng);
        let mut sorted = picks.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        let picks = sample_weighted(&[1.0, 1.0], 5, &mut rng);
        assert_eq!(picks.len(), 5);
    }
}
