//! Self-checks behind the `check` subcommand.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::evaluation::hungarian;
use crate::linalg::{log_sum_exp, Matrix};
use crate::model::{AspectModel, OpinionModel, PriorModel, SentimentModel};
use crate::training::{
    elbo_exact, gradient_check, pair_weight, sample_weighted, Batch, Example, NegativeDistribution,
    NegativeSampler, ObjectiveKind, ObjectiveSpec, OpinionSimilarity, PairIds,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CheckOptions {
    pub seed: u64,
    /// Flip the sign of the entropy gradient; the gradient checks must catch it.
    pub fault_entropy_sign: bool,
}

/// Down-sized random model and batch: D=6, E=4, V_o=7, two relevant
/// targets and one irrelevant one, three pairs and three negatives per
/// document.
pub fn toy_problem<R: Rng + ?Sized>(
    rng: &mut R,
    classes: usize,
    docs: usize,
    learned_prior: bool,
) -> (AspectModel, Batch) {
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
    let examples = (0..docs)
        .map(|_| Example {
            features: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            pairs: (0..3)
                .map(|_| PairIds {
                    opinion: rng.random_range(0..vo),
                    target: rng.random_range(0..3),
                    negatives: (0..3).map(|_| rng.random_range(0..vo)).collect(),
                })
                .collect(),
            reg_opinion: Some(rng.random_range(0..vo)),
        })
        .collect();
    (model, Batch { examples })
}

/// `log p(w_o|w_t) = log Σ_c p(c) p(w_o|c,w_t)` summed over the batch.
pub fn brute_force_log_likelihood(model: &AspectModel, batch: &Batch) -> f64 {
    let classes = model.num_classes();
    let log_prior = model.prior.log_probs(classes);
    let mut total = 0.0;
    for ex in &batch.examples {
        for p in &ex.pairs {
            let joint: Vec<f64> = (0..classes)
                .map(|c| log_prior[c] + model.opinion.opinion_log_probs(p.target, c)[p.opinion])
                .collect();
            total += log_sum_exp(&joint);
        }
    }
    total
}

/// Pearson chi-square goodness of fit; returns the upper-tail p-value.
/// Cells with zero expected probability must have zero counts.
pub fn chi_square_p_value(counts: &[u64], probs: &[f64]) -> Result<f64> {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            if o > 0 {
                return Ok(0.0);
            }
            continue;
        }
        let e = p * n as f64;
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    if cells < 2 {
        return Err(Error::Invalid("chi-square needs at least two cells".into()));
    }
    let dist = ChiSquared::new((cells - 1) as f64).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(dist.sf(stat))
}

fn outcome(name: &str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn gradient_checks(opts: CheckOptions, rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    let cases = [
        ("gradient L1", ObjectiveKind::ExactL1, 0.7, 0.0, 0.0, true),
        ("gradient L2", ObjectiveKind::ExactL2, 1.0, 0.0, 0.0, false),
        ("gradient L3", ObjectiveKind::NegSamplingL3, 0.1, 0.0, 0.0, true),
        ("gradient full objective", ObjectiveKind::NegSamplingL3, 0.1, 0.2, 1e-3, false),
    ];
    for (name, kind, alpha, beta, wd, learned) in cases {
        let mut worst: f64 = 0.0;
        for classes in [2, 3] {
            let (model, batch) = toy_problem(rng, classes, 4, learned);
            let vectors: Vec<Vec<f64>> = (0..model.opinion.num_opinions())
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect();
            let sim = OpinionSimilarity::from_vectors(&vectors, 0.3);
            let mut spec = ObjectiveSpec::new(kind, alpha)
                .with_regularizer(beta)
                .with_weight_decay(wd);
            spec.fault_entropy_sign = opts.fault_entropy_sign;
            worst = worst.max(gradient_check(&model, &batch, &spec, Some(&sim), 1e-5)?);
        }
        out.push(outcome(name, worst < 1e-4, format!("max rel. error {worst:.2e}")));
    }

    // regularizer alone: zero data terms, s = 1 everywhere
    let mut worst: f64 = 0.0;
    for classes in [2, 3] {
        let (model, mut batch) = toy_problem(rng, classes, 4, false);
        for ex in &mut batch.examples {
            ex.pairs.clear();
        }
        let vectors = vec![vec![1.0, 0.0]; model.opinion.num_opinions()];
        let sim = OpinionSimilarity::from_vectors(&vectors, 0.8);
        let spec = ObjectiveSpec::new(ObjectiveKind::ExactL2, 0.0).with_regularizer(1.0);
        worst = worst.max(gradient_check(&model, &batch, &spec, Some(&sim), 1e-5)?);
    }
    out.push(outcome("gradient regularizer", worst < 1e-4, format!("max rel. error {worst:.2e}")));
    Ok(out)
}

fn bound_check(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut worst_gap: f64 = 0.0;
    let mut violations = 0;
    for draw in 0..100 {
        let classes = 2 + draw % 2;
        let (model, batch) = toy_problem(rng, classes, 3, draw % 4 == 0);
        let lb = elbo_exact(&model, &batch, ObjectiveKind::ExactL1, 1.0)?;
        let ll = brute_force_log_likelihood(&model, &batch);
        let prior = model.prior.distribution(classes);
        let mut kl_sum = 0.0;
        for ex in &batch.examples {
            let q = model.sentiment.logits(&ex.features);
            let q = crate::linalg::softmax(&q);
            for p in &ex.pairs {
                let post = model.opinion.true_posterior(p.opinion, p.target, &prior)?;
                kl_sum += q
                    .iter()
                    .zip(post.probs())
                    .filter(|(a, _)| **a > 0.0)
                    .map(|(a, b)| a * (a / b).ln())
                    .sum::<f64>();
            }
        }
        if lb > ll + 1e-12 {
            violations += 1;
        }
        worst_gap = worst_gap.max(((ll - lb) - kl_sum).abs());
    }
    Ok(outcome(
        "elbo bound",
        violations == 0 && worst_gap < 1e-9,
        format!("{violations} violations, max |gap - KL| {worst_gap:.2e}"),
    ))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn hungarian_check(rng: &mut ChaCha8Rng) -> Result<CheckOutcome> {
    let mut mismatches = 0;
    for i in 0..200 {
        let n = 1 + i % 6;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0..10) as f64).collect())
            .collect();
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(r, &c)| cost[r][c]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if (hungarian(&cost)?.cost(&cost) - best).abs() > 1e-9 {
            mismatches += 1;
        }
    }
    Ok(outcome("hungarian oracle", mismatches == 0, format!("{mismatches}/200 mismatches")))
}

fn sampler_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckOutcome>> {
    let draws = 100_000;
    let freqs = [50u64, 20, 9, 5, 3, 1];
    let positive = 1;
    let neg = NegativeSampler::new(&freqs, NegativeDistribution::Unigram75)?;
    let mut counts = vec![0u64; freqs.len()];
    for _ in 0..draws {
        counts[neg.draw(positive, rng)] += 1;
    }
    let probs: Vec<f64> = (0..freqs.len()).map(|w| neg.probability(w, positive)).collect();
    let p_neg = chi_square_p_value(&counts, &probs)?;

    let weights: Vec<f64> = freqs.iter().map(|&f| pair_weight(f)).collect();
    let total: f64 = weights.iter().sum();
    let mut counts = vec![0u64; freqs.len()];
    for _ in 0..draws {
        counts[sample_weighted(&weights, 1, rng)[0]] += 1;
    }
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let p_pair = chi_square_p_value(&counts, &probs)?;
    Ok(vec![
        outcome("negative sampler", p_neg > 1e-3, format!("p = {p_neg:.4}")),
        outcome("pair sampler", p_pair > 1e-3, format!("p = {p_pair:.4}")),
    ])
}

/// Runs every check; an error inside one check is reported as its failure.
pub fn run_checks(opts: CheckOptions) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = Instant::now();
    let mut out = Vec::new();
    let mut push = |name: &str, r: Result<Vec<CheckOutcome>>| match r {
        Ok(v) => out.extend(v),
        Err(e) => out.push(outcome(name, false, e.to_string())),
    };
    push("gradients", gradient_checks(opts, &mut rng));
    push("elbo bound", bound_check(&mut rng).map(|o| vec![o]));
    push("hungarian oracle", hungarian_check(&mut rng).map(|o| vec![o]));
    push("samplers", sampler_checks(&mut rng));
    log::info!("checks finished in {:.2?}", start.elapsed());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for o in run_checks(CheckOptions { seed: 42, ..Default::default() }) {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
    }

    #[test]
    fn entropy_sign_fault_is_named() {
        let failed: Vec<String> = run_checks(CheckOptions {
            seed: 42,
            fault_entropy_sign: true,
        })
        .into_iter()
        .filter(|o| !o.passed)
        .map(|o| o.name)
        .collect();
        assert!(failed.iter().any(|n| n == "gradient L1"), "{failed:?}");
    }

    #[test]
    fn chi_square_detects_mismatch() {
        assert!(chi_square_p_value(&[500, 500], &[0.5, 0.5]).unwrap() > 0.9);
        assert!(chi_square_p_value(&[700, 300], &[0.5, 0.5]).unwrap() < 1e-6);
        assert_eq!(chi_square_p_value(&[1, 5, 5], &[0.0, 0.5, 0.5]).unwrap(), 0.0);
    }
}
