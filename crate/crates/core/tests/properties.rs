use std::collections::{BTreeSet, HashMap};

use pairsent::corpus::{bow_features, build_vocab, parse_jsonl, to_jsonl, Document, Sentence};
use pairsent::evaluation::{
    assigned_accuracy, evaluate, hungarian, lexicon_baseline, OpinionLexicon, TieMode,
};
use pairsent::extraction::{extract_window_all, LexiconSpec, PairSet};
use pairsent::linalg::{log_sum_exp, softmax, Matrix};
use pairsent::model::{AspectModel, Checkpoint, OpinionModel, PriorModel, SentimentModel};
use pairsent::synth::{generate, SynthConfig};
use pairsent::training::objective::flatten_params;
use pairsent::training::{
    evaluate as objective, train_step, Batch, Example, GradEstimator, Gradients, NegativeDistribution,
    NegativeSampler, ObjectiveKind, ObjectiveSpec, Optimizer, OptimizerConfig, PairIds,
};
use pairsent::verify::{brute_force_log_likelihood, chi_square_p_value};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_min_cost(cost: &[Vec<f64>]) -> f64 {
    fn go(row: usize, used: &mut Vec<bool>, cost: &[Vec<f64>]) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cost.len() {
            if !used[c] {
                used[c] = true;
                best = best.min(cost[row][c] + go(row + 1, used, cost));
                used[c] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; cost.len()], cost)
}

fn square(max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_n).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-50.0..50.0f64, n), n))
}

fn toy(rng: &mut ChaCha8Rng, classes: usize) -> AspectModel {
    AspectModel {
        name: "t".into(),
        sentiment: SentimentModel::gaussian(classes, 4, 0.5, rng),
        opinion: OpinionModel {
            polarity: Matrix::gaussian(classes, 3, 1.0, rng),
            opinion_emb: Matrix::gaussian(6, 3, 1.0, rng),
            targets: [0usize].into_iter().collect(),
        },
        prior: PriorModel::Uniform,
    }
}

fn one_pair_batch(x: Vec<f64>, opinion: usize) -> Batch {
    Batch {
        examples: vec![Example {
            features: x,
            pairs: vec![PairIds {
                opinion,
                target: 0,
                negatives: vec![],
            }],
            reg_opinion: None,
        }],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_matches_brute_force(cost in square(6)) {
        let a = hungarian(&cost).unwrap();
        prop_assert!((a.cost(&cost) - brute_min_cost(&cost)).abs() < 1e-9);
        let mut cols = a.0.clone();
        cols.sort();
        prop_assert_eq!(cols, (0..cost.len()).collect::<Vec<_>>());
    }

    #[test]
    fn hungarian_row_shift_keeps_optimality(cost in square(6), row in 0usize..6, shift in -20.0..20.0f64) {
        let mut shifted = cost.clone();
        let r = row % cost.len();
        shifted[r].iter_mut().for_each(|v| *v += shift);
        let a = hungarian(&shifted).unwrap();
        prop_assert!((a.cost(&shifted) - brute_min_cost(&shifted)).abs() < 1e-9);
        prop_assert!((a.cost(&cost) - brute_min_cost(&cost)).abs() < 1e-9);
    }

    #[test]
    fn log_sum_exp_matches_naive(v in prop::collection::vec(-5.0..5.0f64, 1..12)) {
        let naive = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        prop_assert!((log_sum_exp(&v) - naive).abs() < 1e-12);
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bow_vectors_have_unit_norm(words in prop::collection::vec("[a-e]{1,2}", 1..40)) {
        let doc = Document {
            id: "d".into(),
            sentences: vec![Sentence::unparsed(&words)],
            ..Default::default()
        };
        let vocab = build_vocab(std::slice::from_ref(&doc), 1);
        let x = bow_features(&doc, &vocab);
        let norm: f64 = x.0.iter().map(|v| v * v).sum();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_invariant_under_cluster_relabeling(
        pred in prop::collection::vec(0usize..3, 30),
        gold in prop::collection::vec(0usize..3, 30),
        perm in Just(vec![2usize, 0, 1]),
    ) {
        let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = assigned_accuracy(&pred, &gold).unwrap();
        let b = assigned_accuracy(&relabeled, &gold).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn bound_below_log_likelihood(seed in any::<u64>(), classes in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = toy(&mut rng, classes);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let batch = one_pair_batch(x, rng.random_range(0..6));
        let v = objective(&m, &batch, &ObjectiveSpec::new(ObjectiveKind::ExactL1, 1.0), None, None).unwrap();
        prop_assert!(v.bound() <= brute_force_log_likelihood(&m, &batch) + 1e-12);
    }
}

#[test]
fn model_evaluation_invariant_under_row_permutation() {
    let s = generate(&SynthConfig {
        num_docs: 200,
        ..Default::default()
    })
    .unwrap();
    let vocab = build_vocab(&s.docs, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = SentimentModel::gaussian(2, vocab.len(), 1.0, &mut rng);
    let mut swapped = model.clone();
    let rows = [model.weights.row(1).to_vec(), model.weights.row(0).to_vec()];
    swapped.weights = Matrix::from_rows(&rows);
    let enc = pairsent::corpus::BowEncoder { vocab };
    let a = evaluate(&model, &s.docs, &enc, "aspect0").unwrap();
    let b = evaluate(&swapped, &s.docs, &enc, "aspect0").unwrap();
    assert_eq!(a, b);
    assert!(a >= 0.5);
}

#[test]
fn random_predictions_score_at_least_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let gold: Vec<usize> = (0..5000).map(|i| i % 2).collect();
    let pred: Vec<usize> = (0..5000).map(|_| rng.random_range(0..2)).collect();
    let acc = assigned_accuracy(&pred, &gold).unwrap();
    assert!((0.5..0.53).contains(&acc), "{acc}");
}

#[test]
fn vocab_size_equals_distinct_tokens_on_synthetic_corpus() {
    let s = generate(&SynthConfig {
        num_docs: 1000,
        ..Default::default()
    })
    .unwrap();
    let distinct: BTreeSet<&str> = s
        .docs
        .iter()
        .flat_map(|d| d.sentences.iter().flat_map(|x| x.tokens.iter().map(|t| t.form.as_str())))
        .collect();
    assert_eq!(build_vocab(&s.docs, 1).len(), distinct.len());
}

#[test]
fn synthetic_corpus_round_trips_through_files() {
    let s = generate(&SynthConfig {
        num_docs: 100,
        class_separation: 0.4,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(parse_jsonl(&to_jsonl(&s.docs)).unwrap(), s.docs);
    assert_eq!(PairSet::parse_tsv(&s.pairs.to_tsv(), &[]).unwrap(), s.pairs);
}

#[test]
fn synthetic_opinion_frequencies_follow_configuration() {
    let cfg = SynthConfig {
        num_docs: 10_000,
        num_aspects: 1,
        class_separation: 0.6,
        ..Default::default()
    };
    let s = generate(&cfg).unwrap();
    let gold: HashMap<&str, usize> = s
        .docs
        .iter()
        .map(|d| (d.id.as_str(), d.gold_labels["aspect0"]))
        .collect();
    let m = cfg.opinions_per_class;
    for class in 0..2 {
        let mut counts = vec![0u64; 2 * m];
        for p in &s.pairs.pairs {
            if gold[p.doc_id.as_str()] != class {
                continue;
            }
            let block = usize::from(p.opinion.contains("c1"));
            let k: usize = p.opinion.rsplit('o').next().unwrap().parse().unwrap();
            counts[block * m + k] += 1;
        }
        let probs: Vec<f64> = (0..2 * m).map(|i| cfg.opinion_prob(class, i / m)).collect();
        let p = chi_square_p_value(&counts, &probs).unwrap();
        assert!(p > 1e-3, "class {class}: p = {p}");
    }
}

#[test]
fn window_counts_match_rescan() {
    let s = generate(&SynthConfig {
        num_docs: 300,
        num_aspects: 1,
        ..Default::default()
    })
    .unwrap();
    let targets: Vec<String> = (0..3).map(|k| SynthConfig::target_word(0, k)).collect();
    let opinions: Vec<String> = (0..2)
        .flat_map(|c| (0..4).map(move |k| SynthConfig::opinion_word(0, c, k)))
        .collect();
    let t: Vec<&str> = targets.iter().map(String::as_str).collect();
    let o: Vec<&str> = opinions.iter().map(String::as_str).collect();
    let lex = LexiconSpec::new(&t, &o).unwrap();
    let ex = extract_window_all(&s.docs, &lex);
    // every generated sentence is exactly one target and one opinion
    let rescan = s
        .docs
        .iter()
        .flat_map(|d| &d.sentences)
        .filter(|x| x.tokens.iter().any(|tk| t.contains(&tk.form.as_str())))
        .count();
    assert_eq!(ex.pairs.len(), rescan);
    assert_eq!(ex.pairs.len(), s.pairs.pairs.len());
}

#[test]
fn kl_to_true_posterior_falls_when_only_q_is_trained() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut m = toy(&mut rng, 3);
    let batch = one_pair_batch(vec![0.9, -0.3, 0.4, 0.2], 4);
    let x = &batch.examples[0].features;
    let post = m
        .opinion
        .true_posterior(4, 0, &m.prior.distribution(3))
        .unwrap();
    let kl = |m: &AspectModel| {
        let q = softmax(&m.sentiment.logits(x));
        q.iter().zip(post.probs()).map(|(a, b)| a * (a / b).ln()).sum::<f64>()
    };
    let spec = ObjectiveSpec::new(ObjectiveKind::ExactL1, 1.0);
    let initial = kl(&m);
    let mut last = initial;
    for _ in 0..200 {
        let mut g = Gradients::zeros_like(&m);
        objective(&m, &batch, &spec, None, Some(&mut g)).unwrap();
        let w = m.sentiment.weights.as_mut_slice();
        for (p, d) in w.iter_mut().zip(g.weights.as_slice()) {
            *p += 0.1 * d;
        }
        let now = kl(&m);
        assert!(now <= last + 1e-12);
        last = now;
    }
    assert!(last < initial * 0.5, "{initial} -> {last}");
}

#[test]
fn weight_decay_alone_shrinks_norms_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for config in [OptimizerConfig::default(), OptimizerConfig::Sgd { learning_rate: 0.5 }] {
        let mut m = toy(&mut rng, 2);
        let spec = ObjectiveSpec::new(ObjectiveKind::ExactL2, 1.0).with_weight_decay(1e-3);
        let mut opt = Optimizer::new(config, flatten_params(&m).len());
        let norms = |m: &AspectModel| (m.sentiment.weights.squared_norm(), m.opinion.polarity.squared_norm());
        let mut last = norms(&m);
        let emb = m.opinion.opinion_emb.clone();
        for _ in 0..100 {
            train_step(&mut m, &Batch::default(), &spec, None, GradEstimator::ExactExpectation, &mut opt, &mut rng).unwrap();
            let now = norms(&m);
            assert!(now.0 < last.0 && now.1 < last.1);
            last = now;
        }
        assert_eq!(m.opinion.opinion_emb, emb);
    }
}

#[test]
fn update_direction_agrees_with_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut m = toy(&mut rng, 2);
    let batch = one_pair_batch(vec![0.5, 0.5, -0.5, 0.5], 2);
    let spec = ObjectiveSpec::new(ObjectiveKind::ExactL2, 1.0);
    let mut opt = Optimizer::new(OptimizerConfig::default(), flatten_params(&m).len());
    for _ in 0..20 {
        let mut g = Gradients::zeros_like(&m);
        objective(&m, &batch, &spec, None, Some(&mut g)).unwrap();
        let before = flatten_params(&m);
        train_step(&mut m, &batch, &spec, None, GradEstimator::ExactExpectation, &mut opt, &mut rng).unwrap();
        let step: f64 = flatten_params(&m)
            .iter()
            .zip(&before)
            .zip(g.flatten())
            .map(|((a, b), d)| (a - b) * d)
            .sum();
        assert!(step >= 0.0);
    }
}

#[test]
fn negative_term_monte_carlo_matches_expectation() {
    // E[log σ(-φ_n)] under the sampler, against exact enumeration
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let freqs = [30u64, 10, 5, 2, 1, 1];
    let phi = [0.4, -1.2, 2.0, 0.3, -0.7, 1.1];
    let positive = 0;
    let s = NegativeSampler::new(&freqs, NegativeDistribution::Unigram75).unwrap();
    let f = |z: f64| -(1.0 + z.exp()).ln();
    let exact: f64 = (0..6).map(|w| s.probability(w, positive) * f(phi[w])).sum();
    let second: f64 = (0..6).map(|w| s.probability(w, positive) * f(phi[w]).powi(2)).sum();
    let sd = (second - exact * exact).sqrt();
    let n = 50_000;
    let mean = (0..n).map(|_| f(phi[s.draw(positive, &mut rng)])).sum::<f64>() / n as f64;
    assert!((mean - exact).abs() < 3.0 * sd / (n as f64).sqrt());
}

#[test]
fn lexicon_baseline_is_reproducible() {
    let s = generate(&SynthConfig {
        num_docs: 200,
        num_aspects: 1,
        class_separation: 0.5,
        ..Default::default()
    })
    .unwrap();
    let pos: Vec<String> = (0..4).map(|k| SynthConfig::opinion_word(0, 1, k)).collect();
    let neg: Vec<String> = (0..4).map(|k| SynthConfig::opinion_word(0, 0, k)).collect();
    let lex = OpinionLexicon::new(pos, neg).unwrap();
    let run = |seed| lexicon_baseline(&s.docs, &s.pairs, "aspect0", &lex, TieMode::Random, 5, seed, 3).unwrap();
    assert_eq!(run(3), run(3));
    assert!(run(3).mean > 0.6);
}

#[test]
fn checkpoint_json_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let s = generate(&SynthConfig {
        num_docs: 20,
        ..Default::default()
    })
    .unwrap();
    let features = build_vocab(&s.docs, 1);
    let mut m = toy(&mut rng, 2);
    m.sentiment = SentimentModel::gaussian(2, features.len(), 0.3, &mut rng);
    let ckpt = Checkpoint {
        num_classes: 2,
        opinions: pairsent::corpus::Vocab::from_words((0..6).map(|i| format!("o{i}"))),
        targets: pairsent::corpus::Vocab::from_words(["t"]),
        features,
        aspects: vec![m],
    };
    let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
    assert_eq!(back, ckpt);
}
