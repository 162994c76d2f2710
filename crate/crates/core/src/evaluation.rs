//! Cluster-to-label assignment, accuracy and reference baselines.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DocumentEncoder, Polarity, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::extraction::PairSet;
use crate::model::SentimentModel;

/// `perm[row] = column`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn cost(&self, cost: &[Vec<f64>]) -> f64 {
        self.0.iter().enumerate().map(|(r, &c)| cost[r][c]).sum()
    }

    pub fn map(&self, row: usize) -> usize {
        self.0[row]
    }
}

/// O(n³) shortest-augmenting-path solver with row/column potentials.
/// Returns `(column per row, total cost)`.
fn solve(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based arrays with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost[r0 - 1][col - 1] - u[r0] - v[col];
                if reduced < minv[col] {
                    minv[col] = reduced;
                    way[col] = col0;
                }
                if minv[col] < delta {
                    delta = minv[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    minv[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0usize; n];
    for col in 1..=n {
        perm[owner[col] - 1] = col - 1;
    }
    let total = perm.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
    (perm, total)
}

/// Minimum-cost perfect assignment. Among optimal permutations the
/// lexicographically smallest is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::Invalid("empty cost matrix".into()));
    }
    if cost.iter().any(|r| r.len() != n) {
        return Err(Error::Invalid("cost matrix must be square".into()));
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("cost matrix has non-finite entries".into()));
    }
    let (_, best) = solve(cost);
    let scale: f64 = cost.iter().flatten().map(|v| v.abs()).sum();
    let tol = 1e-9 * (1.0 + scale);

    // fix rows in order, each to the smallest column that keeps the optimum
    let mut perm = Vec::with_capacity(n);
    let mut free_cols: Vec<usize> = (0..n).collect();
    let mut fixed_cost = 0.0;
    for row in 0..n {
        let mut chosen = None;
        for (pos, &col) in free_cols.iter().enumerate() {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&c| c != col).collect();
            let sub: Vec<Vec<f64>> = (row + 1..n)
                .map(|r| rest_cols.iter().map(|&c| cost[r][c]).collect())
                .collect();
            let (_, rest) = solve(&sub);
            if fixed_cost + cost[row][col] + rest <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("an optimal completion exists");
        let col = free_cols.remove(pos);
        fixed_cost += cost[row][col];
        perm.push(col);
    }
    Ok(Assignment(perm))
}

/// Accuracy of cluster predictions after the best one-to-one mapping of
/// clusters to labels.
pub fn assigned_accuracy(predicted: &[usize], gold: &[Polarity]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::Invalid("prediction and gold lengths differ".into()));
    }
    if gold.is_empty() {
        return Err(Error::Invalid("no gold labels to evaluate against".into()));
    }
    let n = 1 + predicted.iter().chain(gold).copied().max().unwrap_or(0);
    let mut agree = vec![vec![0.0; n]; n];
    for (&p, &g) in predicted.iter().zip(gold) {
        agree[p][g] += 1.0;
    }
    let cost: Vec<Vec<f64>> = agree
        .iter()
        .map(|row| row.iter().map(|v| -v).collect())
        .collect();
    let assignment = hungarian(&cost)?;
    let matched = -assignment.cost(&cost);
    Ok(matched / gold.len() as f64)
}

/// Documents carrying a gold label for `aspect`, with that label.
fn labelled<'a>(docs: &'a [Document], aspect: &str) -> Vec<(&'a Document, Polarity)> {
    docs.iter()
        .filter_map(|d| d.gold_labels.get(aspect).map(|&g| (d, g)))
        .collect()
}

/// Predicts `argmax_c q(c|x)` per labelled document and scores it through the
/// optimal cluster-to-label assignment.
pub fn evaluate(
    model: &SentimentModel,
    docs: &[Document],
    encoder: &dyn DocumentEncoder,
    aspect: &str,
) -> Result<f64> {
    let docs = labelled(docs, aspect);
    if docs.is_empty() {
        return Err(Error::Invalid(format!("no gold labels for aspect `{aspect}`")));
    }
    let mut predicted = Vec::with_capacity(docs.len());
    let mut gold = Vec::with_capacity(docs.len());
    for (d, g) in docs {
        predicted.push(model.posterior(&encoder.encode(d))?.argmax());
        gold.push(g);
    }
    assigned_accuracy(&predicted, &gold)
}

/// Predicts the most frequent training label (lowest index on ties).
pub fn majority_baseline(train: &[Document], eval: &[Document], aspect: &str) -> Result<f64> {
    let train = labelled(train, aspect);
    let eval = labelled(eval, aspect);
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Invalid(format!("no gold labels for aspect `{aspect}`")));
    }
    let mut counts: Vec<usize> = Vec::new();
    for (_, g) in &train {
        if counts.len() <= *g {
            counts.resize(g + 1, 0);
        }
        counts[*g] += 1;
    }
    let majority = counts
        .iter()
        .enumerate()
        .fold(0, |best, (i, c)| if *c > counts[best] { i } else { best });
    let hits = eval.iter().filter(|(_, g)| *g == majority).count();
    Ok(hits as f64 / eval.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpinionLexicon {
    pub positive: BTreeSet<String>,
    pub negative: BTreeSet<String>,
    pub negation: BTreeSet<String>,
}

impl OpinionLexicon {
    pub fn new<I, J>(positive: I, negative: J) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: Into<String>,
        J: IntoIterator,
        J::Item: Into<String>,
    {
        let lex = OpinionLexicon {
            positive: positive.into_iter().map(|w| w.into().to_lowercase()).collect(),
            negative: negative.into_iter().map(|w| w.into().to_lowercase()).collect(),
            negation: ["no", "not", "never", "n't"].iter().map(|s| s.to_string()).collect(),
        };
        lex.validate()?;
        Ok(lex)
    }

    fn validate(&self) -> Result<()> {
        if self.positive.is_empty() && self.negative.is_empty() {
            return Err(Error::Config("opinion lexicon is empty".into()));
        }
        if let Some(w) = self.positive.intersection(&self.negative).next() {
            return Err(Error::Config(format!("`{w}` is both positive and negative")));
        }
        Ok(())
    }

    /// Two-section word list: lines after `[positive]` and after
    /// `[negative]`; an optional `[negation]` section replaces the default
    /// negation words.
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: HashMap<&str, Vec<String>> = HashMap::new();
        let mut current: Option<&str> = None;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                match name {
                    "positive" | "negative" | "negation" => current = Some(name),
                    other => {
                        return Err(Error::parse(idx + 1, format!("unknown section `{other}`")))
                    }
                }
                continue;
            }
            let section = current
                .ok_or_else(|| Error::parse(idx + 1, "word before any section header"))?;
            sections.entry(section).or_default().push(line.to_lowercase());
        }
        let mut lex = OpinionLexicon::new(
            sections.remove("positive").unwrap_or_default(),
            sections.remove("negative").unwrap_or_default(),
        )?;
        if let Some(neg) = sections.remove("negation") {
            lex.negation = neg.into_iter().collect();
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn polarity(&self, word: &str) -> i32 {
        if self.positive.contains(word) {
            1
        } else if self.negative.contains(word) {
            -1
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieMode {
    /// Ties get a random polarity.
    Random,
    /// Ties take the document's overall polarity, random if absent.
    Overall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub mean: f64,
    pub std: f64,
}

impl Score {
    pub fn from_trials(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Score {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Net lexicon vote of a document's opinion words for one aspect. Each
/// opinion word is located in the text (the k-th pair with a word at that
/// word's k-th occurrence) and its vote is flipped when a negation word
/// appears among the `window` tokens before it in the same sentence.
pub fn lexicon_vote(doc: &Document, opinions: &[&str], lexicon: &OpinionLexicon, window: usize) -> i32 {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    let mut total = 0;
    for &word in opinions {
        let polarity = lexicon.polarity(word);
        if polarity == 0 {
            continue;
        }
        let k = seen.entry(word).or_default();
        let occurrences: Vec<(usize, usize)> = doc
            .sentences
            .iter()
            .enumerate()
            .flat_map(|(s, sent)| {
                sent.tokens
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.form == word || t.lemma == word)
                    .map(move |(i, _)| (s, i))
            })
            .collect();
        let negated = occurrences
            .get(*k)
            .or(occurrences.last())
            .is_some_and(|&(s, i)| {
                let tokens = &doc.sentences[s].tokens;
                tokens[i.saturating_sub(window)..i]
                    .iter()
                    .any(|t| lexicon.negation.contains(&t.form))
            });
        *k += 1;
        total += if negated { -polarity } else { polarity };
    }
    total
}

/// Majority lexicon vote per document for `aspect`, repeated over `trials`
/// seeded tie-breaking runs. Positive votes predict label 1, negative
/// votes label 0.
#[allow(clippy::too_many_arguments)]
pub fn lexicon_baseline(
    docs: &[Document],
    pairs: &PairSet,
    aspect: &str,
    lexicon: &OpinionLexicon,
    mode: TieMode,
    trials: usize,
    seed: u64,
    negation_window: usize,
) -> Result<Score> {
    lexicon.validate()?;
    let aspect_id = pairs.aspect_id(aspect);
    let labelled = labelled(docs, aspect);
    if labelled.is_empty() {
        return Err(Error::Invalid(format!("no gold labels for aspect `{aspect}`")));
    }
    let mut by_doc: HashMap<&str, Vec<&str>> = HashMap::new();
    for p in &pairs.pairs {
        if Some(p.aspect) == aspect_id {
            by_doc.entry(p.doc_id.as_str()).or_default().push(p.opinion.as_str());
        }
    }
    let votes: Vec<i32> = labelled
        .iter()
        .map(|(d, _)| {
            let words = by_doc.get(d.id.as_str()).map_or(&[][..], Vec::as_slice);
            lexicon_vote(d, words, lexicon, negation_window)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::with_capacity(trials.max(1));
    for _ in 0..trials.max(1) {
        let mut hits = 0usize;
        for ((doc, gold), vote) in labelled.iter().zip(&votes) {
            let predicted = match vote.signum() {
                1 => POSITIVE,
                -1 => NEGATIVE,
                _ => match (mode, doc.overall_polarity) {
                    (TieMode::Overall, Some(o)) => o,
                    _ => {
                        if rng.random_bool(0.5) {
                            POSITIVE
                        } else {
                            NEGATIVE
                        }
                    }
                },
            };
            if predicted == *gold {
                hits += 1;
            }
        }
        results.push(hits as f64 / labelled.len() as f64);
    }
    Ok(Score::from_trials(&results))
}

/// One line of the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub aspect: String,
    pub method: String,
    pub split: String,
    pub mean: f64,
    pub std: f64,
}

pub fn format_metrics(records: &[MetricRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("metric serializes") + "\n")
        .collect()
}
