//! Target-opinion pair extraction.
//!
//! Parsed text goes through five dependency rules followed by aspect
//! assignment against seed words; clinical text without parses goes through
//! lexicon windowing instead.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::Deserialize;

use crate::corpus::{Document, Embeddings, Sentence, Token};
use crate::error::{Error, Result};
use crate::linalg::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    R1,
    R2,
    R3,
    R4,
    R5,
    Window,
}

impl Rule {
    pub const DEPENDENCY: [Rule; 5] = [Rule::R1, Rule::R2, Rule::R3, Rule::R4, Rule::R5];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::R1 => "R1",
            Rule::R2 => "R2",
            Rule::R3 => "R3",
            Rule::R4 => "R4",
            Rule::R5 => "R5",
            Rule::Window => "WINDOW",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "R1" => Ok(Rule::R1),
            "R2" => Ok(Rule::R2),
            "R3" => Ok(Rule::R3),
            "R4" => Ok(Rule::R4),
            "R5" => Ok(Rule::R5),
            "WINDOW" => Ok(Rule::Window),
            other => Err(Error::Config(format!("unknown rule `{other}`"))),
        }
    }
}

/// Subset of the dependency rules to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet(BTreeSet<Rule>);

impl RuleSet {
    pub fn all() -> Self {
        RuleSet(Rule::DEPENDENCY.into_iter().collect())
    }

    pub fn only<I: IntoIterator<Item = Rule>>(rules: I) -> Self {
        RuleSet(rules.into_iter().collect())
    }

    pub fn without(mut self, rule: Rule) -> Self {
        self.0.remove(&rule);
        self
    }

    pub fn contains(&self, rule: Rule) -> bool {
        self.0.contains(&rule)
    }

    pub fn iter(&self) -> impl Iterator<Item = Rule> + '_ {
        self.0.iter().copied()
    }
}

impl FromStr for RuleSet {
    type Err = Error;

    /// Comma-separated list such as `R1,R2,R4`.
    fn from_str(s: &str) -> Result<Self> {
        let rules = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(Rule::from_str)
            .collect::<Result<BTreeSet<_>>>()?;
        if rules.contains(&Rule::Window) {
            return Err(Error::Config(
                "WINDOW is selected with --mode window, not as a rule".into(),
            ));
        }
        Ok(RuleSet(rules))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPair {
    pub target: String,
    pub opinion: String,
    pub aspect: usize,
    pub doc_id: String,
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct AspectSpec {
    pub name: String,
    pub seeds: Vec<String>,
}

/// Aspects with their seed words plus the rule-5 map from implicit
/// adjectives to aspects.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AspectConfig {
    pub aspects: Vec<AspectSpec>,
    pub implicit: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct AspectFile {
    #[serde(rename = "aspect", default)]
    aspects: Vec<AspectSpec>,
    #[serde(default)]
    implicit: BTreeMap<String, String>,
}

impl AspectConfig {
    /// Reads the TOML form:
    ///
    /// ```toml
    /// [[aspect]]
    /// name = "room"
    /// seeds = ["room", "bed"]
    ///
    /// [implicit]
    /// tasty = "taste"
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let raw: AspectFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("aspect config: {e}")))?;
        if raw.aspects.is_empty() {
            return Err(Error::Config("aspect config declares no aspects".into()));
        }
        for a in &raw.aspects {
            if a.seeds.is_empty() {
                return Err(Error::Config(format!("aspect `{}` has no seed words", a.name)));
            }
        }
        let mut implicit = HashMap::new();
        for (word, aspect) in raw.implicit {
            let id = raw
                .aspects
                .iter()
                .position(|a| a.name == aspect)
                .ok_or_else(|| {
                    Error::Config(format!("implicit word `{word}` maps to unknown aspect `{aspect}`"))
                })?;
            implicit.insert(word.to_lowercase(), id);
        }
        Ok(AspectConfig {
            aspects: raw.aspects,
            implicit,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn names(&self) -> Vec<String> {
        self.aspects.iter().map(|a| a.name.clone()).collect()
    }

    /// Drops seed words missing from the embedding vocabulary, warning for
    /// each. Aspects left without seeds are an error.
    pub fn retain_known_seeds(&mut self, emb: &Embeddings) -> Result<()> {
        for a in &mut self.aspects {
            a.seeds.retain(|s| {
                let known = emb.get(s).is_some();
                if !known {
                    warn!("seed word `{s}` of aspect `{}` has no embedding, dropped", a.name);
                }
                known
            });
            if a.seeds.is_empty() {
                return Err(Error::Config(format!(
                    "aspect `{}` has no seed word with an embedding",
                    a.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct LexiconSpec {
    #[serde(default = "LexiconSpec::default_aspect")]
    pub aspect: String,
    pub target_words: Vec<String>,
    pub opinion_words: Vec<String>,
    #[serde(default = "LexiconSpec::default_max_len")]
    pub max_sentence_len: usize,
}

impl LexiconSpec {
    fn default_aspect() -> String {
        "status".to_string()
    }

    fn default_max_len() -> usize {
        20
    }

    pub fn new(targets: &[&str], opinions: &[&str]) -> Result<Self> {
        let spec = LexiconSpec {
            aspect: Self::default_aspect(),
            target_words: targets.iter().map(|s| s.to_lowercase()).collect(),
            opinion_words: opinions.iter().map(|s| s.to_lowercase()).collect(),
            max_sentence_len: Self::default_max_len(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_words.is_empty() || self.opinion_words.is_empty() {
            return Err(Error::Config("lexicon needs target and opinion words".into()));
        }
        if let Some(w) = self.target_words.iter().find(|w| self.opinion_words.contains(w)) {
            return Err(Error::Config(format!("`{w}` is both a target and an opinion word")));
        }
        if self.max_sentence_len == 0 {
            return Err(Error::Config("max_sentence_len must be positive".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec: LexiconSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("lexicon config: {e}")))?;
        spec.target_words.iter_mut().for_each(|w| *w = w.to_lowercase());
        spec.opinion_words.iter_mut().for_each(|w| *w = w.to_lowercase());
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Base relation label: subtypes are stripped and `obj` is folded into
/// `dobj`.
fn relation(tok: &Token) -> &str {
    let base = tok.deprel.split(':').next().unwrap_or("");
    match base {
        "obj" => "dobj",
        other => other,
    }
}

fn edges<'s>(
    sentence: &'s Sentence,
    rel: &'s str,
) -> impl Iterator<Item = (&'s Token, &'s Token)> + 's {
    sentence
        .tokens
        .iter()
        .enumerate()
        .filter(move |(_, t)| sentence.parsed && relation(t) == rel)
        .filter_map(move |(i, t)| sentence.head_of(i).map(|h| (h, t)))
}

const R3_VERBS: [&str; 4] = ["like", "dislike", "love", "hate"];
const R4_VERBS: [&str; 5] = ["seem", "look", "feel", "smell", "taste"];

/// Adjectival modifiers: (modified noun, adjective).
pub fn extract_r1(sentence: &Sentence) -> Vec<(String, String)> {
    edges(sentence, "amod")
        .map(|(head, dep)| (head.form.clone(), dep.form.clone()))
        .collect()
}

/// Nominal subjects of adjectives: (noun, adjective).
pub fn extract_r2(sentence: &Sentence) -> Vec<(String, String)> {
    edges(sentence, "nsubj")
        .filter(|(head, dep)| head.upos == "ADJ" && dep.upos == "NOUN")
        .map(|(head, dep)| (dep.form.clone(), head.form.clone()))
        .collect()
}

/// Direct objects of opinion verbs: (object, verb lemma).
pub fn extract_r3(sentence: &Sentence) -> Vec<(String, String)> {
    edges(sentence, "dobj")
        .filter(|(head, _)| R3_VERBS.contains(&head.lemma.as_str()))
        .map(|(head, dep)| (dep.form.clone(), head.lemma.clone()))
        .collect()
}

/// Open clausal complements of perception verbs: (verb lemma, complement).
pub fn extract_r4(sentence: &Sentence) -> Vec<(String, String)> {
    edges(sentence, "xcomp")
        .filter(|(head, _)| R4_VERBS.contains(&head.lemma.as_str()))
        .map(|(head, dep)| (head.lemma.clone(), dep.form.clone()))
        .collect()
}

/// Adjectives that name their aspect implicitly: (aspect name, adjective),
/// already tagged with the aspect id.
pub fn extract_r5(
    sentence: &Sentence,
    implicit: &HashMap<String, usize>,
    aspect_names: &[String],
) -> Vec<(String, String, usize)> {
    if implicit.is_empty() {
        return Vec::new();
    }
    sentence
        .tokens
        .iter()
        .filter_map(|t| {
            let aspect = implicit
                .get(&t.lemma)
                .or_else(|| implicit.get(&t.form))
                .copied()?;
            Some((aspect_names[aspect].clone(), t.form.clone(), aspect))
        })
        .collect()
}

/// Aspect whose seed word is most cosine-similar to either word of the pair.
/// Returns `None` when neither word has a usable embedding.
pub fn assign_aspect(
    target: &str,
    opinion: &str,
    aspects: &[AspectSpec],
    emb: &Embeddings,
) -> Option<usize> {
    if aspects.len() == 1 {
        return Some(0);
    }
    let words: Vec<&[f64]> = [target, opinion].iter().filter_map(|w| emb.get(w)).collect();
    let mut best: Option<(usize, f64)> = None;
    for (a, spec) in aspects.iter().enumerate() {
        for seed in &spec.seeds {
            let Some(sv) = emb.get(seed) else { continue };
            for wv in &words {
                let Some(sim) = cosine(wv, sv) else { continue };
                if best.is_none_or(|(_, b)| sim > b) {
                    best = Some((a, sim));
                }
            }
        }
    }
    best.map(|(a, _)| a)
}

fn token_matches(tok: &Token, words: &[String]) -> bool {
    words.iter().any(|w| *w == tok.form || *w == tok.lemma)
}

/// Lexicon windowing over pre-tokenized text. Sentences longer than
/// `max_sentence_len` are cut into consecutive chunks; each chunk holding at
/// least one target and one opinion word yields the closest pair, ties going
/// to the leftmost.
pub fn window_extract(doc: &Document, lex: &LexiconSpec, aspect: usize) -> Vec<WordPair> {
    let mut out = Vec::new();
    for sentence in &doc.sentences {
        for chunk in sentence.tokens.chunks(lex.max_sentence_len) {
            let targets: Vec<usize> = (0..chunk.len())
                .filter(|&i| token_matches(&chunk[i], &lex.target_words))
                .collect();
            let opinions: Vec<usize> = (0..chunk.len())
                .filter(|&i| token_matches(&chunk[i], &lex.opinion_words))
                .collect();
            let best = targets
                .iter()
                .flat_map(|&t| opinions.iter().map(move |&o| (t, o)))
                .min_by_key(|&(t, o)| (t.abs_diff(o), t.min(o), t));
            if let Some((t, o)) = best {
                out.push(WordPair {
                    target: chunk[t].form.clone(),
                    opinion: chunk[o].form.clone(),
                    aspect,
                    doc_id: doc.id.clone(),
                    rule: Rule::Window,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub pairs: Vec<WordPair>,
    /// Pairs kept per rule.
    pub counts: BTreeMap<Rule, usize>,
    /// Pairs from R1-R4 that could not be assigned to an aspect.
    pub dropped: usize,
}

/// Runs the selected dependency rules over every parsed sentence and
/// assigns R1-R4 pairs to aspects. Output order is document, sentence, rule.
pub fn extract_all(
    docs: &[Document],
    rules: &RuleSet,
    config: &AspectConfig,
    emb: Option<&Embeddings>,
) -> Result<Extraction> {
    if config.aspects.is_empty() {
        return Err(Error::Config("no aspects declared".into()));
    }
    if config.aspects.len() > 1 && emb.is_none() {
        return Err(Error::Config(
            "aspect assignment over several aspects needs embeddings".into(),
        ));
    }
    let names = config.names();
    let mut ex = Extraction::default();
    for r in rules.iter() {
        ex.counts.insert(r, 0);
    }
    for doc in docs {
        for sentence in &doc.sentences {
            for rule in rules.iter() {
                let raw = match rule {
                    Rule::R1 => extract_r1(sentence),
                    Rule::R2 => extract_r2(sentence),
                    Rule::R3 => extract_r3(sentence),
                    Rule::R4 => extract_r4(sentence),
                    Rule::R5 => {
                        for (target, opinion, aspect) in
                            extract_r5(sentence, &config.implicit, &names)
                        {
                            ex.pairs.push(WordPair {
                                target,
                                opinion,
                                aspect,
                                doc_id: doc.id.clone(),
                                rule,
                            });
                            *ex.counts.entry(rule).or_default() += 1;
                        }
                        continue;
                    }
                    Rule::Window => continue,
                };
                for (target, opinion) in raw {
                    let aspect = match emb {
                        Some(e) => assign_aspect(&target, &opinion, &config.aspects, e),
                        None => Some(0),
                    };
                    match aspect {
                        Some(aspect) => {
                            ex.pairs.push(WordPair {
                                target,
                                opinion,
                                aspect,
                                doc_id: doc.id.clone(),
                                rule,
                            });
                            *ex.counts.entry(rule).or_default() += 1;
                        }
                        None => ex.dropped += 1,
                    }
                }
            }
        }
    }
    Ok(ex)
}

/// Window extraction over a whole corpus with a single aspect.
pub fn extract_window_all(docs: &[Document], lex: &LexiconSpec) -> Extraction {
    let pairs: Vec<WordPair> = docs.iter().flat_map(|d| window_extract(d, lex, 0)).collect();
    let mut counts = BTreeMap::new();
    counts.insert(Rule::Window, pairs.len());
    Extraction {
        pairs,
        counts,
        dropped: 0,
    }
}

/// Pairs together with the aspect names their ids refer to.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSet {
    pub aspects: Vec<String>,
    pub pairs: Vec<WordPair>,
}

impl PairSet {
    pub fn aspect_id(&self, name: &str) -> Option<usize> {
        self.aspects.iter().position(|a| a == name)
    }

    /// Tab-separated `doc_id aspect target opinion rule`, one pair per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                p.doc_id, self.aspects[p.aspect], p.target, p.opinion, p.rule
            ));
        }
        out
    }

    /// Aspect ids follow `known` first, then first appearance in the file.
    pub fn parse_tsv(text: &str, known: &[String]) -> Result<Self> {
        let mut set = PairSet {
            aspects: known.to_vec(),
            pairs: Vec::new(),
        };
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::parse(
                    idx + 1,
                    format!("pair line needs 5 tab-separated fields, found {}", cols.len()),
                ));
            }
            if cols[2].is_empty() || cols[3].is_empty() {
                return Err(Error::parse(idx + 1, "empty target or opinion word"));
            }
            let aspect = match set.aspect_id(cols[1]) {
                Some(a) => a,
                None => {
                    set.aspects.push(cols[1].to_string());
                    set.aspects.len() - 1
                }
            };
            let rule = cols[4]
                .parse()
                .map_err(|e: Error| Error::parse(idx + 1, e.to_string()))?;
            set.pairs.push(WordPair {
                doc_id: cols[0].to_string(),
                aspect,
                target: cols[2].to_string(),
                opinion: cols[3].to_string(),
                rule,
            });
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>, known: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text, known)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}
