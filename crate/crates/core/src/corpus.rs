//! Corpus ingestion, vocabularies and document features.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub type Polarity = usize;

/// Label index conventionally used for positive polarity in gold data.
pub const POSITIVE: Polarity = 1;
/// Label index conventionally used for negative polarity in gold data.
pub const NEGATIVE: Polarity = 0;

const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub lemma: String,
    pub upos: String,
    /// 1-based index of the head token, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

impl Token {
    /// A token from pre-tokenized, unparsed text.
    pub fn bare(form: &str) -> Self {
        let form = form.to_lowercase();
        Token {
            lemma: form.clone(),
            form,
            upos: "_".to_string(),
            head: 0,
            deprel: "_".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    /// Whether `head`/`deprel` carry a dependency parse.
    pub parsed: bool,
}

impl Sentence {
    pub fn unparsed<S: AsRef<str>>(words: &[S]) -> Self {
        Sentence {
            tokens: words.iter().map(|w| Token::bare(w.as_ref())).collect(),
            parsed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Head token of `tokens[i]`, `None` for the root.
    pub fn head_of(&self, i: usize) -> Option<&Token> {
        match self.tokens[i].head {
            0 => None,
            h => self.tokens.get(h - 1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    /// Gold polarity per aspect name.
    pub gold_labels: BTreeMap<String, Polarity>,
    pub overall_polarity: Option<Polarity>,
}

impl Document {
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

/// Accepts integer labels as well as `positive`/`negative` spellings.
pub fn parse_polarity(s: &str) -> Option<Polarity> {
    match s.trim().to_ascii_lowercase().as_str() {
        "positive" | "pos" => Some(POSITIVE),
        "negative" | "neg" => Some(NEGATIVE),
        other => other.parse().ok(),
    }
}

/// Parses CoNLL-U text. Documents are delimited by `# newdoc id = <id>`;
/// `# gold <aspect>=<label>` and `# overall=<label>` comments attach labels
/// to the current document.
pub fn parse_conllu(text: &str) -> Result<Vec<Document>> {
    let mut docs: Vec<Document> = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    let mut sentence_start = 0usize;

    fn ensure_doc(docs: &mut Vec<Document>) -> &mut Document {
        if docs.is_empty() {
            docs.push(Document {
                id: "doc0".to_string(),
                ..Default::default()
            });
        }
        docs.last_mut().unwrap()
    }

    fn finish(
        docs: &mut Vec<Document>,
        tokens: &mut Vec<Token>,
        start_line: usize,
    ) -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let n = tokens.len();
        if let Some(t) = tokens.iter().find(|t| t.head > n) {
            return Err(Error::parse(
                start_line,
                format!("head {} outside sentence of length {n}", t.head),
            ));
        }
        if tokens.iter().filter(|t| t.head == 0).count() > 1 {
            return Err(Error::parse(start_line, "sentence has more than one root"));
        }
        let sentence = Sentence {
            tokens: std::mem::take(tokens),
            parsed: true,
        };
        ensure_doc(docs).sentences.push(sentence);
        Ok(())
    }

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut docs, &mut current, sentence_start)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(rest) = comment.strip_prefix("newdoc") {
                finish(&mut docs, &mut current, sentence_start)?;
                let id = rest
                    .trim()
                    .strip_prefix("id")
                    .map(|r| r.trim().trim_start_matches('=').trim())
                    .filter(|id| !id.is_empty())
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("doc{}", docs.len()));
                docs.push(Document {
                    id,
                    ..Default::default()
                });
            } else if let Some(rest) = comment.strip_prefix("gold ") {
                let (aspect, label) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::parse(lineno, "gold comment must be `aspect=label`"))?;
                let label = parse_polarity(label)
                    .ok_or_else(|| Error::parse(lineno, format!("bad gold label `{label}`")))?;
                ensure_doc(&mut docs)
                    .gold_labels
                    .insert(aspect.trim().to_string(), label);
            } else if let Some(rest) = comment.strip_prefix("overall") {
                let label = rest.trim().trim_start_matches('=').trim();
                let label = parse_polarity(label)
                    .ok_or_else(|| Error::parse(lineno, format!("bad overall label `{label}`")))?;
                ensure_doc(&mut docs).overall_polarity = Some(label);
            }
            continue;
        }

        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        // multiword ranges and empty nodes carry no head of their own
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        if current.is_empty() {
            sentence_start = lineno;
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("non-integer head `{}`", cols[6])))?;
        let deprel = cols[7].trim();
        if deprel.is_empty() || deprel == "_" {
            return Err(Error::parse(lineno, "missing dependency relation"));
        }
        let form = cols[1].to_lowercase();
        let lemma = match cols[2] {
            "_" | "" => form.clone(),
            l => l.to_lowercase(),
        };
        current.push(Token {
            form,
            lemma,
            upos: cols[3].to_string(),
            head,
            deprel: deprel.to_string(),
        });
    }
    finish(&mut docs, &mut current, sentence_start)?;
    check_unique_ids(&docs)?;
    Ok(docs)
}

pub fn load_conllu(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&text)
}

fn check_unique_ids(docs: &[Document]) -> Result<()> {
    let mut seen = HashSet::new();
    for d in docs {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::Invalid(format!("duplicate document id `{}`", d.id)));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonDoc {
    id: String,
    sentences: Vec<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    gold: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    overall: Option<serde_json::Value>,
}

fn json_label(v: &serde_json::Value) -> Option<Polarity> {
    match v {
        serde_json::Value::Number(n) => n.as_u64().map(|n| n as usize),
        serde_json::Value::String(s) => parse_polarity(s),
        _ => None,
    }
}

/// Pre-tokenized corpus, one JSON object per line:
/// `{"id", "sentences": [[token, ...], ...], "gold": {aspect: label}}`.
pub fn parse_jsonl(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonDoc =
            serde_json::from_str(line).map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        let mut gold_labels = BTreeMap::new();
        for (aspect, v) in &raw.gold {
            let label = json_label(v)
                .ok_or_else(|| Error::parse(idx + 1, format!("bad gold label {v}")))?;
            gold_labels.insert(aspect.clone(), label);
        }
        let overall_polarity = match &raw.overall {
            Some(v) => Some(
                json_label(v)
                    .ok_or_else(|| Error::parse(idx + 1, format!("bad overall label {v}")))?,
            ),
            None => None,
        };
        docs.push(Document {
            id: raw.id,
            sentences: raw
                .sentences
                .iter()
                .filter(|s| !s.is_empty())
                .map(|s| Sentence::unparsed(s))
                .collect(),
            gold_labels,
            overall_polarity,
        });
    }
    check_unique_ids(&docs)?;
    Ok(docs)
}

pub fn to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        let raw = JsonDoc {
            id: d.id.clone(),
            sentences: d
                .sentences
                .iter()
                .map(|s| s.tokens.iter().map(|t| t.form.clone()).collect())
                .collect(),
            gold: d
                .gold_labels
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::from(*v)))
                .collect(),
            overall: d.overall_polarity.map(serde_json::Value::from),
        };
        out.push_str(&serde_json::to_string(&raw).expect("document serializes"));
        out.push('\n');
    }
    out
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}

/// Dispatches on extension: `.jsonl`/`.json` is the pre-tokenized format,
/// anything else is read as CoNLL-U.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => load_jsonl(path),
        _ => load_conllu(path),
    }
}

/// Decides which tokens count as words for vocabularies and features.
#[derive(Debug, Clone, Default)]
pub struct TokenFilter {
    stopwords: HashSet<String>,
}

impl TokenFilter {
    /// Drops punctuation-only tokens.
    pub fn reviews() -> Self {
        TokenFilter::default()
    }

    /// Drops punctuation-only tokens and the shipped stopword list.
    pub fn clinical() -> Self {
        TokenFilter::with_stopwords(parse_word_list(DEFAULT_STOPWORDS))
    }

    pub fn with_stopwords<I: IntoIterator<Item = String>>(words: I) -> Self {
        TokenFilter {
            stopwords: words.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    pub fn keeps(&self, word: &str) -> bool {
        !word.is_empty()
            && !word.chars().all(|c| c.is_ascii_punctuation() || !c.is_alphanumeric())
            && !self.stopwords.contains(word)
    }
}

/// One word per line; blank lines and `#` comments are skipped.
pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    freq: Vec<u64>,
}

impl Vocab {
    /// Builds a vocabulary from `(word, count)` entries in the given order.
    pub fn from_counts<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        let mut v = Vocab::default();
        for (w, c) in entries {
            let w = w.into();
            debug_assert!(c >= 1);
            if v.index.contains_key(&w) {
                continue;
            }
            v.index.insert(w.clone(), v.words.len());
            v.words.push(w);
            v.freq.push(c);
        }
        v
    }

    /// Words in order, each with frequency 1.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Vocab::from_counts(words.into_iter().map(|w| (w, 1)))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    pub fn freq(&self, i: usize) -> u64 {
        self.freq[i]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Stable content hash of the word list, used to pair checkpoints with
    /// the vocabularies they were trained against.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for w in &self.words {
            h.update(w.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }
}

/// Lowercased surface forms with frequency at least `min_count`, indexed by
/// descending frequency and then lexicographically.
pub fn build_vocab(docs: &[Document], min_count: u64) -> Vocab {
    build_vocab_with(docs, min_count, &TokenFilter::reviews())
}

pub fn build_vocab_with(docs: &[Document], min_count: u64, filter: &TokenFilter) -> Vocab {
    let min_count = min_count.max(1);
    let mut counts: HashMap<String, u64> = HashMap::new();
    for tok in docs.iter().flat_map(Document::tokens) {
        let w = tok.form.to_lowercase();
        if filter.keeps(&w) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_counts(entries)
}

/// Dense document representation fed to the sentiment classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Anything that turns a document into a fixed-width feature vector.
pub trait DocumentEncoder {
    fn dim(&self) -> usize;
    fn encode(&self, doc: &Document) -> FeatureVector;
}

/// L2-normalized term frequencies; documents without in-vocabulary tokens
/// map to the zero vector.
pub fn bow_features(doc: &Document, vocab: &Vocab) -> FeatureVector {
    let mut x = vec![0.0; vocab.len()];
    for tok in doc.tokens() {
        if let Some(i) = vocab.index(&tok.form.to_lowercase()) {
            x[i] += 1.0;
        }
    }
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
    FeatureVector(x)
}

#[derive(Debug, Clone)]
pub struct BowEncoder {
    pub vocab: Vocab,
}

impl DocumentEncoder for BowEncoder {
    fn dim(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, doc: &Document) -> FeatureVector {
        bow_features(doc, &self.vocab)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: Matrix,
}

impl EmbeddingTable {
    pub fn new(rows: Matrix) -> Result<Self> {
        if rows.cols() == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        Ok(EmbeddingTable { rows })
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.rows
    }
}

/// Vocabulary and vectors loaded together; lookups fall back to the
/// lowercased word.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub vocab: Vocab,
    pub table: EmbeddingTable,
}

impl Embeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (vocab, table) = load_embeddings(path)?;
        Ok(Embeddings { vocab, table })
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vocab
            .index(word)
            .or_else(|| self.vocab.index(&word.to_lowercase()))
            .map(|i| self.table.row(i))
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }
}

/// Reads the word2vec text format: a `count dim` header, then one word
/// followed by `dim` floats per line.
pub fn parse_embeddings<R: BufRead>(reader: R) -> Result<(Vocab, EmbeddingTable)> {
    let mut lines = reader.lines().enumerate();
    let (count, dim) = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::parse(1, "missing `count dim` header"));
        };
        let line = line.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let count: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(idx + 1, "bad header count"))?;
        let dim: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .filter(|d| *d > 0)
            .ok_or_else(|| Error::parse(idx + 1, "bad header dimension"))?;
        break (count, dim);
    };

    let mut words = Vec::with_capacity(count);
    let mut data = Vec::with_capacity(count * dim);
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(idx + 1, format!("word `{word}`: {e}")))?;
        if values.len() != dim {
            return Err(Error::EmbeddingDimension {
                word: word.to_string(),
                expected: dim,
                found: values.len(),
            });
        }
        words.push(word.to_string());
        data.extend(values);
    }
    if words.len() != count {
        return Err(Error::Invalid(format!(
            "embedding header declares {count} rows, body has {}",
            words.len()
        )));
    }
    let vocab = Vocab::from_words(words.iter().cloned());
    if vocab.len() != words.len() {
        return Err(Error::Invalid("duplicate word in embedding file".into()));
    }
    Ok((vocab, EmbeddingTable::new(Matrix::from_vec(count, dim, data))?))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(Vocab, EmbeddingTable)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(BufReader::new(file))
}

pub fn format_embeddings(vocab: &Vocab, table: &EmbeddingTable) -> String {
    let mut out = format!("{} {}\n", table.len(), table.dim());
    for i in 0..table.len() {
        out.push_str(vocab.word(i));
        for v in table.row(i) {
            // shortest representation that round-trips
            write!(out, " {v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(path: impl AsRef<Path>, vocab: &Vocab, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_embeddings(vocab, table)).map_err(|e| Error::io(path, e))
}

/// Shuffles with `seed` and cuts into train/dev/test by `ratios` using
/// largest-remainder rounding.
pub fn split_corpus<T: Clone>(
    docs: &[T],
    ratios: (u32, u32, u32),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = ratios;
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::Invalid("split ratios must be positive".into()));
    }
    if docs.len() < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 documents to split, got {}",
            docs.len()
        )));
    }
    let n = docs.len() as u64;
    let total = u64::from(a + b + c);
    let parts = [u64::from(a), u64::from(b), u64::from(c)];
    let mut sizes: Vec<u64> = parts.iter().map(|p| n * p / total).collect();
    let mut order: Vec<usize> = (0..3).collect();
    // largest remainder first, earlier split wins ties
    order.sort_by_key(|&i| std::cmp::Reverse((n * parts[i]) % total));
    let mut left = n - sizes.iter().sum::<u64>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }

    let mut idx: Vec<usize> = (0..docs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| -> Vec<T> {
        idx[range].iter().map(|&i| docs[i].clone()).collect()
    };
    let (s0, s1) = (sizes[0] as usize, sizes[1] as usize);
    Ok((take(0..s0), take(s0..s0 + s1), take(s0 + s1..docs.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, words: &str) -> Document {
        Document {
            id: id.into(),
            sentences: vec![Sentence::unparsed(
                &words.split_whitespace().collect::<Vec<_>>(),
            )],
            ..Default::default()
        }
    }

    const ROOM: &str = "# newdoc id = d1\n# gold room=1\n\
1\tthe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n\
2\troom\troom\tNOUN\tNN\t_\t4\tnsubj\t_\t_\n\
3\tis\tbe\tAUX\tVBZ\t_\t4\tcop\t_\t_\n\
4\tsmall\tsmall\tADJ\tJJ\t_\t0\troot\t_\t_\n\n";

    #[test]
    fn conllu_single_sentence() {
        let docs = parse_conllu(ROOM).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].id, "d1");
        assert_eq!(docs[0].sentences.len(), 1);
        assert_eq!(docs[0].sentences[0].tokens.len(), 4);
        assert_eq!(docs[0].gold_labels.get("room"), Some(&1));
        assert_eq!(docs[0].sentences[0].head_of(1).unwrap().form, "small");
    }

    #[test]
    fn conllu_empty_file() {
        assert!(parse_conllu("").unwrap().is_empty());
    }

    #[test]
    fn conllu_wrong_column_count_names_line() {
        let text = "# newdoc id = x\n1\tthe\tthe\tDET\tDT\t_\t0\troot\t_\n";
        match parse_conllu(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conllu_non_integer_head() {
        let text = "1\tthe\tthe\tDET\tDT\t_\tx\troot\t_\t_\n";
        assert!(matches!(parse_conllu(text), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn conllu_head_out_of_range() {
        let text = "1\tthe\tthe\tDET\tDT\t_\t5\tdet\t_\t_\n";
        assert!(parse_conllu(text).is_err());
    }

    #[test]
    fn vocab_min_count() {
        let v = build_vocab(&[doc("a", "a a b")], 2);
        assert_eq!(v.len(), 1);
        assert_eq!(v.index("a"), Some(0));
        assert_eq!(v.freq(0), 2);
    }

    #[test]
    fn vocab_tie_break() {
        let v = build_vocab(&[doc("1", "a b"), doc("2", "b c")], 1);
        assert_eq!(v.words(), &["b", "a", "c"]);
    }

    #[test]
    fn vocab_skips_punctuation_and_clinical_stopwords() {
        let d = doc("1", "the hip , is fine .");
        assert_eq!(build_vocab(std::slice::from_ref(&d), 1).len(), 4);
        let v = build_vocab_with(&[d], 1, &TokenFilter::clinical());
        assert_eq!(v.words(), &["fine", "hip"]);
    }

    #[test]
    fn bow_example() {
        let v = Vocab::from_words(["a", "b"]);
        let x = bow_features(&doc("1", "a a b"), &v);
        let s5 = 5f64.sqrt();
        assert!((x.0[0] - 2.0 / s5).abs() < 1e-15);
        assert!((x.0[1] - 1.0 / s5).abs() < 1e-15);
        assert_eq!(bow_features(&doc("2", "z y"), &v).0, vec![0.0, 0.0]);
    }

    #[test]
    fn embeddings_header_and_mismatch() {
        let ok = "2 3\nx 1 2 3\ny 4 5 6\n";
        let (v, t) = parse_embeddings(ok.as_bytes()).unwrap();
        assert_eq!((v.len(), t.len(), t.dim()), (2, 2, 3));
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);

        let bad = "2 3\nx 1 2 3\ny 4 5\n";
        match parse_embeddings(bad.as_bytes()) {
            Err(Error::EmbeddingDimension { word, .. }) => assert_eq!(word, "y"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_embeddings("3 3\nx 1 2 3\n".as_bytes()).is_err());
    }

    #[test]
    fn split_ten_docs() {
        let docs: Vec<u32> = (0..10).collect();
        let (tr, dv, te) = split_corpus(&docs, (8, 1, 1), 3).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (8, 1, 1));
        let mut all: Vec<u32> = tr.iter().chain(&dv).chain(&te).copied().collect();
        all.sort();
        assert_eq!(all, docs);
        assert_eq!(split_corpus(&docs, (8, 1, 1), 3).unwrap(), (tr, dv, te));
        assert!(split_corpus(&docs[..2], (8, 1, 1), 3).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let mut d = doc("x", "hip fracture noted");
        d.gold_labels.insert("hip".into(), 1);
        d.overall_polarity = Some(0);
        let back = parse_jsonl(&to_jsonl(&[d.clone()])).unwrap();
        assert_eq!(back, vec![d]);
    }
}
