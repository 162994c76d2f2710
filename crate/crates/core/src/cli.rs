//! Command-line front end. Each subcommand is a thin wrapper over library
//! calls so its results can be reproduced through the API.

use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;

use crate::corpus::{
    load_corpus, save_embeddings, split_corpus, to_jsonl, BowEncoder, Document, Embeddings,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, format_metrics, lexicon_baseline, majority_baseline, MetricRecord, OpinionLexicon,
    TieMode,
};
use crate::extraction::{
    extract_all, extract_window_all, AspectConfig, Extraction, LexiconSpec, PairSet, RuleSet,
};
use crate::model::Checkpoint;
use crate::synth::{generate, SynthConfig};
use crate::training::{format_history, train, ObjectiveKind, TrainConfig, TrainData, TrainOutput};
use crate::verify::{run_checks, CheckOptions, CheckOutcome};

/// Relative input paths are resolved against this directory when set.
pub const DATA_DIR_ENV: &str = "PAIRSENT_DATA_DIR";

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "pairsent", version, about = "Unsupervised aspect-level sentiment from target-opinion word pairs")]
pub struct Cli {
    /// Seed for every random choice [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for extraction and evaluation
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract target-opinion pairs from a corpus
    Extract(ExtractArgs),
    /// Train per-aspect sentiment classifiers
    Train(TrainArgs),
    /// Score a checkpoint or a baseline on a labelled split
    Eval(EvalArgs),
    /// Write a synthetic corpus with known polarities
    Generate(GenerateArgs),
    /// Run the numerical self-checks
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtractMode {
    /// Dependency rules over CoNLL-U input
    Rules,
    /// Nearest target-opinion pairs from a word lexicon
    Window,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Aspect definitions (TOML), required in rules mode
    #[arg(long)]
    pub aspects: Option<PathBuf>,
    /// Word vectors for aspect assignment
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Comma-separated subset of R1..R5
    #[arg(long)]
    pub rules: Option<RuleSet>,
    #[arg(long, value_enum, default_value_t = ExtractMode::Rules)]
    pub mode: ExtractMode,
    /// Target/opinion lexicon (TOML), required in window mode
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Pair file to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training documents
    #[arg(long)]
    pub corpus: PathBuf,
    /// Pair file from `extract` or `generate`
    #[arg(long)]
    pub pairs: PathBuf,
    /// Labelled documents scored after every epoch
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Word vectors for opinion embeddings and the regularizer
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Training configuration (TOML)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Any other configuration field, as `key=value` in TOML syntax
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory for checkpoint.json, history.tsv and config.toml
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Majority,
    LexiconR,
    LexiconO,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labelled documents to score
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, required_unless_present = "baseline")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Training documents, for the majority baseline
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Pair file, for the lexicon baselines
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Two-section opinion lexicon, for the lexicon baselines
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Tokens before an opinion word searched for a negation
    #[arg(long, default_value_t = 3)]
    pub negation_window: usize,
    /// Split name recorded in the report
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also write the report here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator configuration (TOML)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_docs: Option<usize>,
    #[arg(long)]
    pub num_aspects: Option<usize>,
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub pair_rate: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, hide = true)]
    pub inject_entropy_fault: bool,
}

/// How a successful command invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    VerificationFailed,
}

/// 0 success, 1 verification failure, 2 usage error, 3 I/O error.
pub fn exit_code(result: &Result<Status>) -> u8 {
    match result {
        Ok(Status::Success) => 0,
        Ok(Status::VerificationFailed) => 1,
        Err(Error::Io { .. }) => 3,
        Err(Error::NonFinite(_)) => 1,
        Err(_) => 2,
    }
}

pub fn resolve_input(path: &Path) -> PathBuf {
    match env::var_os(DATA_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_docs(path: &Path) -> Result<Vec<Document>> {
    load_corpus(resolve_input(path))
}

pub fn run(cli: &Cli) -> Result<Status> {
    let seed = cli.seed;
    let threads = cli.threads.max(1);
    match &cli.command {
        Command::Extract(a) => {
            let ex = cmd_extract(a, threads)?;
            print!("{}", format_counts(&ex.1));
            Ok(Status::Success)
        }
        Command::Train(a) => {
            let out = cmd_train(a, seed)?;
            if let Some(last) = out.history.last() {
                println!(
                    "trained {} epochs; final objective {}",
                    last.epoch, last.objective
                );
            }
            Ok(Status::Success)
        }
        Command::Eval(a) => {
            let records = cmd_eval(a, seed.unwrap_or(DEFAULT_SEED), threads)?;
            print!("{}", format_metrics(&records));
            Ok(Status::Success)
        }
        Command::Generate(a) => {
            let corpus = cmd_generate(a, seed.unwrap_or(DEFAULT_SEED))?;
            println!(
                "wrote {} documents and {} pairs to {}",
                corpus.docs.len(),
                corpus.pairs.pairs.len(),
                a.out.display()
            );
            Ok(Status::Success)
        }
        Command::Check(a) => {
            let outcomes = cmd_check(a, seed.unwrap_or(DEFAULT_SEED));
            for o in &outcomes {
                println!("{}\t{}\t{}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
            }
            Ok(if outcomes.iter().all(|o| o.passed) {
                Status::Success
            } else {
                Status::VerificationFailed
            })
        }
    }
}

/// `rule<TAB>count` lines followed by the number of unassigned pairs.
pub fn format_counts(ex: &Extraction) -> String {
    let mut out = String::new();
    for (rule, n) in &ex.counts {
        writeln!(out, "{rule}\t{n}").unwrap();
    }
    writeln!(out, "dropped\t{}", ex.dropped).unwrap();
    out
}

fn merge(parts: Vec<Extraction>) -> Extraction {
    let mut all = Extraction::default();
    for p in parts {
        all.pairs.extend(p.pairs);
        for (r, n) in p.counts {
            *all.counts.entry(r).or_default() += n;
        }
        all.dropped += p.dropped;
    }
    all
}

/// Writes the pair file and returns it with the extraction report.
pub fn cmd_extract(args: &ExtractArgs, threads: usize) -> Result<(PairSet, Extraction)> {
    let docs = load_docs(&args.corpus)?;
    let chunk = docs.len().div_ceil(threads).max(1);
    let (aspects, ex) = match args.mode {
        ExtractMode::Window => {
            let path = args
                .lexicon
                .as_ref()
                .ok_or_else(|| Error::Config("--mode window needs --lexicon".into()))?;
            let lex = LexiconSpec::load(resolve_input(path))?;
            (vec![lex.aspect.clone()], extract_window_all(&docs, &lex))
        }
        ExtractMode::Rules => {
            let path = args
                .aspects
                .as_ref()
                .ok_or_else(|| Error::Config("rule extraction needs --aspects".into()))?;
            let mut config = AspectConfig::load(resolve_input(path))?;
            let emb = args
                .embeddings
                .as_ref()
                .map(|p| Embeddings::load(resolve_input(p)))
                .transpose()?;
            if let Some(e) = &emb {
                config.retain_known_seeds(e)?;
            }
            let rules = args.rules.clone().unwrap_or_else(RuleSet::all);
            let parts = thread::scope(|s| {
                let handles: Vec<_> = docs
                    .chunks(chunk)
                    .map(|c| s.spawn(|| extract_all(c, &rules, &config, emb.as_ref())))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("extraction worker panicked"))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut ex = merge(parts);
            for r in rules.iter() {
                ex.counts.entry(r).or_default();
            }
            (config.names(), ex)
        }
    };
    let set = PairSet {
        aspects,
        pairs: ex.pairs.clone(),
    };
    set.save(&args.out)?;
    Ok((set, ex))
}

/// Config file, then `--set` overrides, then named flags, then `--seed`.
pub fn train_config(args: &TrainArgs, seed: Option<u64>) -> Result<TrainConfig> {
    let mut table: toml::Table = match &args.config {
        Some(p) => {
            let p = resolve_input(p);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            text.parse()
                .map_err(|e| Error::Config(format!("train config: {e}")))?
        }
        None => toml::Table::new(),
    };
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        let parsed: toml::Table = format!("v = {v}")
            .parse()
            .unwrap_or_else(|_| toml::Table::from_iter([("v".to_string(), toml::Value::String(v.to_string()))]));
        table.insert(k.trim().to_string(), parsed["v"].clone());
    }
    let mut set = |k: &str, v: toml::Value| {
        table.insert(k.to_string(), v);
    };
    if let Some(o) = args.objective {
        set("objective", toml::Value::String(o.to_string()));
    }
    if let Some(v) = args.alpha {
        set("alpha", v.into());
    }
    if let Some(v) = args.beta {
        set("beta", v.into());
    }
    if let Some(v) = args.gamma {
        set("gamma", v.into());
    }
    if let Some(v) = args.negatives {
        set("negatives", (v as i64).into());
    }
    if let Some(v) = args.epochs {
        set("epochs", (v as i64).into());
    }
    if let Some(v) = args.batch_size {
        set("batch_size", (v as i64).into());
    }
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| Error::Config("seed must fit in i64".into()))?;
        set("seed", s.into());
    }
    let cfg: TrainConfig = table
        .try_into()
        .map_err(|e| Error::Config(format!("train config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs, seed: Option<u64>) -> Result<TrainOutput> {
    let cfg = train_config(args, seed)?;
    let docs = load_docs(&args.corpus)?;
    let dev = args.dev.as_ref().map(|p| load_docs(p)).transpose()?.unwrap_or_default();
    let pairs = PairSet::load(resolve_input(&args.pairs), &[])?;
    let emb = args
        .embeddings
        .as_ref()
        .map(|p| Embeddings::load(resolve_input(p)))
        .transpose()?;
    let out = train(
        &TrainData {
            train: &docs,
            dev: &dev,
            pairs: &pairs,
            embeddings: emb.as_ref(),
        },
        &cfg,
    )?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    out.checkpoint.save(args.out.join("checkpoint.json"))?;
    write_file(&args.out.join("history.tsv"), &format_history(&out.history))?;
    let cfg_text = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&args.out.join("config.toml"), &cfg_text)?;
    Ok(out)
}

fn mean_record(records: &[MetricRecord], method: &str, split: &str) -> Option<MetricRecord> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    Some(MetricRecord {
        aspect: "mean".into(),
        method: method.into(),
        split: split.into(),
        mean: records.iter().map(|r| r.mean).sum::<f64>() / n,
        std: records.iter().map(|r| r.std).sum::<f64>() / n,
    })
}

/// One record per scored aspect plus their average.
pub fn cmd_eval(args: &EvalArgs, seed: u64, threads: usize) -> Result<Vec<MetricRecord>> {
    let docs = load_docs(&args.corpus)?;
    let labelled = |aspect: &str| docs.iter().any(|d| d.gold_labels.contains_key(aspect));
    let method = match args.baseline {
        None => "model",
        Some(Baseline::Majority) => "majority",
        Some(Baseline::LexiconR) => "lexicon-r",
        Some(Baseline::LexiconO) => "lexicon-o",
    };
    let record = |aspect: &str, mean: f64, std: f64| MetricRecord {
        aspect: aspect.to_string(),
        method: method.to_string(),
        split: args.split.clone(),
        mean,
        std,
    };
    let mut records = Vec::new();
    match args.baseline {
        None => {
            let path = args.checkpoint.as_ref().expect("clap enforces --checkpoint");
            let ckpt = Checkpoint::load(resolve_input(path))?;
            let encoder = BowEncoder {
                vocab: ckpt.features.clone(),
            };
            let aspects: Vec<_> = ckpt.aspects.iter().filter(|m| labelled(&m.name)).collect();
            for m in ckpt.aspects.iter().filter(|m| !labelled(&m.name)) {
                warn!("no gold labels for aspect `{}`; skipped", m.name);
            }
            let per = aspects.len().div_ceil(threads).max(1);
            let scores = thread::scope(|s| {
                let handles: Vec<_> = aspects
                    .chunks(per)
                    .map(|c| {
                        let (docs, encoder) = (&docs, &encoder);
                        s.spawn(move || {
                            c.iter()
                                .map(|m| evaluation::evaluate(&m.sentiment, docs, encoder, &m.name))
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .flat_map(|h| h.join().expect("evaluation worker panicked"))
                    .collect::<Result<Vec<f64>>>()
            })?;
            for (m, acc) in aspects.iter().zip(scores) {
                records.push(record(&m.name, acc, 0.0));
            }
        }
        Some(Baseline::Majority) => {
            let path = args
                .train
                .as_ref()
                .ok_or_else(|| Error::Config("majority baseline needs --train".into()))?;
            let train_docs = load_docs(path)?;
            let mut aspects: Vec<&String> = docs.iter().flat_map(|d| d.gold_labels.keys()).collect();
            aspects.sort();
            aspects.dedup();
            for a in aspects {
                records.push(record(a, majority_baseline(&train_docs, &docs, a)?, 0.0));
            }
        }
        Some(b) => {
            let (Some(pairs), Some(lex)) = (&args.pairs, &args.lexicon) else {
                return Err(Error::Config("lexicon baselines need --pairs and --lexicon".into()));
            };
            let pairs = PairSet::load(resolve_input(pairs), &[])?;
            let lexicon = OpinionLexicon::load(resolve_input(lex))?;
            let mode = if b == Baseline::LexiconO { TieMode::Overall } else { TieMode::Random };
            for a in pairs.aspects.iter().filter(|a| labelled(a)) {
                let s = lexicon_baseline(
                    &docs,
                    &pairs,
                    a,
                    &lexicon,
                    mode,
                    args.trials,
                    seed,
                    args.negation_window,
                )?;
                records.push(record(a, s.mean, s.std));
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Invalid("no gold labels for any evaluated aspect".into()));
    }
    if let Some(m) = mean_record(&records, method, &args.split) {
        records.push(m);
    }
    if let Some(out) = &args.out {
        write_file(out, &format_metrics(&records))?;
    }
    Ok(records)
}

/// Writes corpus.jsonl, train/dev/test.jsonl (8:1:1), pairs.tsv and
/// embeddings.txt.
pub fn cmd_generate(args: &GenerateArgs, seed: u64) -> Result<crate::synth::SynthCorpus> {
    let mut cfg = match &args.config {
        Some(p) => {
            let p = resolve_input(p);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("synth config: {e}")))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = args.num_docs {
        cfg.num_docs = v;
    }
    if let Some(v) = args.num_aspects {
        cfg.num_aspects = v;
    }
    if let Some(v) = args.separation {
        cfg.class_separation = v;
    }
    if let Some(v) = args.pair_rate {
        cfg.pair_rate = v;
    }
    let corpus = generate(&cfg)?;
    let out = &args.out;
    write_file(&out.join("corpus.jsonl"), &to_jsonl(&corpus.docs))?;
    let (train, dev, test) = split_corpus(&corpus.docs, (8, 1, 1), seed)?;
    write_file(&out.join("train.jsonl"), &to_jsonl(&train))?;
    write_file(&out.join("dev.jsonl"), &to_jsonl(&dev))?;
    write_file(&out.join("test.jsonl"), &to_jsonl(&test))?;
    corpus.pairs.save(out.join("pairs.tsv"))?;
    save_embeddings(
        out.join("embeddings.txt"),
        &corpus.embeddings.vocab,
        &corpus.embeddings.table,
    )?;
    Ok(corpus)
}

pub fn cmd_check(args: &CheckArgs, seed: u64) -> Vec<CheckOutcome> {
    run_checks(CheckOptions {
        seed,
        fault_entropy_sign: args.inject_entropy_fault,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Ok(Status::Success)), 0);
        assert_eq!(exit_code(&Ok(Status::VerificationFailed)), 1);
        assert_eq!(exit_code(&Err(Error::Config("x".into()))), 2);
        let io = Error::io(Path::new("x"), std::io::Error::other("boom"));
        assert_eq!(exit_code(&Err(io)), 3);
    }

    #[test]
    fn flags_override_config_and_set() {
        let cli = Cli::try_parse_from([
            "pairsent", "train", "--corpus", "c", "--pairs", "p", "--out", "o", "--alpha", "0.5",
            "--set", "dropout=0.1", "--set", "objective=\"EXACT_L2\"", "--seed", "7",
        ])
        .unwrap();
        let Command::Train(args) = &cli.command else { panic!() };
        let cfg = train_config(args, cli.seed).unwrap();
        assert_eq!(cfg.alpha, Some(0.5));
        assert_eq!(cfg.dropout, 0.1);
        assert_eq!(cfg.objective, ObjectiveKind::ExactL2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.negatives, 10);
    }

    #[test]
    fn bare_string_override_and_bad_key() {
        let cli = Cli::try_parse_from([
            "pairsent", "train", "--corpus", "c", "--pairs", "p", "--out", "o", "--set",
            "prior=learned",
        ])
        .unwrap();
        let Command::Train(args) = &cli.command else { panic!() };
        assert!(train_config(args, None).is_ok());
        let cli = Cli::try_parse_from([
            "pairsent", "train", "--corpus", "c", "--pairs", "p", "--out", "o", "--set", "nope=1",
        ])
        .unwrap();
        let Command::Train(args) = &cli.command else { panic!() };
        assert!(matches!(train_config(args, None), Err(Error::Config(_))));
    }
}
