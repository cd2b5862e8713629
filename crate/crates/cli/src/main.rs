//! `ragmark`: build corpora, question sets and indexes, ask questions
//! through the retrieval pipeline, and run threshold sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use ragmark::config::{self, ClientError, ConfigError, Endpoint, Settings, REGISTRY};
use ragmark::corpus::{self, CorpusError, Document, Paragraph, Sentence};
use ragmark::embed::{EmbedError, Embedder};
use ragmark::generate::GenError;
use ragmark::http::HttpError;
use ragmark::experiment::{self, ArmScores, Evaluator, ExperimentError, BASELINE_ARM};
use ragmark::index::{self, IndexError, IndexKind, IndexedDataset};
use ragmark::jsonl::{read_jsonl, write_jsonl};
use ragmark::metrics::score_row;
use ragmark::qagen::{self, QAPair, QADataset, QaGenError};
use ragmark::retrieve::{Budgets, PromptTemplate, RagPipeline, RetrieveError};
use ragmark::testgen::{self, DensityClusterer, PcaReducer, TestGenError, TestSet};
use ragmark::tokenize::{CounterSet, WhitespacePunctCounter};
use ragmark::Scalar;

const AFTER_HELP: &str = "\
Settings resolve in this order: command-line flags, then the config file
(--config or RAGMARK_CONFIG), then built-in defaults. `ragmark config --list`
prints every key. Exit codes: 0 success, 1 usage, 2 aborted run, 3 I/O.";

#[derive(Debug, Parser)]
#[command(name = "ragmark", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, env = "RAGMARK_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set retrieve.threshold=0.4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Validate inputs and print the plan without writing anything or
    /// calling remote endpoints.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Increase log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Sentences,
    Questions,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Dtype {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split documents into paragraphs and index-ready sentences.
    Ingest {
        /// Plain-text files or directories of `.txt` files.
        #[arg(long)]
        input: Vec<PathBuf>,
        /// CORD-19 style JSON array or JSONL records.
        #[arg(long)]
        cord19: Option<PathBuf>,
        #[arg(long)]
        paragraphs_out: PathBuf,
        #[arg(long)]
        sentences_out: PathBuf,
        /// Where to list rejected CORD-19 records.
        #[arg(long)]
        rejections_out: Option<PathBuf>,
    },
    /// Generate questions for paragraphs and split train/validation.
    QaGen {
        #[arg(long)]
        paragraphs: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        /// Without this every pair goes to `--train-out`.
        #[arg(long)]
        validation_out: Option<PathBuf>,
        /// Overrides `qagen.endpoint`.
        #[arg(long)]
        qg_endpoint: Option<String>,
    },
    /// Embed sentences or questions into an index file.
    Index {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Sentences (for `sentences`) or Q&A pairs (for `questions`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "f32")]
        dtype: Dtype,
        /// Overrides `embed.endpoint`.
        #[arg(long)]
        embed_endpoint: Option<String>,
    },
    /// Build a held-out test set by clustering a sentence index.
    Testgen {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `qagen.endpoint`.
        #[arg(long)]
        qg_endpoint: Option<String>,
    },
    /// Answer one question through retrieval and print the context.
    Ask {
        #[arg(long)]
        question: String,
        #[arg(long)]
        index: PathBuf,
        /// Overrides `retrieve.threshold`.
        #[arg(long)]
        threshold: Option<f64>,
        /// Reference answer to score against.
        #[arg(long)]
        reference: Option<String>,
        /// Overrides `gen.endpoint`.
        #[arg(long)]
        endpoint: Option<String>,
        /// Print the answer as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the baseline and threshold sweeps and write the report.
    Sweep {
        /// Overrides `experiment.testset`.
        #[arg(long)]
        testset: Option<PathBuf>,
        /// Overrides `experiment.index_sentences`.
        #[arg(long)]
        index_sentences: Option<PathBuf>,
        /// Overrides `experiment.index_questions`.
        #[arg(long)]
        index_questions: Option<PathBuf>,
        /// Overrides `experiment.thresholds`, comma separated.
        #[arg(long)]
        thresholds: Option<String>,
        /// Overrides `experiment.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `gen.endpoint`.
        #[arg(long)]
        endpoint: Option<String>,
    },
    /// Rebuild report files from a saved `scores.csv`.
    Report {
        #[arg(long)]
        scores: PathBuf,
        /// Overrides `experiment.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Show configuration keys.
    Config {
        /// List every key with its owner, value and description.
        #[arg(long)]
        list: bool,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Aborted(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Aborted(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(c) => c.into(),
            ClientError::Unsupported { .. } => CliError::Usage(e.to_string()),
            ClientError::Http(HttpError::Config(_))
            | ClientError::Embed(EmbedError::Http(HttpError::Config(_)))
            | ClientError::Gen(GenError::Http(HttpError::Config(_))) => CliError::Usage(e.to_string()),
            _ => CliError::Aborted(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } | CorpusError::Json(_) => CliError::Io(e.to_string()),
            CorpusError::EmptyDocument(_) => CliError::Aborted(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<QaGenError> for CliError {
    fn from(e: QaGenError) -> Self {
        match e {
            QaGenError::InvalidK | QaGenError::InvalidRatio(_) => CliError::Usage(e.to_string()),
            _ => CliError::Aborted(e.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::Io(_) | IndexError::Checksum | IndexError::Version { .. } | IndexError::Corrupt(_) => {
                CliError::Io(e.to_string())
            }
            IndexError::KindMismatch { .. } | IndexError::DimMismatch { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Aborted(e.to_string()),
        }
    }
}

impl From<TestGenError> for CliError {
    fn from(e: TestGenError) -> Self {
        match e {
            TestGenError::Index(i) => i.into(),
            TestGenError::Io(_) | TestGenError::Corrupt(_) => CliError::Io(e.to_string()),
            _ => CliError::Aborted(e.to_string()),
        }
    }
}

impl From<RetrieveError> for CliError {
    fn from(e: RetrieveError) -> Self {
        match e {
            RetrieveError::Index(i) => i.into(),
            RetrieveError::Template(_) => CliError::Usage(e.to_string()),
            _ => CliError::Aborted(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::InvalidThresholds(_) => CliError::Usage(e.to_string()),
            ExperimentError::Aborted { .. } | ExperimentError::EmptyTestSet => CliError::Aborted(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(io_error(path, "no such file"))
    }
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(path).map_err(|e| io_error(path, e))
}

fn write_records<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    write_jsonl(path, items).map_err(|e| io_error(path, e))
}

fn load_index(path: &Path) -> Result<IndexedDataset<f64>, CliError> {
    IndexedDataset::<f64>::load(path).map_err(|e| match e {
        IndexError::Io(io) => io_error(path, io),
        other => other.into(),
    })
}

fn settings(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = match &cli.config {
        Some(path) => Settings::from_file(path).map_err(|e| match e {
            ConfigError::Io(io) => io_error(path, io),
            other => other.into(),
        })?,
        None => Settings::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
        s.set(k.trim(), v.trim())?;
    }
    Ok(s)
}

fn set_opt(s: &mut Settings, key: &str, value: Option<impl ToString>) -> Result<(), CliError> {
    if let Some(v) = value {
        s.set(key, v.to_string())?;
    }
    Ok(())
}

fn budgets(s: &Settings) -> Result<Budgets, CliError> {
    Ok(Budgets {
        model_max_input: s.get("retrieve.model_max_input")?,
        answer_reserve: s.get("retrieve.answer_reserve")?,
    })
}

fn template(s: &Settings) -> Result<PromptTemplate, CliError> {
    match s.optional("retrieve.template") {
        Some(path) => PromptTemplate::from_file(Path::new(path)).map_err(CliError::from),
        None => Ok(PromptTemplate::default()),
    }
}

fn clusterer(s: &Settings) -> Result<DensityClusterer, CliError> {
    Ok(DensityClusterer {
        eps: s.get_optional("testgen.eps")?,
        min_pts: s.get("testgen.min_pts")?,
        max_clusters: s.get("testgen.max_clusters")?,
    })
}

fn check_embedder(index: &IndexedDataset<f64>, embedder: &dyn Embedder<f64>) -> Result<(), CliError> {
    if index.embedder_name != embedder.name() || index.dim != embedder.dim() {
        return Err(CliError::Usage(format!(
            "index was built with `{}` ({} dims) but the configured embedder is `{}` ({} dims)",
            index.embedder_name,
            index.dim,
            embedder.name(),
            embedder.dim()
        )));
    }
    Ok(())
}

/// Endpoint strings are checked in dry runs without connecting.
fn check_endpoint(s: &Settings, key: &str) -> Result<Endpoint, CliError> {
    Ok(s.endpoint(key)?)
}

fn plan(lines: &[String]) {
    println!("dry run, nothing written:");
    for line in lines {
        println!("  {line}");
    }
}

fn text_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| io_error(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            require_file(input)?;
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn ingest(
    s: &Settings,
    dry_run: bool,
    inputs: &[PathBuf],
    cord19: Option<&Path>,
    paragraphs_out: &Path,
    sentences_out: &Path,
    rejections_out: Option<&Path>,
) -> Result<(), CliError> {
    if inputs.is_empty() && cord19.is_none() {
        return Err(CliError::Usage("give at least one --input or --cord19".into()));
    }
    let budget: usize = s.get("corpus.paragraph_budget")?;
    let min_words: usize = s.get("corpus.min_sentence_words")?;
    let max_words: usize = s.get("corpus.max_sentence_words")?;
    let mut documents = Vec::new();
    for path in text_files(inputs)? {
        documents.push(Document::from_text_file(&path)?);
    }
    let mut rejected = Vec::new();
    if let Some(path) = cord19 {
        let outcome = corpus::filter_cord19(&corpus::read_cord19_records(path)?);
        log::info!(
            "{}: kept {} records, rejected {}",
            path.display(),
            outcome.documents.len(),
            outcome.rejected.len()
        );
        documents.extend(outcome.documents);
        rejected = outcome.rejected;
    }
    let counters = CounterSet::baseline();
    let mut paragraphs: Vec<Paragraph> = Vec::new();
    for doc in &mut documents {
        match corpus::split_paragraphs(doc, &counters, budget) {
            Ok(p) => paragraphs.extend(p),
            Err(CorpusError::EmptyDocument(id)) => log::warn!("skipping empty document `{id}`"),
            Err(e) => return Err(e.into()),
        }
        if let Some(ordinals) = doc.source_meta.get("hard_split") {
            log::info!("document `{}`: hard-split paragraphs {ordinals}", doc.id);
        }
    }
    let sentences: Vec<Sentence> =
        corpus::filter_sentences(&corpus::sentences_of(&paragraphs), min_words, max_words)?;
    if dry_run {
        plan(&[
            format!("{} documents -> {} paragraphs", documents.len(), paragraphs.len()),
            format!("{} sentences within [{min_words}, {max_words}] words", sentences.len()),
            format!("would write {}", paragraphs_out.display()),
            format!("would write {}", sentences_out.display()),
        ]);
        return Ok(());
    }
    write_records(paragraphs_out, &paragraphs)?;
    write_records(sentences_out, &sentences)?;
    if let Some(path) = rejections_out {
        write_records(path, &rejected)?;
    }
    println!(
        "{} documents, {} paragraphs, {} sentences",
        documents.len(),
        paragraphs.len(),
        sentences.len()
    );
    Ok(())
}

fn qa_gen(
    s: &Settings,
    dry_run: bool,
    paragraphs_path: &Path,
    train_out: &Path,
    validation_out: Option<&Path>,
) -> Result<(), CliError> {
    let paragraphs: Vec<Paragraph> = read_records(paragraphs_path)?;
    let k: usize = s.get("qagen.k")?;
    let ratio: f64 = s.get("qagen.validation_ratio")?;
    let inflight: usize = s.get("qagen.max_inflight")?;
    let seed: u64 = s.get("qagen.seed")?;
    if dry_run {
        check_endpoint(s, "qagen.endpoint")?;
        let mut lines = vec![
            format!("{} paragraphs, up to {k} questions each", paragraphs.len()),
            format!("would write {}", train_out.display()),
        ];
        if let Some(v) = validation_out {
            lines.push(format!("would hold out {ratio} of pairs into {}", v.display()));
        }
        plan(&lines);
        return Ok(());
    }
    let client = config::make_question_generator(s)?;
    let name = paragraphs_path
        .file_stem()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let build = qagen::build_qa_dataset(&name, &paragraphs, client.as_ref(), k, inflight)?;
    if !build.skipped.is_empty() {
        log::warn!("{} paragraphs skipped", build.skipped.len());
    }
    match validation_out {
        Some(v) => {
            let split = qagen::split_train_validation(&build.dataset, ratio, seed)?;
            if split.pool_exhausted {
                log::warn!("not enough multi-question paragraphs for the requested validation share");
            }
            write_records(train_out, &split.train.pairs)?;
            write_records(v, &split.validation.pairs)?;
            println!("{} train pairs, {} validation pairs", split.train.pairs.len(), split.validation.pairs.len());
        }
        None => {
            write_records(train_out, &build.dataset.pairs)?;
            println!("{} pairs", build.dataset.pairs.len());
        }
    }
    Ok(())
}

fn build_index<T: Scalar>(s: &Settings, kind: Kind, input: &Path, out: &Path) -> Result<usize, CliError> {
    let embedder = config::make_embedder::<T>(s)?;
    let index = match kind {
        Kind::Sentences => {
            let sentences: Vec<Sentence> = read_records(input)?;
            index::build_sentence_index(&sentences, embedder.as_ref())?
        }
        Kind::Questions => {
            let pairs: Vec<QAPair> = read_records(input)?;
            index::build_question_index(&QADataset::new("qa", pairs), embedder.as_ref())?
        }
    };
    index.save(out).map_err(|e| match e {
        IndexError::Io(io) => io_error(out, io),
        other => other.into(),
    })?;
    Ok(index.len())
}

fn index_cmd(s: &Settings, dry_run: bool, kind: Kind, input: &Path, out: &Path, dtype: Dtype) -> Result<(), CliError> {
    require_file(input)?;
    if dry_run {
        check_endpoint(s, "embed.endpoint")?;
        let count = match kind {
            Kind::Sentences => read_records::<Sentence>(input)?.len(),
            Kind::Questions => read_records::<QAPair>(input)?.len(),
        };
        plan(&[format!("embed {count} keys with {}", s.raw("embed.endpoint")), format!("would write {}", out.display())]);
        return Ok(());
    }
    let n = match dtype {
        Dtype::F32 => build_index::<f32>(s, kind, input, out)?,
        Dtype::F64 => build_index::<f64>(s, kind, input, out)?,
    };
    println!("{n} entries written to {}", out.display());
    Ok(())
}

fn testgen_cmd(s: &Settings, dry_run: bool, index_path: &Path, out: &Path) -> Result<(), CliError> {
    let index = load_index(index_path)?;
    index.expect_kind(IndexKind::Sentences)?;
    let clusterer = clusterer(s)?;
    if dry_run {
        check_endpoint(s, "qagen.endpoint")?;
        plan(&[
            format!("cluster {} sentences (min_pts {}, max {} clusters)", index.len(), clusterer.min_pts, clusterer.max_clusters),
            format!("would write {}", out.display()),
        ]);
        return Ok(());
    }
    let qg = config::make_question_generator(s)?;
    let build = testgen::assemble_test_set(&index, &PcaReducer, &clusterer, &CounterSet::baseline(), qg.as_ref())?;
    build.test_set.save(out)?;
    println!(
        "{} clusters kept ({} oversize, {} outlier sentences), {} test questions",
        build.clusters.len(),
        build.oversize.len(),
        build.clustering.outliers.len(),
        build.test_set.pairs.len()
    );
    Ok(())
}

fn ask(s: &Settings, dry_run: bool, question: &str, index_path: &Path, reference: Option<&str>, json: bool) -> Result<(), CliError> {
    let index = load_index(index_path)?;
    let threshold: f64 = s.get("retrieve.threshold")?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Usage(format!("threshold {threshold} outside [0, 1]")));
    }
    let budgets = budgets(s)?;
    let template = template(s)?;
    if dry_run {
        check_endpoint(s, "embed.endpoint")?;
        check_endpoint(s, "gen.endpoint")?;
        plan(&[
            format!("retrieve from {} ({} entries) at threshold {threshold}", index.kind, index.len()),
            format!("generate with {}", s.raw("gen.endpoint")),
        ]);
        return Ok(());
    }
    let embedder = config::make_embedder::<f64>(s)?;
    check_embedder(&index, embedder.as_ref())?;
    let generator = config::make_generator(s, "gen.endpoint")?;
    let counter = WhitespacePunctCounter;
    let pipeline = RagPipeline {
        index: &index,
        embedder: embedder.as_ref(),
        generator: generator.as_ref(),
        counter: &counter,
        budgets,
        template,
    };
    let answer = pipeline.answer(question, threshold)?;
    let scores = reference.map(|r| score_row("ask", &answer.generated_text, r, embedder.as_ref()));
    if json {
        let value = serde_json::json!({ "answer": answer, "scores": scores });
        println!("{}", serde_json::to_string_pretty(&value).map_err(|e| CliError::Io(e.to_string()))?);
        return Ok(());
    }
    println!("Threshold: {threshold} on {}", index.kind);
    println!(
        "Context: {} tokens from {} entries{}",
        answer.context.token_count,
        answer.context.included.len(),
        if answer.context.truncated { ", truncated" } else { "" }
    );
    for hit in &answer.context.included {
        let entry = &index.entries[hit.entry];
        println!("  [{:.4}] {}#{}", hit.score, entry.doc_id, entry.paragraph_ordinal);
    }
    if !answer.context.text.is_empty() {
        println!("{}", answer.context.text);
    }
    println!("Answer: {}", answer.generated_text);
    if let Some(row) = scores {
        println!(
            "Scores: ROUGE {:.4}  METEOR {:.4}  BLEU {:.4}  CS {:.4}",
            row.rouge, row.meteor, row.bleu, row.cs
        );
    }
    Ok(())
}

fn sweep(s: &Settings, dry_run: bool) -> Result<(), CliError> {
    let testset_path = s
        .optional("experiment.testset")
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage("no test set: pass --testset or set experiment.testset".into()))?;
    let mut cfg = experiment::ExperimentConfig::new(&testset_path, s.raw("experiment.output_dir"));
    cfg.index_sentences = s.optional("experiment.index_sentences").map(PathBuf::from);
    cfg.index_questions = s.optional("experiment.index_questions").map(PathBuf::from);
    cfg.thresholds = s.get_list("experiment.thresholds")?;
    cfg.budgets = budgets(s)?;
    cfg.max_inflight = s.get("gen.max_inflight")?;
    cfg.failure_budget = s.get("experiment.failure_budget")?;
    cfg.validate()?;
    let svg: bool = s.get("experiment.svg")?;
    let template = template(s)?;

    let test = TestSet::load(&testset_path).map_err(|e| match e {
        TestGenError::Io(io) => io_error(&testset_path, io),
        other => other.into(),
    })?;
    let mut indexes = Vec::new();
    for (path, kind) in [(&cfg.index_sentences, IndexKind::Sentences), (&cfg.index_questions, IndexKind::Questions)] {
        if let Some(p) = path {
            let index = load_index(p)?;
            index.expect_kind(kind)?;
            indexes.push(index);
        }
    }
    let finetuned = s.optional("gen.finetuned_endpoint").is_some();
    if dry_run {
        check_endpoint(s, "embed.endpoint")?;
        check_endpoint(s, "gen.endpoint")?;
        if finetuned {
            check_endpoint(s, "gen.finetuned_endpoint")?;
        }
        let mut lines = vec![format!("{} test questions, baseline arm", test.pairs.len())];
        if finetuned {
            lines.push("fine-tuned arm without retrieval".into());
        }
        for index in &indexes {
            lines.push(format!("sweep {} over {} thresholds", index.kind, cfg.thresholds.len()));
        }
        lines.push(format!("would write reports to {}", cfg.output_dir.display()));
        plan(&lines);
        return Ok(());
    }

    let embedder = config::make_embedder::<f64>(s)?;
    for index in &indexes {
        check_embedder(index, embedder.as_ref())?;
    }
    let generator = config::make_generator(s, "gen.endpoint")?;
    let counter = WhitespacePunctCounter;
    let evaluator = Evaluator {
        test: &test.pairs,
        embedder: embedder.as_ref(),
        generator: generator.as_ref(),
        counter: &counter,
        budgets: cfg.budgets,
        template: template.clone(),
        max_inflight: cfg.max_inflight,
        failure_budget: cfg.failure_budget,
    };
    let mut arms: Vec<ArmScores> = vec![evaluator.run_baseline(BASELINE_ARM)?];
    if finetuned {
        let ft = config::make_generator(s, "gen.finetuned_endpoint")?;
        let ft_eval = Evaluator {
            generator: ft.as_ref(),
            template: template.clone(),
            ..evaluator
        };
        arms.push(ft_eval.run_baseline("fine-tuned")?);
    }
    for index in &indexes {
        arms.extend(evaluator.run_sweep(&format!("rag-{}", index.kind), index, &cfg.thresholds)?);
    }
    write_outputs(&arms, &cfg.output_dir, svg)
}

fn write_outputs(arms: &[ArmScores], dir: &Path, svg: bool) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let table = experiment::summarize(arms);
    experiment::write_scores(&dir.join("scores.csv"), arms)?;
    let files = experiment::emit_report(&table, dir, svg)?;
    println!("{:<24} {:>9} {:>9} {:>9} {:>9}", "arm", "ROUGE", "METEOR", "BLEU", "CS");
    for row in &table.rows {
        let label = match row.threshold {
            Some(t) => format!("{} @{t}", row.arm),
            None => row.arm.clone(),
        };
        println!(
            "{label:<24} {:>9.6} {:>9.6} {:>9.6} {:>9.6}",
            row.means.rouge, row.means.meteor, row.means.bleu, row.means.cs
        );
    }
    println!("report written to {}", files.csv.display());
    Ok(())
}

fn report(s: &Settings, dry_run: bool, scores: &Path) -> Result<(), CliError> {
    require_file(scores)?;
    let arms = experiment::read_scores(scores)?;
    if arms.is_empty() {
        return Err(CliError::Aborted(format!("{}: no score rows", scores.display())));
    }
    let dir = PathBuf::from(s.raw("experiment.output_dir"));
    if dry_run {
        plan(&[format!("{} arm runs", arms.len()), format!("would write reports to {}", dir.display())]);
        return Ok(());
    }
    let svg: bool = s.get("experiment.svg")?;
    let table = experiment::summarize(&arms);
    let files = experiment::emit_report(&table, &dir, svg)?;
    println!("report written to {}", files.csv.display());
    Ok(())
}

fn list_config(s: &Settings) -> Result<(), CliError> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    for spec in REGISTRY {
        let written = writeln!(out, "{} = {}", spec.key, s.raw(spec.key))
            .and_then(|_| writeln!(out, "    [{}] {}", spec.owner, spec.help));
        match written {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => return Ok(()),
            Err(e) => return Err(CliError::Io(e.to_string())),
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut s = settings(&cli)?;
    let dry_run = cli.dry_run;
    match &cli.command {
        Command::Ingest {
            input,
            cord19,
            paragraphs_out,
            sentences_out,
            rejections_out,
        } => ingest(&s, dry_run, input, cord19.as_deref(), paragraphs_out, sentences_out, rejections_out.as_deref()),
        Command::QaGen {
            paragraphs,
            train_out,
            validation_out,
            qg_endpoint,
        } => {
            set_opt(&mut s, "qagen.endpoint", qg_endpoint.as_ref())?;
            qa_gen(&s, dry_run, paragraphs, train_out, validation_out.as_deref())
        }
        Command::Index {
            kind,
            input,
            out,
            dtype,
            embed_endpoint,
        } => {
            set_opt(&mut s, "embed.endpoint", embed_endpoint.as_ref())?;
            index_cmd(&s, dry_run, *kind, input, out, *dtype)
        }
        Command::Testgen { index, out, qg_endpoint } => {
            set_opt(&mut s, "qagen.endpoint", qg_endpoint.as_ref())?;
            testgen_cmd(&s, dry_run, index, out)
        }
        Command::Ask {
            question,
            index,
            threshold,
            reference,
            endpoint,
            json,
        } => {
            set_opt(&mut s, "retrieve.threshold", *threshold)?;
            set_opt(&mut s, "gen.endpoint", endpoint.as_ref())?;
            ask(&s, dry_run, question, index, reference.as_deref(), *json)
        }
        Command::Sweep {
            testset,
            index_sentences,
            index_questions,
            thresholds,
            out,
            endpoint,
        } => {
            set_opt(&mut s, "experiment.testset", testset.as_ref().map(|p| p.display()))?;
            set_opt(&mut s, "experiment.index_sentences", index_sentences.as_ref().map(|p| p.display()))?;
            set_opt(&mut s, "experiment.index_questions", index_questions.as_ref().map(|p| p.display()))?;
            set_opt(&mut s, "experiment.thresholds", thresholds.as_ref())?;
            set_opt(&mut s, "experiment.output_dir", out.as_ref().map(|p| p.display()))?;
            set_opt(&mut s, "gen.endpoint", endpoint.as_ref())?;
            sweep(&s, dry_run)
        }
        Command::Report { scores, out } => {
            set_opt(&mut s, "experiment.output_dir", out.as_ref().map(|p| p.display()))?;
            report(&s, dry_run, scores)
        }
        Command::Config { list } => {
            if *list {
                list_config(&s)
            } else {
                Err(CliError::Usage("nothing to do; try `ragmark config --list`".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
