//! Command-line interface.
//!
//! Eight subcommands cover the full workflow: `ingest` normalizes a corpus,
//! `estimate-cost` prices a run, `annotate` executes it against a journal,
//! `export-results` / `export-sample` / `import-codes` move data in and out,
//! and `validate` / `disagreements` score the machine against human coders.
//!
//! Settings resolve as flags over config file over built-ins. The API key is
//! read exclusively from the environment variable named by `api_key_env`
//! (default `CORPUSCODER_API_KEY`); no flag or file can supply it, and no
//! command ever prints it.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::chunker::{ChunkMode, ReassemblePolicy, WindowSpec};
use crate::config::{
    AppConfig, RunDefaults, DEFAULT_CONCURRENCY, DEFAULT_MAX_ATTEMPTS, DEFAULT_RESERVE_TOKENS,
    DEFAULT_SEED, DEFAULT_WINDOW_TOKENS,
};
use crate::corpus::{
    export_sample, import_codes, load_corpus, load_normalized, write_normalized, IngestOptions,
    TextSource,
};
use crate::gateway::http::HttpBackend;
use crate::gateway::meter::UsageMeter;
use crate::gateway::mock::{MockBackend, MockScript};
use crate::gateway::retry::RetryPolicy;
use crate::gateway::{estimate_cost, Backend, Gateway, Pacer};
use crate::prompt::{validate_spec, AnswerValue, PromptSpec};
use crate::reliability::report::LlmAnswer;
use crate::reliability::{
    agreement_summary, disagreement_report, krippendorff_alpha, write_disagreements_csv,
    AlphaResult, ConsensusPolicy, DegenerateReason, Level, RatingMatrix,
};
use crate::runner::{
    load_effective_state, AnnotationRecord, ErrorClass, JournalState, RecordStatus, RunConfig,
    RunError, Runner, ScheduleOrder,
};

/// Everything worked.
pub const EXIT_OK: i32 = 0;
/// Bad invocation or bad input data.
pub const EXIT_USAGE: i32 = 2;
/// The run finished but some documents ended in a failed record.
pub const EXIT_PARTIAL: i32 = 3;
/// The run halted early because the budget could not cover the next request.
pub const EXIT_BUDGET: i32 = 4;
/// Authentication failed, or the key variable is not set.
pub const EXIT_AUTH: i32 = 5;

/// Rater id used for the machine in validation matrices.
const MACHINE_RATER: &str = "llm";

#[derive(Debug, Error)]
#[error("API key environment variable {var} is not set; export it and rerun")]
struct MissingApiKey {
    var: String,
}

#[derive(Debug, Parser)]
#[command(
    name = "corpuscoder",
    version,
    about = "Annotate text corpora with an instruction-driven language model and \
             validate the results against human coders"
)]
pub struct Cli {
    /// Configuration file (TOML). Optional; built-in defaults apply without it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Normalize a raw corpus into the canonical CSV plus a digest sidecar.
    Ingest(IngestArgs),
    /// Price a run without sending any requests.
    EstimateCost(EstimateArgs),
    /// Annotate a corpus, resuming from the journal when it already exists.
    Annotate(AnnotateArgs),
    /// Export the journal's per-document results as CSV.
    ExportResults(ExportResultsArgs),
    /// Draw a deterministic document sample for human coders.
    ExportSample(ExportSampleArgs),
    /// Normalize filled-in human codes into the long format.
    ImportCodes(ImportCodesArgs),
    /// Score machine answers against human codes with Krippendorff's alpha.
    Validate(ValidateArgs),
    /// Rank the units where the machine and the human consensus differ most.
    Disagreements(DisagreementsArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// CSV metadata file, one row per document.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Normalized corpus CSV to write.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Column holding document ids.
    #[arg(long, default_value = "id", value_name = "NAME")]
    id_column: String,
    /// Column holding the text itself.
    #[arg(long, default_value = "text", value_name = "NAME")]
    text_column: String,
    /// Read texts from files in this directory instead of a text column.
    #[arg(long, value_name = "DIR", conflicts_with = "text_column")]
    text_dir: Option<PathBuf>,
    /// Column holding file names under --text-dir.
    #[arg(long, default_value = "file", value_name = "NAME")]
    file_column: String,
}

/// Chunking geometry, shared by estimate-cost and annotate.
#[derive(Debug, Args)]
struct WindowArgs {
    /// Model context window, in estimated tokens.
    #[arg(long, value_name = "TOKENS")]
    window_tokens: Option<u64>,
    /// Tokens reserved for the instruction and the reply.
    #[arg(long, value_name = "TOKENS")]
    reserve_tokens: Option<u64>,
    /// Split over-long texts into chunks instead of truncating them.
    #[arg(long)]
    split: bool,
}

impl WindowArgs {
    fn resolve(&self, defaults: &RunDefaults) -> Result<WindowSpec> {
        let window = self
            .window_tokens
            .or(defaults.window_tokens)
            .unwrap_or(DEFAULT_WINDOW_TOKENS);
        let reserve = self
            .reserve_tokens
            .or(defaults.reserve_tokens)
            .unwrap_or(DEFAULT_RESERVE_TOKENS);
        WindowSpec::new(window, reserve).context("invalid context window")
    }

    fn mode(&self) -> ChunkMode {
        if self.split {
            ChunkMode::Split
        } else {
            ChunkMode::Truncate
        }
    }
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Normalized corpus CSV.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Prompt specification (TOML).
    #[arg(long, value_name = "FILE")]
    prompt: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// Emit the estimate as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Normalized corpus CSV.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Prompt specification (TOML).
    #[arg(long, value_name = "FILE")]
    prompt: PathBuf,
    /// Append-only progress journal; point a rerun at the same file to resume.
    #[arg(long, value_name = "FILE")]
    journal: PathBuf,
    #[command(flatten)]
    window: WindowArgs,
    /// How chunk answers merge in split mode.
    #[arg(long, value_enum, default_value_t = ReassembleArg::Mean)]
    reassemble: ReassembleArg,
    /// Visit documents in corpus order instead of a seeded shuffle.
    #[arg(long)]
    in_order: bool,
    /// Seed for the document shuffle and retry jitter.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Parallel request workers.
    #[arg(long, value_name = "N")]
    concurrency: Option<usize>,
    /// Spend ceiling in USD for this session.
    #[arg(long, value_name = "USD")]
    budget: Option<f64>,
    /// Attempts per request before a failure is recorded.
    #[arg(long, value_name = "N")]
    max_attempts: Option<u32>,
    /// Seconds to pause between request starts.
    #[arg(long, value_name = "SECONDS", conflicts_with = "no_pacing")]
    delay: Option<f64>,
    /// Disable the pause between request starts.
    #[arg(long)]
    no_pacing: bool,
    /// Re-attempt documents that failed with a retryable error (rate limits,
    /// timeouts, unparseable replies). Permanent failures stay closed.
    #[arg(long)]
    retry_failed: bool,
    /// Endpoint override: an https URL, or mock://<script.json> for offline
    /// runs.
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    /// Scripted-backend file; shorthand for --endpoint mock://<script>.
    #[arg(long, value_name = "SCRIPT", conflicts_with = "endpoint")]
    mock: Option<PathBuf>,
    /// Print one progress line per document to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct ExportResultsArgs {
    /// Journal to read.
    #[arg(long, value_name = "FILE")]
    journal: PathBuf,
    /// Results CSV to write.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Normalized corpus CSV; when given, the output is the corpus rows with
    /// answer and motivation columns appended instead of the bare journal
    /// table.
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportSampleArgs {
    /// Normalized corpus CSV.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Sample CSV to write, one empty column per coder.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Number of documents to draw.
    #[arg(long, value_name = "N")]
    size: usize,
    /// Sampling seed.
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Coder names, comma separated; one column each.
    #[arg(long, value_name = "NAMES", value_delimiter = ',', required = true)]
    coders: Vec<String>,
}

#[derive(Debug, Args)]
struct ImportCodesArgs {
    /// Filled-in sample (wide) or long-format codes CSV.
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Long-format codes CSV to write.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// Normalized corpus CSV; when given, code ids must exist in it.
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// Journal holding the machine answers. Omit it to score the human
    /// coders against each other instead.
    #[arg(long, value_name = "FILE")]
    journal: Option<PathBuf>,
    /// Long-format or wide human codes CSV.
    #[arg(long, value_name = "FILE")]
    codes: PathBuf,
    /// Measurement level for Krippendorff's alpha. No default: the level is
    /// part of the claim being made, so it has to be stated.
    #[arg(long, value_enum)]
    level: LevelArg,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct DisagreementsArgs {
    /// Journal holding the machine answers.
    #[arg(long, value_name = "FILE")]
    journal: PathBuf,
    /// Long-format or wide human codes CSV.
    #[arg(long, value_name = "FILE")]
    codes: PathBuf,
    /// Normalized corpus CSV, for the text excerpts.
    #[arg(long, value_name = "FILE")]
    corpus: PathBuf,
    /// Review CSV to write.
    #[arg(long, value_name = "FILE")]
    output: PathBuf,
    /// How multiple human codes collapse to one number.
    #[arg(long, value_enum, default_value_t = ConsensusArg::Mean)]
    consensus: ConsensusArg,
    /// Sort smallest difference first instead of largest.
    #[arg(long)]
    ascending: bool,
    /// Keep only the first N rows after sorting.
    #[arg(long, value_name = "N")]
    top: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReassembleArg {
    Mean,
    Max,
    Majority,
}

impl From<ReassembleArg> for ReassemblePolicy {
    fn from(arg: ReassembleArg) -> Self {
        match arg {
            ReassembleArg::Mean => ReassemblePolicy::Mean,
            ReassembleArg::Max => ReassemblePolicy::Max,
            ReassembleArg::Majority => ReassemblePolicy::Majority,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ConsensusArg {
    Mean,
    Majority,
}

impl From<ConsensusArg> for ConsensusPolicy {
    fn from(arg: ConsensusArg) -> Self {
        match arg {
            ConsensusArg::Mean => ConsensusPolicy::Mean,
            ConsensusArg::Majority => ConsensusPolicy::Majority,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Nominal,
    Ordinal,
    Interval,
    Ratio,
}

impl From<LevelArg> for Level {
    fn from(arg: LevelArg) -> Self {
        match arg {
            LevelArg::Nominal => Level::Nominal,
            LevelArg::Ordinal => Level::Ordinal,
            LevelArg::Interval => Level::Interval,
            LevelArg::Ratio => Level::Ratio,
        }
    }
}

fn level_name(level: Level) -> &'static str {
    match level {
        Level::Nominal => "nominal",
        Level::Ordinal => "ordinal",
        Level::Interval => "interval",
        Level::Ratio => "ratio",
    }
}

fn error_class_name(class: ErrorClass) -> String {
    serde_json::to_value(class)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_else(|| format!("{class:?}"))
}

/// Parse the process arguments, run the chosen command, and return the exit
/// code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let config = match &cli.config {
        Some(path) => match AppConfig::load(path) {
            Ok(config) => config,
            Err(err) => {
                eprintln!("error: {err}");
                return EXIT_USAGE;
            }
        },
        None => AppConfig::default(),
    };
    match dispatch(cli.command, &config) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify_error(&err)
        }
    }
}

fn classify_error(err: &anyhow::Error) -> i32 {
    if matches!(err.downcast_ref::<RunError>(), Some(RunError::Auth { .. }))
        || err.downcast_ref::<MissingApiKey>().is_some()
    {
        EXIT_AUTH
    } else {
        EXIT_USAGE
    }
}

fn dispatch(command: Command, config: &AppConfig) -> Result<i32> {
    match command {
        Command::Ingest(args) => cmd_ingest(&args),
        Command::EstimateCost(args) => cmd_estimate(&args, config),
        Command::Annotate(args) => cmd_annotate(&args, config),
        Command::ExportResults(args) => cmd_export_results(&args),
        Command::ExportSample(args) => cmd_export_sample(&args),
        Command::ImportCodes(args) => cmd_import_codes(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::Disagreements(args) => cmd_disagreements(&args),
    }
}

fn cmd_ingest(args: &IngestArgs) -> Result<i32> {
    let source = match &args.text_dir {
        Some(dir) => TextSource::Directory {
            dir: dir.clone(),
            file_column: args.file_column.clone(),
        },
        None => TextSource::Column(args.text_column.clone()),
    };
    let options = IngestOptions {
        id_column: args.id_column.clone(),
    };
    let corpus = load_corpus(&args.input, &source, &options)?;
    write_normalized(&corpus, &args.output)?;
    let tokens: u64 = corpus.documents().iter().map(|d| d.token_estimate).sum();
    println!(
        "ingested {} documents (~{tokens} tokens) -> {}",
        corpus.len(),
        args.output.display()
    );
    println!("corpus digest: {}", corpus.source_digest());
    Ok(EXIT_OK)
}

fn cmd_estimate(args: &EstimateArgs, config: &AppConfig) -> Result<i32> {
    let corpus = load_normalized(&args.corpus)?;
    let spec = PromptSpec::load(&args.prompt)?;
    let window = args.window.resolve(&config.defaults)?;
    warn_lints(&spec, &window);

    let prices = config.price_table();
    let estimate = estimate_cost(&corpus, &spec, &window, args.window.mode(), &prices)?;
    let Some(cost) = estimate.cost else {
        bail!(
            "no price configured for model '{}'; add [prices.\"{}\"] to the config file",
            spec.model.name,
            spec.model.name
        );
    };
    if args.json {
        let report = serde_json::json!({
            "documents": corpus.len(),
            "requests": estimate.requests,
            "model": spec.model.name,
            "prompt_tokens": estimate.prompt_tokens,
            "completion_token_cap": estimate.completion_tokens,
            "total_token_bound": estimate.total_tokens(),
            "estimated_cost": cost,
        });
        println!("{report:#}");
    } else {
        println!("documents: {}", corpus.len());
        println!("requests: {}", estimate.requests);
        println!("prompt tokens: {}", estimate.prompt_tokens);
        println!("completion token cap: {}", estimate.completion_tokens);
        println!("total token bound: {}", estimate.total_tokens());
        println!("estimated cost: ${cost:.4}");
    }
    Ok(EXIT_OK)
}

fn cmd_annotate(args: &AnnotateArgs, config: &AppConfig) -> Result<i32> {
    let corpus = load_normalized(&args.corpus)?;
    let spec = PromptSpec::load(&args.prompt)?;
    let window = args.window.resolve(&config.defaults)?;
    warn_lints(&spec, &window);

    let seed = args.seed.or(config.defaults.seed).unwrap_or(DEFAULT_SEED);
    let concurrency = args
        .concurrency
        .or(config.defaults.concurrency)
        .unwrap_or(DEFAULT_CONCURRENCY)
        .max(1);
    let run_config = RunConfig {
        window,
        chunk_mode: args.window.mode(),
        reassemble: args.reassemble.into(),
        order: if args.in_order {
            ScheduleOrder::InOrder
        } else {
            ScheduleOrder::Random { seed }
        },
        concurrency,
        retry_failed: args.retry_failed,
    };

    let budget = args.budget.or(config.defaults.budget);
    let max_attempts = args
        .max_attempts
        .or(config.defaults.max_attempts)
        .unwrap_or(DEFAULT_MAX_ATTEMPTS)
        .max(1);
    let pacing = if args.no_pacing {
        None
    } else {
        match args.delay {
            Some(seconds) => {
                if !seconds.is_finite() || seconds < 0.0 {
                    bail!("--delay must be a non-negative number of seconds");
                }
                Some(Duration::from_secs_f64(seconds))
            }
            None => Some(config.min_request_interval()),
        }
    };
    let mock_endpoint = args
        .mock
        .as_ref()
        .map(|script| format!("mock://{}", script.display()));
    let gateway = build_gateway(
        config,
        mock_endpoint.as_deref().or(args.endpoint.as_deref()),
        budget,
        max_attempts,
        pacing,
        seed,
    )?;

    let runner = Runner::new(Arc::new(gateway), spec, run_config);
    let verbose = args.verbose;
    let mut observer = move |record: &AnnotationRecord| {
        if verbose {
            match &record.status {
                RecordStatus::Done => {
                    let answer = record
                        .answer
                        .as_ref()
                        .map(ToString::to_string)
                        .unwrap_or_default();
                    eprintln!("{}: done (answer {answer})", record.document_id);
                }
                RecordStatus::Failed { error_class, .. } => {
                    eprintln!(
                        "{}: failed ({})",
                        record.document_id,
                        error_class_name(*error_class)
                    );
                }
                RecordStatus::Pending => {}
            }
        }
        true
    };
    let report = runner.run_with_observer(&corpus, &args.journal, &mut observer)?;

    println!(
        "done: {}  failed: {}  skipped: {}  attempted: {}",
        report.done, report.failed, report.skipped, report.attempted
    );
    println!(
        "tokens: {} prompt + {} completion",
        report.total_usage.prompt_tokens, report.total_usage.completion_tokens
    );
    println!("spent: ${:.4}", report.spent);
    if report.budget_exhausted {
        println!(
            "budget exhausted; remaining documents stay pending — rerun with a \
             higher budget to continue"
        );
        return Ok(EXIT_BUDGET);
    }
    if report.failed > 0 {
        return Ok(EXIT_PARTIAL);
    }
    Ok(EXIT_OK)
}

fn cmd_export_results(args: &ExportResultsArgs) -> Result<i32> {
    let state = load_effective_state(&args.journal)?;
    if let Some(corpus_path) = &args.corpus {
        return export_results_merged(&state, corpus_path, &args.output);
    }
    let mut writer = csv::Writer::from_path(&args.output)?;
    writer.write_record([
        "document_id",
        "status",
        "answer",
        "motivation",
        "attempts",
        "error",
    ])?;
    let mut done = 0;
    let mut failed = 0;
    for record in state.records.values() {
        let (status, error) = match &record.status {
            RecordStatus::Pending => ("pending", String::new()),
            RecordStatus::Done => {
                done += 1;
                ("done", String::new())
            }
            RecordStatus::Failed { error_class, .. } => {
                failed += 1;
                ("failed", error_class_name(*error_class))
            }
        };
        let answer = record
            .answer
            .as_ref()
            .map(ToString::to_string)
            .unwrap_or_default();
        writer.write_record([
            record.document_id.as_str(),
            status,
            answer.as_str(),
            record.motivation.as_deref().unwrap_or(""),
            record.attempt_count.to_string().as_str(),
            error.as_str(),
        ])?;
    }
    writer.flush()?;
    println!(
        "exported {} records ({done} done, {failed} failed) -> {}",
        state.records.len(),
        args.output.display()
    );
    Ok(EXIT_OK)
}

/// Corpus rows in corpus order with `answer`/`motivation` columns appended;
/// documents without a finished record keep both blank.
fn export_results_merged(state: &JournalState, corpus_path: &Path, output: &Path) -> Result<i32> {
    let corpus = load_normalized(corpus_path)?;
    let mut meta_cols: Vec<String> = Vec::new();
    for doc in corpus.documents() {
        for key in doc.metadata.keys() {
            if !meta_cols.contains(key) {
                meta_cols.push(key.clone());
            }
        }
    }

    let mut writer = csv::Writer::from_path(output)?;
    let mut header = vec!["id".to_string(), "text".to_string()];
    header.extend(meta_cols.iter().cloned());
    header.push("answer".to_string());
    header.push("motivation".to_string());
    writer.write_record(&header)?;

    let mut answered = 0;
    for doc in corpus.documents() {
        let record = state
            .records
            .get(&doc.id)
            .filter(|r| r.status == RecordStatus::Done);
        if record.is_some() {
            answered += 1;
        }
        let mut row = vec![doc.id.clone(), doc.text.clone()];
        for key in &meta_cols {
            row.push(doc.metadata.get(key).cloned().unwrap_or_default());
        }
        row.push(
            record
                .and_then(|r| r.answer.as_ref())
                .map(ToString::to_string)
                .unwrap_or_default(),
        );
        row.push(
            record
                .and_then(|r| r.motivation.clone())
                .unwrap_or_default(),
        );
        writer.write_record(&row)?;
    }
    writer.flush()?;
    println!(
        "merged {answered} answers onto {} corpus rows -> {}",
        corpus.len(),
        output.display()
    );
    Ok(EXIT_OK)
}

fn cmd_export_sample(args: &ExportSampleArgs) -> Result<i32> {
    let corpus = load_normalized(&args.corpus)?;
    let coders: Vec<String> = args.coders.iter().map(|c| c.trim().to_string()).collect();
    if coders.iter().any(String::is_empty) {
        bail!("coder names must not be blank");
    }
    export_sample(&corpus, args.size, args.seed, &coders, &args.output)?;
    println!(
        "sampled {} of {} documents -> {} (coders: {})",
        args.size,
        corpus.len(),
        args.output.display(),
        coders.join(", ")
    );
    Ok(EXIT_OK)
}

fn cmd_import_codes(args: &ImportCodesArgs) -> Result<i32> {
    let codes = import_codes(&args.input)?;
    if let Some(corpus_path) = &args.corpus {
        let corpus = load_normalized(corpus_path)?;
        codes.validate_against(&corpus)?;
    }
    let mut writer = csv::Writer::from_path(&args.output)?;
    writer.write_record(["document_id", "coder_id", "value"])?;
    for entry in codes.entries() {
        writer.write_record([
            entry.document_id.as_str(),
            entry.coder_id.as_str(),
            entry.value.to_string().as_str(),
        ])?;
    }
    writer.flush()?;
    let units: std::collections::HashSet<&str> = codes
        .entries()
        .iter()
        .map(|e| e.document_id.as_str())
        .collect();
    println!(
        "imported {} codes from {} coders across {} documents -> {}",
        codes.entries().len(),
        codes.coders().len(),
        units.len(),
        args.output.display()
    );
    Ok(EXIT_OK)
}

fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let codes = import_codes(&args.codes)?;
    let level: Level = args.level.into();

    let mut matrix = RatingMatrix::new(level);
    for entry in codes.entries() {
        matrix.add(&entry.document_id, &entry.coder_id, entry.value)?;
    }

    let mut machine: Option<(usize, usize)> = None;
    if let Some(journal) = &args.journal {
        if codes.coders().contains(&MACHINE_RATER) {
            bail!(
                "coder id '{MACHINE_RATER}' collides with the machine rater; \
                 rename that coder"
            );
        }
        let state = load_effective_state(journal)?;
        let (answers, skipped) = numeric_answers(&state);
        if answers.is_empty() {
            bail!("the journal holds no completed numeric answers to validate");
        }
        let coded_units: std::collections::HashSet<&str> = codes
            .entries()
            .iter()
            .map(|e| e.document_id.as_str())
            .collect();
        if !answers
            .iter()
            .any(|a| coded_units.contains(a.document_id.as_str()))
        {
            bail!("the journal and the codes share no documents; nothing to compare");
        }
        for answer in &answers {
            matrix.add(&answer.document_id, MACHINE_RATER, answer.answer)?;
        }
        machine = Some((answers.len(), skipped));
    }

    let result = krippendorff_alpha(&matrix);
    let summary = agreement_summary(&matrix);

    if args.json {
        let stats = match &result {
            AlphaResult::Computed(stats) => Some(stats),
            AlphaResult::Degenerate(_) => None,
        };
        let reason = match &result {
            AlphaResult::Computed(_) => None,
            AlphaResult::Degenerate(reason) => Some(degenerate_token(reason)),
        };
        let report = serde_json::json!({
            "level": level_name(level),
            "human_raters": codes.coders().len(),
            "machine_answers": machine.map(|(answers, _)| answers),
            "skipped_non_numeric": machine.map(|(_, skipped)| skipped),
            "alpha": stats.map(|s| s.alpha),
            "degenerate_reason": reason,
            "observed_disagreement": stats.map(|s| s.observed_disagreement),
            "expected_disagreement": stats.map(|s| s.expected_disagreement),
            "pairable_values": stats.map(|s| s.pairable_values),
            "pairable_units": stats.map(|s| s.pairable_units),
            "raw_agreement": {
                "compared_pairs": summary.compared_pairs,
                "agreeing_pairs": summary.agreeing_pairs,
                "rate": summary.rate(),
            },
        });
        println!("{report:#}");
        return Ok(EXIT_OK);
    }

    match machine {
        Some((answers, skipped)) => {
            println!("raters: {} human + 1 machine", codes.coders().len());
            println!("machine answers: {answers}");
            if skipped > 0 {
                println!("skipped {skipped} non-numeric answers");
            }
        }
        None => println!("raters: {} human", codes.coders().len()),
    }
    match &result {
        AlphaResult::Computed(stats) => {
            println!("alpha ({}): {:.4}", level_name(level), stats.alpha);
            println!("observed disagreement: {:.6}", stats.observed_disagreement);
            println!("expected disagreement: {:.6}", stats.expected_disagreement);
            println!(
                "pairable values: {} across {} units",
                stats.pairable_values, stats.pairable_units
            );
        }
        AlphaResult::Degenerate(reason) => {
            println!("alpha ({}): undefined — {reason}", level_name(level));
        }
    }
    match summary.rate() {
        Some(rate) => println!(
            "raw agreement: {}/{} pairs ({:.1}%)",
            summary.agreeing_pairs,
            summary.compared_pairs,
            rate * 100.0
        ),
        None => println!("raw agreement: no comparable pairs"),
    }
    Ok(EXIT_OK)
}

/// Stable machine-readable token for a degenerate alpha outcome.
fn degenerate_token(reason: &DegenerateReason) -> &'static str {
    match reason {
        DegenerateReason::NoPairableUnits => "no_pairable_units",
        DegenerateReason::NoVariation => "no_variation",
    }
}

fn cmd_disagreements(args: &DisagreementsArgs) -> Result<i32> {
    let corpus = load_normalized(&args.corpus)?;
    let state = load_effective_state(&args.journal)?;
    let codes = import_codes(&args.codes)?;
    let (answers, _) = numeric_answers(&state);
    let policy: ConsensusPolicy = args.consensus.into();

    let mut rows = disagreement_report(&corpus, &answers, &codes, policy, args.ascending)?;
    if let Some(top) = args.top {
        rows.truncate(top);
    }
    write_disagreements_csv(&rows, policy, &args.output)?;
    println!(
        "wrote {} disagreements -> {}",
        rows.len(),
        args.output.display()
    );
    Ok(EXIT_OK)
}

fn warn_lints(spec: &PromptSpec, window: &WindowSpec) {
    for lint in validate_spec(spec, Some(window)) {
        eprintln!("warning: {lint}");
    }
}

/// Build the gateway for `annotate`: resolve the endpoint, pick the backend,
/// and wire in retry, budget, prices, and pacing.
///
/// A `mock://<path>` endpoint runs against a scripted backend and needs no
/// key; anything else reads the key from the configured environment variable.
fn build_gateway(
    config: &AppConfig,
    endpoint_flag: Option<&str>,
    budget: Option<f64>,
    max_attempts: u32,
    pacing: Option<Duration>,
    seed: u64,
) -> Result<Gateway> {
    let endpoint = endpoint_flag.unwrap_or_else(|| config.endpoint());
    let backend: Box<dyn Backend> = if let Some(script_path) = endpoint.strip_prefix("mock://") {
        let script = MockScript::load(Path::new(script_path))?;
        Box::new(MockBackend::new(script))
    } else {
        let var = config.api_key_env();
        let key = std::env::var(var)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| MissingApiKey {
                var: var.to_string(),
            })?;
        Box::new(HttpBackend::new(endpoint, key, config.request_timeout())?)
    };
    let retry = RetryPolicy {
        max_attempts,
        ..RetryPolicy::default()
    };
    let pacer = pacing.map(Pacer::new);
    Ok(Gateway::new(
        backend,
        retry,
        Arc::new(UsageMeter::new(budget)),
        config.price_table(),
        pacer,
        seed,
    ))
}

/// Completed numeric answers from the journal, plus how many completed
/// answers were skipped for not being numeric.
fn numeric_answers(state: &JournalState) -> (Vec<LlmAnswer>, usize) {
    let mut answers = Vec::new();
    let mut skipped = 0;
    for record in state.records.values() {
        if record.status != RecordStatus::Done {
            continue;
        }
        match record.answer.as_ref().and_then(AnswerValue::as_number) {
            Some(value) => answers.push(LlmAnswer {
                document_id: record.document_id.clone(),
                answer: value,
                motivation: record.motivation.clone().unwrap_or_default(),
            }),
            None => skipped += 1,
        }
    }
    (answers, skipped)
}
