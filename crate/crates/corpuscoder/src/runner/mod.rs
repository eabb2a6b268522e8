//! Crash-resumable annotation runs.
//!
//! A [`Runner`] walks a corpus, sends one request per chunk through a
//! [`Gateway`], parses each reply against the prompt contract, and appends
//! exactly one terminal record per document to the journal. Restarting with
//! the same corpus, prompt, and run configuration resumes from the journal:
//! documents with a `done` or `failed` record are skipped, so re-running the
//! same command never re-bills finished work; only `pending` documents (an
//! attempt that never reached an outcome) are picked up again. Failures that
//! look transient can be reopened explicitly with `retry_failed`. Auth
//! failures abort the run; budget exhaustion halts it gracefully so a later
//! run with more budget can continue.

pub mod journal;
pub mod record;

pub use journal::{
    load_effective_state, Journal, JournalError, JournalHeader, JournalState, RepairOutcome,
    JOURNAL_VERSION,
};
pub use record::{AnnotationRecord, ErrorClass, RecordStatus};

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{plan_chunks, reassemble, ChunkMode, ReassemblePolicy, WindowSpec};
use crate::corpus::{Corpus, Document};
use crate::gateway::wire::{ChatRequest, Usage};
use crate::gateway::{Gateway, GatewayError};
use crate::prompt::{parse_response, render_messages, AnswerSchema, AnswerValue, PromptSpec};

/// In what order pending documents are attempted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleOrder {
    /// Corpus order.
    InOrder,
    /// Deterministic shuffle of the pending set.
    Random { seed: u64 },
}

/// Semantic run parameters. These go into the journal header digest, so a
/// resume with different values is refused; operational knobs (concurrency,
/// retry_failed) deliberately stay out of the digest.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub window: WindowSpec,
    pub chunk_mode: ChunkMode,
    pub reassemble: ReassemblePolicy,
    pub order: ScheduleOrder,
    pub concurrency: usize,
    /// Also re-attempt documents whose last record is a retryable failure
    /// (exhausted rate limits, timeouts, unparseable replies); a plain resume
    /// leaves every failure closed. Permanent failures — a document that
    /// cannot fit the context, a non-transient provider rejection — stay
    /// closed even with this set.
    pub retry_failed: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::new(2000, 256).expect("default window is valid"),
            chunk_mode: ChunkMode::default(),
            reassemble: ReassemblePolicy::default(),
            order: ScheduleOrder::Random { seed: 0 },
            concurrency: 1,
            retry_failed: false,
        }
    }
}

impl RunConfig {
    /// Hex SHA-256 over the semantic parameters, in a fixed field order.
    pub fn digest(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            window_tokens: u64,
            reserve_tokens: u64,
            chunk_mode: ChunkMode,
            reassemble: ReassemblePolicy,
            order: &'a ScheduleOrder,
        }
        let view = View {
            window_tokens: self.window.window_tokens(),
            reserve_tokens: self.window.reserve_tokens(),
            chunk_mode: self.chunk_mode,
            reassemble: self.reassemble,
            order: &self.order,
        };
        let canonical = serde_json::to_vec(&view).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("authentication failed: {detail}")]
    Auth { detail: String },
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("run aborted by observer")]
    Aborted,
    #[error("invalid run configuration: {detail}")]
    Config { detail: String },
}

/// What a run session accomplished, against the full journal state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    /// Documents whose effective record is `done` (including prior sessions).
    pub done: usize,
    /// Documents whose effective record is `failed`.
    pub failed: usize,
    /// Documents left untouched because their record was already terminal
    /// when this session began (and `retry_failed` did not reopen them).
    pub skipped: usize,
    /// Documents this session wrote a record for.
    pub attempted: usize,
    /// True when the session halted because the budget could not cover the
    /// next request; the halted document keeps no record and stays pending.
    pub budget_exhausted: bool,
    pub spent: f64,
    pub total_usage: Usage,
}

enum DocOutcome {
    Record(AnnotationRecord),
    BudgetHalt,
    Fatal(RunError),
}

struct Shared<'a, 'o> {
    journal: Mutex<Journal>,
    observer: Mutex<&'o mut (dyn FnMut(&AnnotationRecord) -> bool + Send)>,
    queue: Mutex<VecDeque<&'a Document>>,
    results: Mutex<Vec<AnnotationRecord>>,
    halt: AtomicBool,
    budget_hit: AtomicBool,
    fatal: Mutex<Option<RunError>>,
    attempted: AtomicUsize,
}

pub struct Runner {
    gateway: Arc<Gateway>,
    spec: PromptSpec,
    config: RunConfig,
}

impl Runner {
    pub fn new(gateway: Arc<Gateway>, spec: PromptSpec, config: RunConfig) -> Self {
        Self {
            gateway,
            spec,
            config,
        }
    }

    pub fn header_for(&self, corpus: &Corpus) -> JournalHeader {
        JournalHeader {
            journal_version: JOURNAL_VERSION,
            corpus_digest: corpus.source_digest().to_string(),
            prompt_version_hash: self.spec.version_hash(),
            run_config_digest: self.config.digest(),
        }
    }

    /// Annotate the corpus, creating or resuming the journal at
    /// `journal_path`.
    pub fn run(&self, corpus: &Corpus, journal_path: &Path) -> Result<RunReport, RunError> {
        self.run_with_observer(corpus, journal_path, &mut |_| true)
    }

    /// Like [`Runner::run`], with a callback invoked after every appended
    /// record. Returning `false` aborts the session immediately — the
    /// record just appended stays in the journal, which is how tests
    /// simulate a crash at every possible boundary.
    pub fn run_with_observer(
        &self,
        corpus: &Corpus,
        journal_path: &Path,
        observer: &mut (dyn FnMut(&AnnotationRecord) -> bool + Send),
    ) -> Result<RunReport, RunError> {
        if self.config.chunk_mode == ChunkMode::Split
            && !matches!(self.spec.schema, AnswerSchema::NumericRange { .. })
        {
            return Err(RunError::Config {
                detail: "split chunking requires a numeric_range schema so chunk answers can be aggregated"
                    .to_string(),
            });
        }

        let header = self.header_for(corpus);
        let (journal, state) = if journal_path.exists() {
            Journal::open_resume(journal_path, &header)?
        } else {
            let journal = Journal::create(journal_path, header.clone())?;
            let state = JournalState {
                header,
                records: IndexMap::new(),
                lines_replayed: 0,
            };
            (journal, state)
        };

        let mut final_records = state.records;
        let prior_attempts: HashMap<String, u32> = final_records
            .iter()
            .map(|(id, r)| (id.clone(), r.attempt_count))
            .collect();
        let needs_attempt = |record: Option<&AnnotationRecord>| match record {
            None => true,
            Some(r) => !r.is_terminal() || (self.config.retry_failed && r.retryable_failure()),
        };
        let mut work: Vec<&Document> = corpus
            .documents()
            .iter()
            .filter(|d| needs_attempt(final_records.get(&d.id)))
            .collect();
        let skipped = corpus.documents().len() - work.len();
        if let ScheduleOrder::Random { seed } = self.config.order {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in 0..work.len() {
                let j = rng.random_range(i..work.len());
                work.swap(i, j);
            }
        }

        let shared = Shared {
            journal: Mutex::new(journal),
            observer: Mutex::new(observer),
            queue: Mutex::new(work.into_iter().collect()),
            results: Mutex::new(Vec::new()),
            halt: AtomicBool::new(false),
            budget_hit: AtomicBool::new(false),
            fatal: Mutex::new(None),
            attempted: AtomicUsize::new(0),
        };

        if self.config.concurrency <= 1 {
            self.worker(&shared, &prior_attempts);
        } else {
            std::thread::scope(|scope| {
                for _ in 0..self.config.concurrency {
                    scope.spawn(|| self.worker(&shared, &prior_attempts));
                }
            });
        }

        if let Some(error) = shared.fatal.into_inner().unwrap() {
            return Err(error);
        }
        for record in shared.results.into_inner().unwrap() {
            final_records.insert(record.document_id.clone(), record);
        }
        let done = final_records
            .values()
            .filter(|r| r.status == RecordStatus::Done)
            .count();
        let failed = final_records
            .values()
            .filter(|r| matches!(r.status, RecordStatus::Failed { .. }))
            .count();
        Ok(RunReport {
            done,
            failed,
            skipped,
            attempted: shared.attempted.into_inner(),
            budget_exhausted: shared.budget_hit.into_inner(),
            spent: self.gateway.meter().spent(),
            total_usage: self.gateway.meter().total_usage(),
        })
    }

    fn worker(&self, shared: &Shared<'_, '_>, prior_attempts: &HashMap<String, u32>) {
        loop {
            if shared.halt.load(Ordering::SeqCst) {
                return;
            }
            let Some(doc) = shared.queue.lock().unwrap().pop_front() else {
                return;
            };
            let prior = prior_attempts.get(&doc.id).copied().unwrap_or(0);
            match self.process_document(doc, prior) {
                DocOutcome::Record(record) => {
                    // Append and notify under one lock so journal order and
                    // observer order agree even across workers.
                    let mut journal = shared.journal.lock().unwrap();
                    if let Err(e) = journal.append(&record) {
                        *shared.fatal.lock().unwrap() = Some(e.into());
                        shared.halt.store(true, Ordering::SeqCst);
                        return;
                    }
                    let keep_going = (shared.observer.lock().unwrap())(&record);
                    drop(journal);
                    shared.results.lock().unwrap().push(record);
                    shared.attempted.fetch_add(1, Ordering::SeqCst);
                    if !keep_going {
                        *shared.fatal.lock().unwrap() = Some(RunError::Aborted);
                        shared.halt.store(true, Ordering::SeqCst);
                        return;
                    }
                }
                DocOutcome::BudgetHalt => {
                    shared.budget_hit.store(true, Ordering::SeqCst);
                    shared.halt.store(true, Ordering::SeqCst);
                    return;
                }
                DocOutcome::Fatal(error) => {
                    let mut fatal = shared.fatal.lock().unwrap();
                    if fatal.is_none() {
                        *fatal = Some(error);
                    }
                    shared.halt.store(true, Ordering::SeqCst);
                    return;
                }
            }
        }
    }

    fn process_document(&self, doc: &Document, prior_attempts: u32) -> DocOutcome {
        let plan = match plan_chunks(&doc.text, &self.config.window, self.config.chunk_mode) {
            Ok(plan) => plan,
            Err(e) => {
                // A text that cannot fit any chunk is a context problem for
                // this document; the run itself goes on.
                return DocOutcome::Record(self.failed_record(
                    doc,
                    ErrorClass::ContextLengthExceeded,
                    e.to_string(),
                    None,
                    prior_attempts,
                ));
            }
        };

        let mut answers: Vec<AnswerValue> = Vec::new();
        let mut motivations: Vec<String> = Vec::new();
        let mut raws: Vec<String> = Vec::new();
        let mut attempts = 0u32;

        for chunk in &plan.chunks {
            let request = ChatRequest {
                model: self.spec.model.name.clone(),
                temperature: self.spec.model.temperature,
                max_tokens: self.spec.model.max_tokens,
                messages: render_messages(&self.spec, &chunk.text),
            };
            match self.gateway.complete(&request) {
                Err(failure) => {
                    attempts += failure.attempts;
                    return match failure.error {
                        GatewayError::AuthFailed { detail } => {
                            DocOutcome::Fatal(RunError::Auth { detail })
                        }
                        GatewayError::BudgetExceeded { .. } => DocOutcome::BudgetHalt,
                        GatewayError::UnknownModel { .. } => DocOutcome::Fatal(RunError::Config {
                            detail: failure.error.to_string(),
                        }),
                        error => DocOutcome::Record(self.failed_record(
                            doc,
                            ErrorClass::from_gateway(&error),
                            error.to_string(),
                            (!raws.is_empty()).then(|| raws.join("\n---\n")),
                            prior_attempts + attempts,
                        )),
                    };
                }
                Ok(completion) => {
                    attempts += completion.attempts;
                    let content = completion.response.content;
                    match parse_response(&content, &self.spec) {
                        Err(error) => {
                            raws.push(content);
                            return DocOutcome::Record(self.failed_record(
                                doc,
                                ErrorClass::from_parse(&error),
                                error.to_string(),
                                Some(raws.join("\n---\n")),
                                prior_attempts + attempts,
                            ));
                        }
                        Ok(parsed) => {
                            answers.push(parsed.answer);
                            if !parsed.motivation.is_empty() {
                                motivations.push(parsed.motivation);
                            }
                            raws.push(content);
                        }
                    }
                }
            }
        }

        let answer = if answers.len() == 1 {
            answers.pop().unwrap()
        } else {
            let values: Vec<f64> = answers
                .iter()
                .map(|a| a.as_number().expect("split mode implies numeric answers"))
                .collect();
            let combined = reassemble(&values, self.config.reassemble)
                .expect("a plan always has at least one chunk");
            AnswerValue::Number(combined)
        };

        DocOutcome::Record(AnnotationRecord {
            document_id: doc.id.clone(),
            status: RecordStatus::Done,
            answer: Some(answer),
            motivation: Some(motivations.join(" | ")),
            raw_response: Some(raws.join("\n---\n")),
            prompt_version_hash: self.spec.version_hash(),
            model: self.spec.model.name.clone(),
            timestamp: Utc::now(),
            attempt_count: prior_attempts + attempts,
        })
    }

    fn failed_record(
        &self,
        doc: &Document,
        error_class: ErrorClass,
        detail: String,
        raw_response: Option<String>,
        attempt_count: u32,
    ) -> AnnotationRecord {
        AnnotationRecord {
            document_id: doc.id.clone(),
            status: RecordStatus::Failed {
                error_class,
                detail,
            },
            answer: None,
            motivation: None,
            raw_response,
            prompt_version_hash: self.spec.version_hash(),
            model: self.spec.model.name.clone(),
            timestamp: Utc::now(),
            attempt_count,
        }
    }
}
