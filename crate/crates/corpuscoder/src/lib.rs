//! Instruction-driven corpus annotation with large language models.
//!
//! This crate drives a complete annotation workflow: load a corpus of texts,
//! fit each text into a model's context window, send it to a chat-completion
//! endpoint together with a codebook instruction, parse the answer under a
//! strict output contract, and journal every result so an interrupted run
//! resumes where it stopped. Agreement between the model and human coders is
//! quantified with Krippendorff's alpha, and per-unit disagreement reports
//! support iterative refinement of the instruction.
//!
//! ## Modules
//!
//! - [`corpus`] - corpus ingestion from CSV metadata plus text files, coder
//!   sample export, and human-code import
//! - [`chunker`] - token estimation and context-window truncation/splitting
//! - [`gateway`] - chat-completion wire protocol, retries, cost metering,
//!   and a deterministic mock backend
//! - [`prompt`] - codebook-as-prompt rendering and answer parsing
//! - [`runner`] - the annotation loop with an append-only JSON Lines journal
//! - [`reliability`] - Krippendorff's alpha and disagreement reports
//! - [`config`] - application configuration (endpoint, prices, defaults)
//! - [`cli`] - the `corpuscoder` command-line interface

pub mod chunker;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod gateway;
pub mod prompt;
pub mod reliability;
pub mod runner;

pub use chunker::{estimate_tokens, plan_chunks, reassemble, ChunkMode, ChunkPlan, WindowSpec};
pub use corpus::{export_sample, import_codes, load_corpus, Corpus, Document, HumanCodes};
pub use gateway::{estimate_cost, Gateway, GatewayError};
pub use prompt::{parse_response, render_messages, validate_spec, AnswerSchema, PromptSpec};
pub use reliability::{krippendorff_alpha, AlphaResult, Level, RatingMatrix};
pub use runner::{load_effective_state, RunConfig, Runner};
