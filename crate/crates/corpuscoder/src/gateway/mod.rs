//! Provider gateway: one place where requests are paced, retried, metered,
//! and billed.
//!
//! A [`Gateway`] wraps any [`Backend`] (live HTTP or scripted mock) and owns
//! the cross-cutting request policies: worst-case budget reservation before
//! each send, capped exponential backoff for transient failures, an optional
//! minimum interval between sends, and usage accounting afterwards.

pub mod http;
pub mod meter;
pub mod mock;
pub mod retry;
pub mod wire;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chunker::{estimate_tokens, plan_chunks, ChunkError, ChunkMode, WindowSpec};
use crate::corpus::Corpus;
use crate::prompt::PromptSpec;

use meter::{PriceTable, UsageEntry, UsageMeter};
use retry::RetryPolicy;
use wire::{ChatRequest, ChatResponse, Usage};

/// Completion-token bound assumed when a request carries no `max_tokens`,
/// used for worst-case budget reservation and cost estimation.
pub const DEFAULT_COMPLETION_BOUND: u64 = 256;

/// Everything that can go wrong talking to a provider.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("authentication failed: {detail}")]
    AuthFailed { detail: String },
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("request timed out: {detail}")]
    Timeout { detail: String },
    #[error("network error: {detail}")]
    Network { detail: String },
    #[error("server error (status {status}): {detail}")]
    ServerError { status: u16, detail: String },
    #[error("context length exceeded: {detail}")]
    ContextLengthExceeded { detail: String },
    #[error("api error (status {status}): {detail}")]
    Api { status: u16, detail: String },
    #[error("malformed response: {detail}")]
    MalformedResponse { detail: String },
    #[error("no price configured for model '{model}'")]
    UnknownModel { model: String },
    #[error("budget exhausted: next request needs ${needed:.4} but only ${remaining:.4} remains")]
    BudgetExceeded { needed: f64, remaining: f64 },
}

impl GatewayError {
    /// Whether another attempt could plausibly succeed. Authentication and
    /// context-length failures never become true on retry.
    pub fn retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited { .. }
                | GatewayError::Timeout { .. }
                | GatewayError::Network { .. }
                | GatewayError::ServerError { .. }
                | GatewayError::MalformedResponse { .. }
        )
    }
}

/// A transport that can execute one chat request.
pub trait Backend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Enforces a minimum interval between request starts across threads.
#[derive(Debug)]
pub struct Pacer {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl Pacer {
    pub fn new(min_interval: Duration) -> Self {
        Self {
            min_interval,
            last: Mutex::new(None),
        }
    }

    fn wait(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last.lock().unwrap();
        if let Some(prev) = *last {
            let due = prev + self.min_interval;
            let now = Instant::now();
            if now < due {
                std::thread::sleep(due - now);
            }
        }
        *last = Some(Instant::now());
    }
}

/// A successful completion with its accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub response: ChatResponse,
    /// Attempts used, counting the successful one.
    pub attempts: u32,
    /// Provider-reported usage, or a word-based estimate when absent.
    pub usage: Usage,
    pub usage_estimated: bool,
    pub cost: Option<f64>,
}

/// A request that failed for good, after `attempts` tries.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestFailure {
    pub error: GatewayError,
    pub attempts: u32,
}

/// Policy-owning wrapper around a backend. Shared across worker threads.
pub struct Gateway {
    backend: Box<dyn Backend>,
    retry: RetryPolicy,
    meter: Arc<UsageMeter>,
    prices: PriceTable,
    pacer: Option<Pacer>,
    rng: Mutex<ChaCha8Rng>,
}

impl Gateway {
    pub fn new(
        backend: Box<dyn Backend>,
        retry: RetryPolicy,
        meter: Arc<UsageMeter>,
        prices: PriceTable,
        pacer: Option<Pacer>,
        seed: u64,
    ) -> Self {
        Self {
            backend,
            retry,
            meter,
            prices,
            pacer,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn meter(&self) -> &UsageMeter {
        &self.meter
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    /// Execute one request under the full policy stack.
    ///
    /// The worst-case cost is reserved before the first attempt; a budget
    /// that cannot cover it fails the request without sending anything.
    /// Transient errors are retried with backoff, fatal ones returned
    /// immediately; the reservation is settled to actual usage on success
    /// and released on failure.
    pub fn complete(&self, request: &ChatRequest) -> Result<Completion, RequestFailure> {
        let worst = Usage {
            prompt_tokens: request
                .messages
                .iter()
                .map(|m| estimate_tokens(&m.content))
                .sum(),
            completion_tokens: request.max_tokens.unwrap_or(DEFAULT_COMPLETION_BOUND),
        };
        let worst_cost = match self.prices.cost(&request.model, worst) {
            Some(cost) => cost,
            None if self.meter.budget().is_some() => {
                return Err(RequestFailure {
                    error: GatewayError::UnknownModel {
                        model: request.model.clone(),
                    },
                    attempts: 0,
                });
            }
            None => 0.0,
        };
        if let Err(error) = self.meter.try_reserve(worst_cost) {
            return Err(RequestFailure { error, attempts: 0 });
        }

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(pacer) = &self.pacer {
                pacer.wait();
            }
            match self.backend.send(request) {
                Ok(response) => {
                    let (usage, usage_estimated) = match response.usage {
                        Some(usage) => (usage, false),
                        None => (
                            Usage {
                                prompt_tokens: worst.prompt_tokens,
                                completion_tokens: estimate_tokens(&response.content),
                            },
                            true,
                        ),
                    };
                    let cost = self.prices.cost(&request.model, usage);
                    self.meter.settle(
                        worst_cost,
                        UsageEntry {
                            model: request.model.clone(),
                            usage,
                            cost,
                            estimated: usage_estimated,
                        },
                    );
                    return Ok(Completion {
                        response,
                        attempts: attempt,
                        usage,
                        usage_estimated,
                        cost,
                    });
                }
                Err(error) => {
                    if !error.retryable() || attempt >= self.retry.max_attempts {
                        self.meter.release(worst_cost);
                        return Err(RequestFailure {
                            error,
                            attempts: attempt,
                        });
                    }
                    let delay = {
                        let mut rng = self.rng.lock().unwrap();
                        self.retry.delay_for(attempt - 1, &mut *rng)
                    };
                    std::thread::sleep(delay);
                }
            }
        }
    }
}

/// Worst-case run estimate before anything is sent.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Dollar cost under the price table, `None` when the model is unpriced.
    pub cost: Option<f64>,
}

impl CostEstimate {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Estimate requests, tokens, and cost for annotating a whole corpus.
///
/// Each document contributes one request per chunk; each request's prompt is
/// the chunk text plus the instruction, and its completion is bounded by the
/// spec's `max_tokens` (or [`DEFAULT_COMPLETION_BOUND`]).
pub fn estimate_cost(
    corpus: &Corpus,
    spec: &PromptSpec,
    window: &WindowSpec,
    mode: ChunkMode,
    prices: &PriceTable,
) -> Result<CostEstimate, ChunkError> {
    let instruction_tokens = estimate_tokens(&spec.instruction);
    let completion_bound = spec.model.max_tokens.unwrap_or(DEFAULT_COMPLETION_BOUND);

    let mut requests = 0u64;
    let mut prompt_tokens = 0u64;
    for doc in corpus.documents() {
        let plan = plan_chunks(&doc.text, window, mode)?;
        for chunk in &plan.chunks {
            requests += 1;
            prompt_tokens += chunk.token_estimate + instruction_tokens;
        }
    }
    let completion_tokens = requests * completion_bound;

    let cost = prices.get(&spec.model.name).map(|price| {
        (prompt_tokens as f64 * price.prompt_per_1k
            + completion_tokens as f64 * price.completion_per_1k)
            / 1000.0
    });

    Ok(CostEstimate {
        requests,
        prompt_tokens,
        completion_tokens,
        cost,
    })
}
