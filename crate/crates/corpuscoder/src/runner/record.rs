//! The per-document record appended to the run journal.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::gateway::GatewayError;
use crate::prompt::{AnswerValue, ParseError};

/// One journal line: the latest known state of one document.
///
/// All fields are always present on the wire; absent values are `null`, not
/// omitted, so the journal schema is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub document_id: String,
    pub status: RecordStatus,
    pub answer: Option<AnswerValue>,
    pub motivation: Option<String>,
    pub raw_response: Option<String>,
    pub prompt_version_hash: String,
    pub model: String,
    pub timestamp: DateTime<Utc>,
    pub attempt_count: u32,
}

impl AnnotationRecord {
    /// Terminal records are skipped by a plain resume; only `pending` documents
    /// (an interrupted attempt that never produced an outcome) are picked up
    /// again automatically. Failures stay terminal so that re-running the same
    /// command is idempotent: reopening them takes an explicit `retry_failed`.
    pub fn is_terminal(&self) -> bool {
        !matches!(self.status, RecordStatus::Pending)
    }

    /// A failure whose class suggests another attempt could succeed; this is
    /// the set `retry_failed` reopens. Permanent failures (a document that
    /// cannot fit the context, a non-transient provider rejection) stay closed
    /// even then.
    pub fn retryable_failure(&self) -> bool {
        matches!(
            &self.status,
            RecordStatus::Failed { error_class, .. } if error_class.retryable()
        )
    }
}

/// Lifecycle state. Unit variants serialize as `"pending"` / `"done"`,
/// failures as `{"failed": {"error_class": ..., "detail": ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Pending,
    Done,
    Failed {
        error_class: ErrorClass,
        detail: String,
    },
}

/// Why a document failed; decides whether `retry_failed` may reopen it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    ParseFailure,
    RangeViolation,
    LabelViolation,
    RateLimited,
    Timeout,
    Network,
    ServerError,
    MalformedResponse,
    /// The document cannot fit the model context; retrying cannot help.
    ContextLengthExceeded,
    /// A non-transient provider rejection.
    Api,
}

impl ErrorClass {
    /// Whether a later run should try the document again.
    pub fn retryable(self) -> bool {
        !matches!(self, ErrorClass::ContextLengthExceeded | ErrorClass::Api)
    }

    pub fn from_gateway(error: &GatewayError) -> Self {
        match error {
            GatewayError::RateLimited { .. } => ErrorClass::RateLimited,
            GatewayError::Timeout { .. } => ErrorClass::Timeout,
            GatewayError::Network { .. } => ErrorClass::Network,
            GatewayError::ServerError { .. } => ErrorClass::ServerError,
            GatewayError::MalformedResponse { .. } => ErrorClass::MalformedResponse,
            GatewayError::ContextLengthExceeded { .. } => ErrorClass::ContextLengthExceeded,
            // Auth and budget failures abort the run before any record is
            // written; mapping them keeps the function total.
            GatewayError::AuthFailed { .. }
            | GatewayError::Api { .. }
            | GatewayError::UnknownModel { .. }
            | GatewayError::BudgetExceeded { .. } => ErrorClass::Api,
        }
    }

    pub fn from_parse(error: &ParseError) -> Self {
        match error {
            ParseError::ParseFailure { .. } => ErrorClass::ParseFailure,
            ParseError::RangeViolation { .. } => ErrorClass::RangeViolation,
            ParseError::LabelViolation { .. } => ErrorClass::LabelViolation,
        }
    }
}
