//! Prompt specifications and the machine-parseable answer contract.
//!
//! A prompt spec couples a coding instruction with an answer schema, a
//! separator, and model parameters. Responses are expected in the
//! `<answer><separator> <motivation>` shape; [`parse_response`] enforces the
//! schema and classifies violations so the caller can decide what to retry.
//!
//! Every spec has a stable [`PromptSpec::version_hash`] derived from its
//! constituent parts, which journals and reports use to tie results back to
//! the exact instruction that produced them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::chunker::{estimate_tokens, WindowSpec};
use crate::gateway::wire::{Message, Role};

pub const DEFAULT_SEPARATOR: &str = ";";
pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

/// A complete instruction for coding one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub instruction: String,
    pub separator: String,
    pub schema: AnswerSchema,
    pub model: ModelParams,
}

/// What counts as a valid first field of the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerSchema {
    /// A finite decimal in the closed interval `[min, max]`.
    NumericRange { min: f64, max: f64 },
    /// One of a fixed set of labels, matched exactly after trimming.
    Categorical { labels: Vec<String> },
    /// Any non-blank string.
    FreeText,
}

/// Model call parameters carried by the prompt spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub name: String,
    pub temperature: f64,
    pub max_tokens: Option<u64>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            name: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: None,
        }
    }
}

/// The validated first field of a response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnswerValue {
    Number(f64),
    Text(String),
}

impl AnswerValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AnswerValue::Number(n) => Some(*n),
            AnswerValue::Text(_) => None,
        }
    }
}

impl fmt::Display for AnswerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnswerValue::Number(n) => write!(f, "{n}"),
            AnswerValue::Text(s) => f.write_str(s),
        }
    }
}

/// A successfully parsed response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnswer {
    pub answer: AnswerValue,
    pub motivation: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    /// The first field was not interpretable under the schema at all.
    #[error("unparseable answer ({detail}): {raw:?}")]
    ParseFailure { detail: String, raw: String },
    /// A number parsed but fell outside the configured range.
    #[error("answer {value} outside range [{min}, {max}]: {raw:?}")]
    RangeViolation {
        value: f64,
        min: f64,
        max: f64,
        raw: String,
    },
    /// The first field is not one of the allowed labels.
    #[error("answer {label:?} is not an allowed label: {raw:?}")]
    LabelViolation { label: String, raw: String },
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid prompt spec: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("instruction must not be blank")]
    EmptyInstruction,
    #[error("separator must not be empty")]
    EmptySeparator,
    #[error("numeric range requires min < max, got [{min}, {max}]")]
    InvalidRange { min: f64, max: f64 },
    #[error("categorical schema requires at least one label")]
    NoLabels,
    #[error("blank label in categorical schema")]
    BlankLabel,
    #[error("duplicate label {label:?} in categorical schema")]
    DuplicateLabel { label: String },
}

/// Non-fatal findings from [`validate_spec`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptLint {
    /// No bracketed `[... answer/format ...]` clause found in the instruction.
    NoFormatClause,
    /// A categorical label contains the separator, so parsing would split it.
    SeparatorInLabel { label: String },
    /// The instruction alone is larger than the per-request reserve.
    InstructionExceedsReserve { estimate: u64, reserve: u64 },
}

impl fmt::Display for PromptLint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PromptLint::NoFormatClause => f.write_str(
                "instruction has no bracketed answer-format clause; responses may be unparseable",
            ),
            PromptLint::SeparatorInLabel { label } => write!(
                f,
                "label {label:?} contains the separator and can never be parsed back"
            ),
            PromptLint::InstructionExceedsReserve { estimate, reserve } => write!(
                f,
                "instruction estimate ({estimate} tokens) exceeds the reserve ({reserve} tokens)"
            ),
        }
    }
}

impl PromptSpec {
    /// Load and validate a spec from TOML.
    ///
    /// `separator` defaults to `;` and `[model]` defaults to gpt-4 at
    /// temperature 0.2 with no completion cap.
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let raw = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&raw)
    }

    pub fn from_toml(raw: &str) -> Result<Self, PromptError> {
        #[derive(Deserialize)]
        struct SpecFile {
            instruction: String,
            separator: Option<String>,
            schema: AnswerSchema,
            model: Option<ModelFile>,
        }
        #[derive(Deserialize)]
        struct ModelFile {
            name: Option<String>,
            temperature: Option<f64>,
            max_tokens: Option<u64>,
        }

        let file: SpecFile = toml::from_str(raw)?;
        let model = file
            .model
            .map_or_else(ModelParams::default, |m| ModelParams {
                name: m.name.unwrap_or_else(|| DEFAULT_MODEL.to_string()),
                temperature: m.temperature.unwrap_or(DEFAULT_TEMPERATURE),
                max_tokens: m.max_tokens,
            });
        let spec = Self {
            instruction: file.instruction,
            separator: file
                .separator
                .unwrap_or_else(|| DEFAULT_SEPARATOR.to_string()),
            schema: file.schema,
            model,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<(), PromptError> {
        if self.instruction.trim().is_empty() {
            return Err(PromptError::EmptyInstruction);
        }
        if self.separator.is_empty() {
            return Err(PromptError::EmptySeparator);
        }
        match &self.schema {
            AnswerSchema::NumericRange { min, max } => {
                // NaN bounds must fail too, so compare via partial_cmp.
                if min.partial_cmp(max) != Some(std::cmp::Ordering::Less) {
                    return Err(PromptError::InvalidRange {
                        min: *min,
                        max: *max,
                    });
                }
            }
            AnswerSchema::Categorical { labels } => {
                if labels.is_empty() {
                    return Err(PromptError::NoLabels);
                }
                let mut seen = std::collections::HashSet::new();
                for label in labels {
                    if label.trim().is_empty() {
                        return Err(PromptError::BlankLabel);
                    }
                    if !seen.insert(label.as_str()) {
                        return Err(PromptError::DuplicateLabel {
                            label: label.clone(),
                        });
                    }
                }
            }
            AnswerSchema::FreeText => {}
        }
        Ok(())
    }

    /// Hex SHA-256 over a canonical encoding of every constituent part, so the
    /// hash changes exactly when instruction, separator, schema, or model
    /// parameters change.
    pub fn version_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hash_field(&mut hasher, self.instruction.as_bytes());
        hash_field(&mut hasher, self.separator.as_bytes());
        match &self.schema {
            AnswerSchema::NumericRange { min, max } => {
                hash_field(&mut hasher, b"numeric_range");
                hasher.update(min.to_le_bytes());
                hasher.update(max.to_le_bytes());
            }
            AnswerSchema::Categorical { labels } => {
                hash_field(&mut hasher, b"categorical");
                hasher.update((labels.len() as u64).to_le_bytes());
                for label in labels {
                    hash_field(&mut hasher, label.as_bytes());
                }
            }
            AnswerSchema::FreeText => hash_field(&mut hasher, b"free_text"),
        }
        hash_field(&mut hasher, self.model.name.as_bytes());
        hasher.update(self.model.temperature.to_le_bytes());
        match self.model.max_tokens {
            None => hasher.update([0u8]),
            Some(m) => {
                hasher.update([1u8]);
                hasher.update(m.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

fn hash_field(hasher: &mut Sha256, bytes: &[u8]) {
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}

/// Build the two-message chat request for one text: the instruction verbatim
/// as the system message, the text in single quotes as the user message.
pub fn render_messages(spec: &PromptSpec, text: &str) -> Vec<Message> {
    vec![
        Message {
            role: Role::System,
            content: spec.instruction.clone(),
        },
        Message {
            role: Role::User,
            content: format!("'{text}'"),
        },
    ]
}

/// Parse a raw model response against the prompt spec's answer contract.
///
/// The response is trimmed, one pair of surrounding double quotes is
/// stripped, and the text is split at the *first* separator occurrence. The
/// part before it must satisfy the schema; everything after it, trimmed, is
/// the motivation. A response with no separator is accepted when it is a
/// valid bare answer, with an empty motivation.
pub fn parse_response(raw: &str, spec: &PromptSpec) -> Result<ParsedAnswer, ParseError> {
    let mut body = raw.trim();
    if body.len() >= 2 && body.starts_with('"') && body.ends_with('"') {
        body = body[1..body.len() - 1].trim();
    }

    let (head, tail) = match body.find(&spec.separator) {
        Some(pos) => (&body[..pos], &body[pos + spec.separator.len()..]),
        None => (body, ""),
    };
    let head = head.trim();
    let motivation = tail.trim().to_string();

    let answer = match &spec.schema {
        AnswerSchema::NumericRange { min, max } => {
            let value: f64 = head.parse().map_err(|_| ParseError::ParseFailure {
                detail: format!("{head:?} is not a decimal"),
                raw: raw.to_string(),
            })?;
            if !value.is_finite() {
                return Err(ParseError::ParseFailure {
                    detail: format!("{head:?} is not finite"),
                    raw: raw.to_string(),
                });
            }
            if value < *min || value > *max {
                return Err(ParseError::RangeViolation {
                    value,
                    min: *min,
                    max: *max,
                    raw: raw.to_string(),
                });
            }
            AnswerValue::Number(value)
        }
        AnswerSchema::Categorical { labels } => {
            let Some(label) = labels.iter().find(|l| l.as_str() == head) else {
                return Err(ParseError::LabelViolation {
                    label: head.to_string(),
                    raw: raw.to_string(),
                });
            };
            AnswerValue::Text(label.clone())
        }
        AnswerSchema::FreeText => {
            if head.is_empty() {
                return Err(ParseError::ParseFailure {
                    detail: "empty answer".to_string(),
                    raw: raw.to_string(),
                });
            }
            AnswerValue::Text(head.to_string())
        }
    };

    Ok(ParsedAnswer { answer, motivation })
}

/// Pre-flight lint of a spec: non-fatal, ordered findings.
pub fn validate_spec(spec: &PromptSpec, window: Option<&WindowSpec>) -> Vec<PromptLint> {
    let mut lints = Vec::new();

    // Heuristic: a usable instruction states its output contract in a
    // bracketed clause, e.g. "[Answer with a number between 0 and 1]".
    let has_format_clause = bracketed_segments(&spec.instruction).any(|seg| {
        let lower = seg.to_lowercase();
        lower.contains("answer") || lower.contains("format")
    });
    if !has_format_clause {
        lints.push(PromptLint::NoFormatClause);
    }

    if let AnswerSchema::Categorical { labels } = &spec.schema {
        for label in labels {
            if label.contains(&spec.separator) {
                lints.push(PromptLint::SeparatorInLabel {
                    label: label.clone(),
                });
            }
        }
    }

    if let Some(window) = window {
        let estimate = estimate_tokens(&spec.instruction);
        let reserve = window.reserve_tokens();
        if estimate > reserve {
            lints.push(PromptLint::InstructionExceedsReserve { estimate, reserve });
        }
    }

    lints
}

fn bracketed_segments(text: &str) -> impl Iterator<Item = &str> {
    text.split('[')
        .skip(1)
        .filter_map(|rest| rest.find(']').map(|end| &rest[..end]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn numeric_spec() -> PromptSpec {
        PromptSpec {
            instruction: "Rate the text. [Answer with a number between 0 and 1]".to_string(),
            separator: ";".to_string(),
            schema: AnswerSchema::NumericRange { min: 0.0, max: 1.0 },
            model: ModelParams::default(),
        }
    }

    #[test]
    fn minimal_toml_applies_defaults() {
        let spec = PromptSpec::from_toml(
            "instruction = \"Rate it. [Answer: number]\"\n\n[schema]\nkind = \"numeric_range\"\nmin = 0.0\nmax = 1.0\n",
        )
        .unwrap();
        assert_eq!(spec.separator, ";");
        assert_eq!(spec.model.name, "gpt-4");
        assert_eq!(spec.model.temperature, 0.2);
        assert_eq!(spec.model.max_tokens, None);
    }

    #[test]
    fn full_toml_round_trips_every_field() {
        let spec = PromptSpec::from_toml(
            r#"
instruction = "Classify the stance. [Answer with one label]"
separator = "|"

[schema]
kind = "categorical"
labels = ["pro", "anti", "neutral"]

[model]
name = "gpt-4o"
temperature = 0.0
max_tokens = 64
"#,
        )
        .unwrap();
        assert_eq!(spec.separator, "|");
        assert_eq!(
            spec.schema,
            AnswerSchema::Categorical {
                labels: vec!["pro".into(), "anti".into(), "neutral".into()]
            }
        );
        assert_eq!(spec.model.name, "gpt-4o");
        assert_eq!(spec.model.temperature, 0.0);
        assert_eq!(spec.model.max_tokens, Some(64));
    }

    #[test]
    fn invalid_specs_are_rejected_on_load() {
        let blank = "instruction = \"  \"\n\n[schema]\nkind = \"free_text\"\n";
        assert!(matches!(
            PromptSpec::from_toml(blank),
            Err(PromptError::EmptyInstruction)
        ));

        let bad_range =
            "instruction = \"x\"\n\n[schema]\nkind = \"numeric_range\"\nmin = 1.0\nmax = 1.0\n";
        assert!(matches!(
            PromptSpec::from_toml(bad_range),
            Err(PromptError::InvalidRange { .. })
        ));

        let dup =
            "instruction = \"x\"\n\n[schema]\nkind = \"categorical\"\nlabels = [\"a\", \"a\"]\n";
        assert!(matches!(
            PromptSpec::from_toml(dup),
            Err(PromptError::DuplicateLabel { .. })
        ));
    }

    #[test]
    fn renders_system_instruction_and_quoted_user_text() {
        let spec = numeric_spec();
        let messages = render_messages(&spec, "the speech text");
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0].role, Role::System);
        assert_eq!(messages[0].content, spec.instruction);
        assert_eq!(messages[1].role, Role::User);
        assert_eq!(messages[1].content, "'the speech text'");
    }

    #[test]
    fn parses_answer_separator_motivation() {
        let parsed = parse_response(
            "1.23; The text shows many elements of a populist text.",
            &PromptSpec {
                schema: AnswerSchema::NumericRange { min: 0.0, max: 2.0 },
                ..numeric_spec()
            },
        )
        .unwrap();
        assert_eq!(parsed.answer, AnswerValue::Number(1.23));
        assert_eq!(
            parsed.motivation,
            "The text shows many elements of a populist text."
        );
    }

    #[test]
    fn strips_one_pair_of_surrounding_quotes() {
        let parsed = parse_response("\"0.5; short reason\"", &numeric_spec()).unwrap();
        assert_eq!(parsed.answer, AnswerValue::Number(0.5));
        assert_eq!(parsed.motivation, "short reason");
    }

    #[test]
    fn bare_valid_answer_without_separator_is_accepted() {
        let parsed = parse_response("0.7", &numeric_spec()).unwrap();
        assert_eq!(parsed.answer, AnswerValue::Number(0.7));
        assert_eq!(parsed.motivation, "");
    }

    #[test]
    fn splits_only_at_first_separator() {
        let parsed = parse_response("0.2; because; of; reasons", &numeric_spec()).unwrap();
        assert_eq!(parsed.motivation, "because; of; reasons");
    }

    #[test]
    fn out_of_range_is_a_range_violation_with_raw() {
        let err = parse_response("1.5; too high", &numeric_spec()).unwrap_err();
        match err {
            ParseError::RangeViolation {
                value,
                min,
                max,
                raw,
            } => {
                assert_eq!(value, 1.5);
                assert_eq!(min, 0.0);
                assert_eq!(max, 1.0);
                assert_eq!(raw, "1.5; too high");
            }
            other => panic!("expected RangeViolation, got {other:?}"),
        }
    }

    #[test]
    fn prose_and_non_finite_answers_are_parse_failures() {
        for raw in [
            "I think this text is populist",
            "NaN; reason",
            "inf; reason",
        ] {
            let err = parse_response(raw, &numeric_spec()).unwrap_err();
            assert!(
                matches!(err, ParseError::ParseFailure { .. }),
                "{raw:?} should be a parse failure, got {err:?}"
            );
        }
    }

    #[test]
    fn categorical_labels_match_exactly() {
        let spec = PromptSpec {
            schema: AnswerSchema::Categorical {
                labels: vec!["pro".into(), "anti".into()],
            },
            ..numeric_spec()
        };
        let parsed = parse_response("anti; it opposes the bill", &spec).unwrap();
        assert_eq!(parsed.answer, AnswerValue::Text("anti".into()));

        let err = parse_response("Anti; wrong case", &spec).unwrap_err();
        assert!(matches!(err, ParseError::LabelViolation { label, .. } if label == "Anti"));
    }

    #[test]
    fn free_text_rejects_empty_answer() {
        let spec = PromptSpec {
            schema: AnswerSchema::FreeText,
            ..numeric_spec()
        };
        assert!(parse_response("; only motivation", &spec).is_err());
        let parsed = parse_response("climate policy; it is about emissions", &spec).unwrap();
        assert_eq!(parsed.answer, AnswerValue::Text("climate policy".into()));
    }

    #[test]
    fn version_hash_changes_with_every_constituent() {
        let base = numeric_spec();
        let base_hash = base.version_hash();
        assert_eq!(base_hash.len(), 64);
        assert_eq!(base.clone().version_hash(), base_hash);

        let variants = vec![
            PromptSpec {
                instruction: "Different instruction. [Answer: number]".into(),
                ..base.clone()
            },
            PromptSpec {
                separator: "|".into(),
                ..base.clone()
            },
            PromptSpec {
                schema: AnswerSchema::NumericRange { min: 0.0, max: 2.0 },
                ..base.clone()
            },
            PromptSpec {
                schema: AnswerSchema::FreeText,
                ..base.clone()
            },
            PromptSpec {
                model: ModelParams {
                    name: "gpt-4o".into(),
                    ..ModelParams::default()
                },
                ..base.clone()
            },
            PromptSpec {
                model: ModelParams {
                    temperature: 0.0,
                    ..ModelParams::default()
                },
                ..base.clone()
            },
            PromptSpec {
                model: ModelParams {
                    max_tokens: Some(50),
                    ..ModelParams::default()
                },
                ..base.clone()
            },
        ];
        for variant in variants {
            assert_ne!(variant.version_hash(), base_hash, "{variant:?}");
        }
    }

    #[test]
    fn lints_flag_missing_format_clause_and_separator_labels() {
        let spec = PromptSpec {
            instruction: "Just rate the text somehow.".into(),
            schema: AnswerSchema::Categorical {
                labels: vec!["yes; definitely".into(), "no".into()],
            },
            ..numeric_spec()
        };
        let lints = validate_spec(&spec, None);
        assert!(lints.contains(&PromptLint::NoFormatClause));
        assert!(lints.iter().any(
            |l| matches!(l, PromptLint::SeparatorInLabel { label } if label == "yes; definitely")
        ));

        let ok = numeric_spec();
        assert!(validate_spec(&ok, None).is_empty());
    }

    #[test]
    fn lints_flag_oversized_instruction() {
        let window = WindowSpec::new(2000, 64).unwrap();
        let spec = PromptSpec {
            instruction: format!(
                "[Answer with a number] {}",
                std::iter::repeat_n("word", 200)
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
            ..numeric_spec()
        };
        let lints = validate_spec(&spec, Some(&window));
        assert!(lints
            .iter()
            .any(|l| matches!(l, PromptLint::InstructionExceedsReserve { reserve: 64, .. })));
    }

    proptest! {
        // Formatting an in-range answer with a motivation and parsing it back
        // recovers both parts exactly, quoted or not.
        #[test]
        fn round_trip_numeric_answers(
            thousandths in 0u32..=1000,
            motivation in "[a-zA-Z][a-zA-Z0-9 ,.]{0,60}[a-zA-Z.]",
            quoted in proptest::bool::ANY,
        ) {
            let spec = numeric_spec();
            let value = f64::from(thousandths) / 1000.0;
            let mut raw = format!("{value}; {motivation}");
            if quoted {
                raw = format!("\"{raw}\"");
            }
            let parsed = parse_response(&raw, &spec).unwrap();
            prop_assert_eq!(parsed.answer, AnswerValue::Number(value));
            prop_assert_eq!(parsed.motivation, motivation);
        }

        // The hash is injective over instruction changes in practice: any
        // appended suffix produces a different digest.
        #[test]
        fn version_hash_tracks_instruction(suffix in "[a-z]{1,12}") {
            let base = numeric_spec();
            let changed = PromptSpec {
                instruction: format!("{} {}", base.instruction, suffix),
                ..base.clone()
            };
            prop_assert_ne!(base.version_hash(), changed.version_hash());
        }
    }
}
