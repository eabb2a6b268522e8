//! Validation reporting: raw agreement counts and the disagreement review
//! file that points human attention at the units worth re-reading.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use super::{RatingMatrix, ReliabilityError};
use crate::corpus::{Corpus, HumanCodes};

/// Unweighted pair agreement across all units: every unordered pair of
/// ratings within a unit either agrees exactly or does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgreementSummary {
    pub compared_pairs: u64,
    pub agreeing_pairs: u64,
}

impl AgreementSummary {
    /// Fraction of agreeing pairs, `None` when nothing was comparable.
    pub fn rate(&self) -> Option<f64> {
        (self.compared_pairs > 0).then(|| self.agreeing_pairs as f64 / self.compared_pairs as f64)
    }
}

pub fn agreement_summary(matrix: &RatingMatrix) -> AgreementSummary {
    let mut summary = AgreementSummary {
        compared_pairs: 0,
        agreeing_pairs: 0,
    };
    for values in matrix.unit_value_lists() {
        for i in 0..values.len() {
            for j in i + 1..values.len() {
                summary.compared_pairs += 1;
                if values[i] == values[j] {
                    summary.agreeing_pairs += 1;
                }
            }
        }
    }
    summary
}

/// How multiple human codes for one unit are collapsed into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusPolicy {
    /// Arithmetic mean of the codes.
    #[default]
    Mean,
    /// Most frequent code; ties resolve to the smallest value.
    Majority,
}

impl std::fmt::Display for ConsensusPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConsensusPolicy::Mean => f.write_str("mean"),
            ConsensusPolicy::Majority => f.write_str("majority"),
        }
    }
}

/// Collapse a non-empty slice of codes under the policy.
pub fn consensus(values: &[f64], policy: ConsensusPolicy) -> f64 {
    debug_assert!(!values.is_empty());
    match policy {
        ConsensusPolicy::Mean => values.iter().sum::<f64>() / values.len() as f64,
        ConsensusPolicy::Majority => {
            let mut counts: BTreeMap<OrderedFloat<f64>, usize> = BTreeMap::new();
            for &v in values {
                *counts.entry(OrderedFloat(v)).or_insert(0) += 1;
            }
            let mut best = (OrderedFloat(f64::NAN), 0usize);
            for (&value, &count) in &counts {
                // Strict comparison keeps the smallest value on ties, since
                // the map iterates ascending.
                if count > best.1 {
                    best = (value, count);
                }
            }
            best.0 .0
        }
    }
}

/// One machine answer for one document, as read back from a run.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmAnswer {
    pub document_id: String,
    pub answer: f64,
    pub motivation: String,
}

/// A unit where the machine answer differs from the human consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct DisagreementRow {
    pub unit_id: String,
    pub llm_answer: f64,
    pub human_answer: f64,
    pub diff: f64,
    pub motivation: String,
    pub text_excerpt: String,
}

/// Characters of document text carried into the review file.
pub const EXCERPT_CHARS: usize = 200;

/// Build the disagreement rows: units with both a machine answer and at
/// least one human code, whose consensus differs from the machine answer.
/// Sorted by `diff` descending (ascending with `ascending`), ties by unit id.
pub fn disagreement_report(
    corpus: &Corpus,
    answers: &[LlmAnswer],
    humans: &HumanCodes,
    policy: ConsensusPolicy,
    ascending: bool,
) -> Result<Vec<DisagreementRow>, ReliabilityError> {
    let mut by_unit: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for entry in humans.entries() {
        by_unit
            .entry(entry.document_id.as_str())
            .or_default()
            .push(entry.value);
    }

    let mut rows = Vec::new();
    for answer in answers {
        let Some(codes) = by_unit.get(answer.document_id.as_str()) else {
            continue;
        };
        let doc = corpus
            .get(&answer.document_id)
            .ok_or_else(|| ReliabilityError::UnknownUnit {
                unit: answer.document_id.clone(),
            })?;
        let human = consensus(codes, policy);
        let diff = (answer.answer - human).abs();
        if diff == 0.0 {
            continue;
        }
        rows.push(DisagreementRow {
            unit_id: answer.document_id.clone(),
            llm_answer: answer.answer,
            human_answer: human,
            diff,
            motivation: answer.motivation.clone(),
            text_excerpt: doc.text.chars().take(EXCERPT_CHARS).collect(),
        });
    }

    rows.sort_by(|a, b| {
        let by_diff = if ascending {
            OrderedFloat(a.diff).cmp(&OrderedFloat(b.diff))
        } else {
            OrderedFloat(b.diff).cmp(&OrderedFloat(a.diff))
        };
        by_diff.then_with(|| a.unit_id.cmp(&b.unit_id))
    });
    Ok(rows)
}

/// Write the review CSV. The first line records the consensus policy as a
/// `#` comment so the file is self-describing; the header follows.
pub fn write_disagreements_csv(
    rows: &[DisagreementRow],
    policy: ConsensusPolicy,
    path: &Path,
) -> std::io::Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# consensus: {policy}")?;
    let mut writer = csv::Writer::from_writer(file);
    writer.write_record([
        "unit_id",
        "llm_answer",
        "human_answer",
        "diff",
        "motivation",
        "text_excerpt",
    ])?;
    for row in rows {
        writer.write_record([
            row.unit_id.as_str(),
            &row.llm_answer.to_string(),
            &row.human_answer.to_string(),
            &row.diff.to_string(),
            row.motivation.as_str(),
            row.text_excerpt.as_str(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::Level;
    use super::*;
    use crate::corpus::{CodeEntry, Document};
    use indexmap::IndexMap;
    use tempfile::TempDir;

    #[test]
    fn pair_agreement_counts_unordered_pairs() {
        // Units (1,1), (2,2), (1,2): three pairs, two agree.
        let matrix = RatingMatrix::from_entries(
            Level::Nominal,
            vec![
                ("u1", "a", 1.0),
                ("u1", "b", 1.0),
                ("u2", "a", 2.0),
                ("u2", "b", 2.0),
                ("u3", "a", 1.0),
                ("u3", "b", 2.0),
            ],
        )
        .unwrap();
        let summary = agreement_summary(&matrix);
        assert_eq!(summary.compared_pairs, 3);
        assert_eq!(summary.agreeing_pairs, 2);
        assert!((summary.rate().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_has_no_agreement_rate() {
        let matrix = RatingMatrix::new(Level::Nominal);
        assert_eq!(agreement_summary(&matrix).rate(), None);
    }

    #[test]
    fn consensus_mean_and_majority() {
        assert_eq!(consensus(&[1.0, 2.0], ConsensusPolicy::Mean), 1.5);
        assert_eq!(consensus(&[0.0, 1.0, 1.0], ConsensusPolicy::Majority), 1.0);
        // Ties take the smaller value.
        assert_eq!(consensus(&[0.0, 1.0], ConsensusPolicy::Majority), 0.0);
        assert_eq!(
            consensus(&[2.0, 2.0, 3.0, 3.0], ConsensusPolicy::Majority),
            2.0
        );
    }

    fn corpus_with_texts(texts: &[(&str, &str)]) -> Corpus {
        Corpus::from_documents(
            texts
                .iter()
                .map(|(id, text)| Document {
                    id: id.to_string(),
                    text: text.to_string(),
                    metadata: IndexMap::new(),
                    token_estimate: 0,
                })
                .collect(),
        )
        .unwrap()
    }

    fn codes(entries: &[(&str, &str, f64)]) -> HumanCodes {
        HumanCodes::from_entries(
            entries
                .iter()
                .map(|(doc, coder, value)| CodeEntry {
                    document_id: doc.to_string(),
                    coder_id: coder.to_string(),
                    value: *value,
                })
                .collect(),
        )
        .unwrap()
    }

    fn answer(id: &str, value: f64) -> LlmAnswer {
        LlmAnswer {
            document_id: id.to_string(),
            answer: value,
            motivation: format!("because of {id}"),
        }
    }

    #[test]
    fn report_keeps_only_real_disagreements_sorted_descending() {
        let corpus = corpus_with_texts(&[("a", "text a"), ("b", "text b"), ("c", "text c")]);
        let humans = codes(&[("a", "h1", 1.0), ("b", "h1", 0.0), ("c", "h1", 0.5)]);
        let answers = vec![answer("a", 0.0), answer("b", 0.0), answer("c", 0.1)];
        let rows =
            disagreement_report(&corpus, &answers, &humans, ConsensusPolicy::Mean, false).unwrap();
        let ids: Vec<&str> = rows.iter().map(|r| r.unit_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert_eq!(rows[0].diff, 1.0);
        assert!((rows[1].diff - 0.4).abs() < 1e-12);

        let ascending =
            disagreement_report(&corpus, &answers, &humans, ConsensusPolicy::Mean, true).unwrap();
        let ids: Vec<&str> = ascending.iter().map(|r| r.unit_id.as_str()).collect();
        assert_eq!(ids, vec!["c", "a"]);
    }

    #[test]
    fn equal_diffs_break_ties_by_unit_id() {
        let corpus = corpus_with_texts(&[("z", "tz"), ("a", "ta")]);
        let humans = codes(&[("z", "h1", 1.0), ("a", "h1", 1.0)]);
        let answers = vec![answer("z", 0.0), answer("a", 0.0)];
        let rows =
            disagreement_report(&corpus, &answers, &humans, ConsensusPolicy::Mean, false).unwrap();
        let ids: Vec<&str> = rows.iter().map(|r| r.unit_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "z"]);
    }

    #[test]
    fn excerpt_is_limited_by_characters_not_bytes() {
        let long_text = "é".repeat(300);
        let corpus = corpus_with_texts(&[("a", &long_text)]);
        let humans = codes(&[("a", "h1", 1.0)]);
        let rows = disagreement_report(
            &corpus,
            &[answer("a", 0.0)],
            &humans,
            ConsensusPolicy::Mean,
            false,
        )
        .unwrap();
        assert_eq!(rows[0].text_excerpt.chars().count(), EXCERPT_CHARS);
    }

    #[test]
    fn units_without_human_codes_are_skipped() {
        let corpus = corpus_with_texts(&[("a", "ta"), ("b", "tb")]);
        let humans = codes(&[("a", "h1", 1.0)]);
        let rows = disagreement_report(
            &corpus,
            &[answer("a", 0.0), answer("b", 0.0)],
            &humans,
            ConsensusPolicy::Mean,
            false,
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].unit_id, "a");
    }

    #[test]
    fn csv_carries_policy_comment_and_exact_header() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("disagreements.csv");
        let rows = vec![DisagreementRow {
            unit_id: "a".to_string(),
            llm_answer: 0.0,
            human_answer: 1.0,
            diff: 1.0,
            motivation: "it reads neutral, with quotes \"inside\"".to_string(),
            text_excerpt: "line one".to_string(),
        }];
        write_disagreements_csv(&rows, ConsensusPolicy::Majority, &path).unwrap();

        let content = std::fs::read_to_string(&path).unwrap();
        let mut lines = content.lines();
        assert_eq!(lines.next().unwrap(), "# consensus: majority");
        assert_eq!(
            lines.next().unwrap(),
            "unit_id,llm_answer,human_answer,diff,motivation,text_excerpt"
        );

        // The file reads back as CSV when comment lines are skipped.
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(&path)
            .unwrap();
        let record = reader.records().next().unwrap().unwrap();
        assert_eq!(record.get(0).unwrap(), "a");
        assert_eq!(
            record.get(4).unwrap(),
            "it reads neutral, with quotes \"inside\""
        );
    }
}
