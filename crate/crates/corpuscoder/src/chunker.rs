//! Token estimation and context-window fitting.
//!
//! Models can only attend to a bounded number of tokens per request, so every
//! text must fit the window left over after the instruction and the response
//! reserve. Token counts are approximated from word counts at 1.5 tokens per
//! word (a token is roughly two thirds of a word); the estimator is the single
//! interface point where a provider-exact tokenizer could be plugged in later.
//!
//! Texts that do not fit are either truncated to the largest word prefix that
//! does, or split into consecutive word-boundary chunks that are annotated
//! separately and recombined with [`reassemble`].

use std::collections::BTreeMap;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Context-window geometry for one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    window_tokens: u64,
    reserve_tokens: u64,
}

impl WindowSpec {
    /// `reserve_tokens` is held back for the instruction and the response;
    /// the remainder is the per-text budget and must be at least 1.
    pub fn new(window_tokens: u64, reserve_tokens: u64) -> Result<Self, ChunkError> {
        if window_tokens == 0 || reserve_tokens >= window_tokens {
            return Err(ChunkError::InvalidWindow {
                window_tokens,
                reserve_tokens,
            });
        }
        Ok(Self {
            window_tokens,
            reserve_tokens,
        })
    }

    pub fn window_tokens(&self) -> u64 {
        self.window_tokens
    }

    pub fn reserve_tokens(&self) -> u64 {
        self.reserve_tokens
    }

    /// Tokens available for the text itself.
    pub fn budget(&self) -> u64 {
        self.window_tokens - self.reserve_tokens
    }
}

/// How to make an oversized text fit the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMode {
    /// Keep only the largest word prefix that fits.
    #[default]
    Truncate,
    /// Partition the whole word sequence into consecutive fitting chunks.
    Split,
}

/// One window-sized piece of a text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub text: String,
    pub token_estimate: u64,
}

/// The result of fitting one text to a window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkPlan {
    pub mode: ChunkMode,
    pub chunks: Vec<Chunk>,
}

impl ChunkPlan {
    pub fn is_single(&self) -> bool {
        self.chunks.len() == 1
    }
}

/// How per-chunk answers are combined into one document-level answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReassemblePolicy {
    #[default]
    Mean,
    Max,
    /// Most frequent value; ties break toward the smaller value.
    Majority,
}

#[derive(Debug, Error, PartialEq)]
pub enum ChunkError {
    #[error(
        "invalid window: {window_tokens} tokens with {reserve_tokens} reserved leaves no budget"
    )]
    InvalidWindow {
        window_tokens: u64,
        reserve_tokens: u64,
    },
    #[error("a single word (2 tokens) exceeds the chunk budget of {budget} tokens")]
    WordTooLarge { budget: u64 },
    #[error("cannot reassemble an empty answer list")]
    EmptyAnswers,
}

/// Estimate the token count of a text as ceil(words * 3/2), counting words as
/// maximal non-whitespace runs.
pub fn estimate_tokens(text: &str) -> u64 {
    word_count_estimate(text.split_whitespace().count() as u64)
}

/// Token estimate for a known word count.
pub fn word_count_estimate(words: u64) -> u64 {
    (words * 3).div_ceil(2)
}

/// Largest number of words whose estimate fits in `budget` tokens.
fn words_per_chunk(budget: u64) -> u64 {
    budget * 2 / 3
}

/// Fit `text` to the window, greedily filling each chunk with the maximum
/// prefix of remaining words whose estimate stays within the budget.
///
/// A text that already fits is returned verbatim as a single chunk in either
/// mode. `Truncate` keeps only the first chunk.
pub fn plan_chunks(
    text: &str,
    spec: &WindowSpec,
    mode: ChunkMode,
) -> Result<ChunkPlan, ChunkError> {
    let budget = spec.budget();
    if budget < 2 {
        // One word estimates to 2 tokens, so nothing fits.
        return Err(ChunkError::WordTooLarge { budget });
    }

    let total = estimate_tokens(text);
    if total <= budget {
        return Ok(ChunkPlan {
            mode,
            chunks: vec![Chunk {
                text: text.to_string(),
                token_estimate: total,
            }],
        });
    }

    let words: Vec<&str> = text.split_whitespace().collect();
    let capacity = words_per_chunk(budget) as usize;
    let mut chunks = Vec::new();
    for window in words.chunks(capacity) {
        chunks.push(Chunk {
            text: window.join(" "),
            token_estimate: word_count_estimate(window.len() as u64),
        });
        if mode == ChunkMode::Truncate {
            break;
        }
    }

    Ok(ChunkPlan { mode, chunks })
}

/// Combine per-chunk answers into a single value.
pub fn reassemble(answers: &[f64], policy: ReassemblePolicy) -> Result<f64, ChunkError> {
    if answers.is_empty() {
        return Err(ChunkError::EmptyAnswers);
    }
    let value = match policy {
        ReassemblePolicy::Mean => answers.iter().sum::<f64>() / answers.len() as f64,
        ReassemblePolicy::Max => answers.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ReassemblePolicy::Majority => {
            let mut counts: BTreeMap<OrderedFloat<f64>, usize> = BTreeMap::new();
            for &a in answers {
                *counts.entry(OrderedFloat(a)).or_insert(0) += 1;
            }
            // Ascending key order plus a strict comparison keeps the smaller
            // value on ties.
            let mut best = (OrderedFloat(f64::NAN), 0usize);
            for (value, count) in counts {
                if count > best.1 {
                    best = (value, count);
                }
            }
            best.0.into_inner()
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Word-by-word greedy simulation, kept independent of the closed-form
    /// capacity used by `plan_chunks`.
    fn greedy_oracle(words: &[&str], budget: u64) -> Vec<Vec<String>> {
        let mut chunks: Vec<Vec<String>> = Vec::new();
        let mut current: Vec<String> = Vec::new();
        for &w in words {
            let extended = word_count_estimate(current.len() as u64 + 1);
            if extended <= budget {
                current.push(w.to_string());
            } else {
                chunks.push(std::mem::take(&mut current));
                current.push(w.to_string());
            }
        }
        if !current.is_empty() {
            chunks.push(current);
        }
        chunks
    }

    fn text_of_words(n: usize) -> String {
        (0..n)
            .map(|i| format!("w{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn estimate_empty_text_is_zero() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("   \t\n"), 0);
    }

    #[test]
    fn estimate_hundred_words_is_150() {
        assert_eq!(estimate_tokens(&text_of_words(100)), 150);
    }

    #[test]
    fn estimate_three_words_rounds_up() {
        // ceil(3 * 1.5) = ceil(4.5) = 5
        assert_eq!(estimate_tokens("the cat sat"), 5);
    }

    #[test]
    fn window_spec_rejects_exhausted_reserve() {
        assert!(WindowSpec::new(100, 100).is_err());
        assert!(WindowSpec::new(0, 0).is_err());
        assert!(WindowSpec::new(100, 99).is_ok());
    }

    #[test]
    fn fitting_text_is_returned_verbatim_in_both_modes() {
        let spec = WindowSpec::new(100, 10).unwrap();
        let text = "odd   spacing\tpreserved  here";
        for mode in [ChunkMode::Truncate, ChunkMode::Split] {
            let plan = plan_chunks(text, &spec, mode).unwrap();
            assert_eq!(plan.chunks.len(), 1);
            assert_eq!(plan.chunks[0].text, text);
        }
    }

    #[test]
    fn split_2000_token_window_makes_two_chunks() {
        // 2000 words estimate to 3000 tokens against a 2000-token budget.
        let text = text_of_words(2000);
        let spec = WindowSpec::new(2000, 0).unwrap();
        let plan = plan_chunks(&text, &spec, ChunkMode::Split).unwrap();

        let words: Vec<&str> = text.split_whitespace().collect();
        let expected = greedy_oracle(&words, spec.budget());
        assert_eq!(plan.chunks.len(), 2);
        assert_eq!(plan.chunks.len(), expected.len());
        for (chunk, oracle_words) in plan.chunks.iter().zip(&expected) {
            assert!(chunk.token_estimate <= spec.budget());
            assert_eq!(
                chunk.text.split_whitespace().collect::<Vec<_>>(),
                oracle_words.iter().map(String::as_str).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn truncate_keeps_a_word_prefix_within_budget() {
        let text = text_of_words(2000);
        let spec = WindowSpec::new(2000, 0).unwrap();
        let plan = plan_chunks(&text, &spec, ChunkMode::Truncate).unwrap();
        assert_eq!(plan.chunks.len(), 1);
        assert!(plan.chunks[0].token_estimate <= 2000);
        let kept: Vec<&str> = plan.chunks[0].text.split_whitespace().collect();
        let original: Vec<&str> = text.split_whitespace().collect();
        assert_eq!(kept.as_slice(), &original[..kept.len()]);
    }

    #[test]
    fn budget_below_one_word_is_rejected() {
        let spec = WindowSpec::new(3, 2).unwrap();
        assert_eq!(
            plan_chunks("word", &spec, ChunkMode::Truncate),
            Err(ChunkError::WordTooLarge { budget: 1 })
        );
    }

    #[test]
    fn reassemble_singleton_is_identity() {
        for policy in [
            ReassemblePolicy::Mean,
            ReassemblePolicy::Max,
            ReassemblePolicy::Majority,
        ] {
            assert_eq!(reassemble(&[1.0], policy).unwrap(), 1.0);
        }
    }

    #[test]
    fn reassemble_mean_and_max() {
        assert_eq!(
            reassemble(&[0.0, 2.0], ReassemblePolicy::Mean).unwrap(),
            1.0
        );
        assert_eq!(reassemble(&[0.0, 2.0], ReassemblePolicy::Max).unwrap(), 2.0);
    }

    #[test]
    fn reassemble_majority_breaks_ties_toward_smaller() {
        assert_eq!(
            reassemble(&[0.0, 1.0, 1.0, 2.0], ReassemblePolicy::Majority).unwrap(),
            1.0
        );
        assert_eq!(
            reassemble(&[0.0, 0.0, 1.0, 1.0], ReassemblePolicy::Majority).unwrap(),
            0.0
        );
    }

    #[test]
    fn reassemble_rejects_empty_input() {
        assert_eq!(
            reassemble(&[], ReassemblePolicy::Mean),
            Err(ChunkError::EmptyAnswers)
        );
    }

    proptest! {
        #[test]
        fn estimate_is_additive_over_word_counts(a in 0usize..500, b in 0usize..500) {
            let left = text_of_words(a);
            let right = text_of_words(b);
            let joined = format!("{left} {right}");
            prop_assert_eq!(
                estimate_tokens(&joined),
                word_count_estimate((a + b) as u64)
            );
        }

        #[test]
        fn every_chunk_fits_and_split_preserves_words(
            n_words in 0usize..5000,
            window in 10u64..4000,
            reserve_frac in 0.0f64..0.9,
        ) {
            let text = text_of_words(n_words);
            let reserve = (window as f64 * reserve_frac) as u64;
            let spec = WindowSpec::new(window, reserve).unwrap();
            prop_assume!(spec.budget() >= 2);

            let plan = plan_chunks(&text, &spec, ChunkMode::Split).unwrap();
            for chunk in &plan.chunks {
                prop_assert!(chunk.token_estimate <= spec.budget());
                prop_assert_eq!(chunk.token_estimate, estimate_tokens(&chunk.text));
            }
            let flattened: Vec<&str> = plan
                .chunks
                .iter()
                .flat_map(|c| c.text.split_whitespace())
                .collect();
            let original: Vec<&str> = text.split_whitespace().collect();
            prop_assert_eq!(&flattened, &original);

            // Matches the word-by-word greedy simulation exactly; a text with
            // no words still yields one (empty) chunk.
            let oracle = greedy_oracle(&original, spec.budget());
            prop_assert_eq!(plan.chunks.len(), oracle.len().max(1));
        }

        #[test]
        fn mean_stays_within_answer_bounds(answers in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
            let mean = reassemble(&answers, ReassemblePolicy::Mean).unwrap();
            let min = answers.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = answers.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(mean >= min - 1e-12 && mean <= max + 1e-12);
        }
    }
}
