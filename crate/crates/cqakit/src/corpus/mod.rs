//! Normalized conversation model and per-turn example expansion.
//!
//! Parsers for the supported dataset formats live in [`parse`]; everything
//! downstream (strategy builders, metrics, sampling) works on the
//! [`Conversation`] / [`Example`] types defined here.

mod parse;

pub use parse::{parse_dataset, DatasetFormat};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::offsets::{char_len, char_slice};

/// Canonical token for "the passage contains no answer".
///
/// Parsers map each dataset's native convention onto this constant so that
/// every downstream code path handles a single token.
pub const CANNOT_ANSWER: &str = "CANNOTANSWER";

/// One question-answer turn of a conversation.
///
/// `answer_span` / `evidence_span` are half-open `(start, end)` char
/// offsets into the conversation passage. Extractive answers carry
/// `answer_span`; abstractive datasets store the supporting passage span
/// in `evidence_span` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based position within the conversation.
    pub index: usize,
    pub question: String,
    pub answer_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_span: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_span: Option<(usize, usize)>,
    #[serde(default)]
    pub is_unanswerable: bool,
    /// Whether the stored answer was judged correct (noisy-history data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correctness: Option<bool>,
    /// Upstream question-validity flag (noisy-history data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_question: Option<bool>,
    /// Gold answer texts; the canonical answer comes first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub references: Vec<String>,
}

impl Turn {
    /// All gold texts for this turn, falling back to the canonical answer.
    pub fn gold_references(&self) -> Vec<String> {
        if self.references.is_empty() {
            vec![self.answer_text.clone()]
        } else {
            self.references.clone()
        }
    }
}

/// A passage plus its ordered dialogue turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub domain: String,
    pub passage: String,
    /// True when `passage` already ends with [`CANNOT_ANSWER`].
    #[serde(default)]
    pub passage_has_no_answer_suffix: bool,
    pub turns: Vec<Turn>,
}

impl Conversation {
    /// Check the model invariants: contiguous 1-based turn indices,
    /// in-bounds spans whose substring equals the stored answer text, and
    /// no spans on unanswerable turns.
    pub fn validate(&self) -> Result<()> {
        let passage_len = char_len(&self.passage);
        for (pos, turn) in self.turns.iter().enumerate() {
            let fail = |message: String| Error::Integrity {
                conversation_id: self.id.clone(),
                turn_index: turn.index,
                message,
            };
            if turn.index != pos + 1 {
                return Err(fail(format!(
                    "turn indices must be contiguous from 1, found {} at position {}",
                    turn.index,
                    pos + 1
                )));
            }
            if turn.is_unanswerable && turn.answer_span.is_some() {
                return Err(fail("unanswerable turn carries an answer span".into()));
            }
            if let Some((start, end)) = turn.answer_span {
                let sub = char_slice(&self.passage, start, end).ok_or_else(|| {
                    fail(format!(
                        "answer span ({start}, {end}) out of bounds for passage of length {passage_len}"
                    ))
                })?;
                if sub != turn.answer_text {
                    return Err(fail(format!(
                        "answer span ({start}, {end}) yields {sub:?}, expected {:?}",
                        turn.answer_text
                    )));
                }
            }
            if let Some((start, end)) = turn.evidence_span {
                if start > end || end > passage_len {
                    return Err(fail(format!(
                        "evidence span ({start}, {end}) out of bounds for passage of length {passage_len}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One prediction instance: the passage, the history before turn `k`, the
/// current question, and the gold labels of turn `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub conversation_id: String,
    /// Index of the current turn (1-based).
    pub k: usize,
    pub passage: String,
    /// Turns 1..k-1 in order, untruncated.
    pub history: Vec<Turn>,
    pub question: String,
    pub gold_references: Vec<String>,
    pub gold_unanswerable: bool,
    pub domain: String,
    /// Correctness flag of the label turn (noisy-history data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_correct: Option<bool>,
    /// Upstream validity flag of the current question (noisy-history data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_valid_question: Option<bool>,
}

/// Expand a conversation with `m` turns into the `m` per-turn examples.
pub fn build_examples(conv: &Conversation) -> Vec<Example> {
    conv.turns
        .iter()
        .enumerate()
        .map(|(pos, turn)| Example {
            conversation_id: conv.id.clone(),
            k: turn.index,
            passage: conv.passage.clone(),
            history: conv.turns[..pos].to_vec(),
            question: turn.question.clone(),
            gold_references: turn.gold_references(),
            gold_unanswerable: turn.is_unanswerable,
            domain: conv.domain.clone(),
            label_correct: turn.correctness,
            label_valid_question: turn.valid_question,
        })
        .collect()
}

/// Keep only examples whose label answer is trustworthy.
///
/// An example survives iff its label answer is marked correct, its question
/// is valid (not flagged invalid upstream, not blank), and its answer text
/// occurs in the passage. Histories are left untouched: incorrect historic
/// answers stay in the surviving examples' histories.
pub fn filter_noisy(examples: &[Example]) -> Result<Vec<Example>> {
    for ex in examples {
        if ex.label_correct.is_none() {
            return Err(Error::Config(format!(
                "example ({}, {}) has no correctness flag; \
                 noisy filtering requires a noisy-history corpus",
                ex.conversation_id, ex.k
            )));
        }
    }
    Ok(examples
        .iter()
        .filter(|ex| {
            let correct = ex.label_correct == Some(true);
            let valid_question =
                ex.label_valid_question != Some(false) && !ex.question.trim().is_empty();
            let answer_present = ex.gold_unanswerable
                || ex
                    .gold_references
                    .first()
                    .map(|r| ex.passage.contains(r.as_str()))
                    .unwrap_or(false);
            correct && valid_question && answer_present
        })
        .cloned()
        .collect())
}

/// Write a normalized corpus as JSONL, one conversation per line.
pub fn write_conversations(path: &Path, convs: &[Conversation]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    for conv in convs {
        serde_json::to_writer(&mut out, conv)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a normalized corpus written by [`write_conversations`].
pub fn read_conversations(path: &Path) -> Result<Vec<Conversation>> {
    let raw = fs::read_to_string(path)?;
    let mut convs = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let conv: Conversation = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("{}: line {}: {e}", path.display(), lineno + 1)))?;
        conv.validate()?;
        convs.push(conv);
    }
    Ok(convs)
}
