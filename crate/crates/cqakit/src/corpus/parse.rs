//! Parsers for the supported dataset release formats.
//!
//! All offsets in the normalized model are Unicode scalar positions; the
//! source files use the same convention, so offsets are validated (span
//! substring must equal the stored answer text) but never re-derived.

use std::collections::BTreeMap;

use clap::ValueEnum;
use serde::Deserialize;

use crate::corpus::{Conversation, Turn, CANNOT_ANSWER};
use crate::error::{Error, Result};
use crate::offsets::{char_len, char_slice};

/// Supported input formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum DatasetFormat {
    /// SQuAD-style JSON with per-paragraph dialogues; passages carry a
    /// trailing CANNOTANSWER token.
    Quac,
    /// Story-based JSON with abstractive answers plus rationale spans.
    Coqa,
    /// Forum dialogues in the SQuAD-style layout, one domain per file.
    Doqa,
    /// Noisy-history JSONL, one object per turn (see README for the schema).
    QuacNh,
}

/// Parse a raw dataset document into normalized conversations.
pub fn parse_dataset(raw: &str, format: DatasetFormat) -> Result<Vec<Conversation>> {
    let convs = match format {
        DatasetFormat::Quac => parse_quac(raw)?,
        DatasetFormat::Coqa => parse_coqa(raw)?,
        DatasetFormat::Doqa => parse_doqa(raw)?,
        DatasetFormat::QuacNh => parse_quac_nh(raw)?,
    };
    for conv in &convs {
        conv.validate()?;
    }
    Ok(convs)
}

fn json_err(what: &str, e: serde_json::Error) -> Error {
    Error::Parse(format!("{what}: {e}"))
}

/// True when `text` is the dataset-native no-answer token for QuAC-style data.
fn is_native_cannot_answer(text: &str) -> bool {
    text.trim() == CANNOT_ANSWER
}

fn dedup_references(canonical: &str, rest: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut refs = vec![canonical.to_string()];
    for r in rest {
        let r = if is_native_cannot_answer(&r) {
            CANNOT_ANSWER.to_string()
        } else {
            r
        };
        if !r.is_empty() && !refs.contains(&r) {
            refs.push(r);
        }
    }
    refs
}

// ---------------------------------------------------------------------------
// QuAC
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct QuacFile {
    data: Vec<QuacArticle>,
}

#[derive(Deserialize)]
struct QuacArticle {
    paragraphs: Vec<QuacParagraph>,
}

#[derive(Deserialize)]
struct QuacParagraph {
    id: String,
    context: String,
    qas: Vec<QuacQa>,
}

#[derive(Deserialize)]
struct QuacQa {
    question: String,
    orig_answer: QuacAnswer,
    #[serde(default)]
    answers: Vec<QuacAnswer>,
}

#[derive(Deserialize)]
struct QuacAnswer {
    text: String,
    answer_start: i64,
}

fn parse_quac(raw: &str) -> Result<Vec<Conversation>> {
    let file: QuacFile = serde_json::from_str(raw).map_err(|e| json_err("quac document", e))?;
    let mut convs = Vec::new();
    for article in file.data {
        for para in article.paragraphs {
            convs.push(quac_paragraph_to_conversation(para, "wikipedia")?);
        }
    }
    Ok(convs)
}

fn quac_paragraph_to_conversation(para: QuacParagraph, domain: &str) -> Result<Conversation> {
    let mut turns = Vec::with_capacity(para.qas.len());
    for (pos, qa) in para.qas.into_iter().enumerate() {
        let index = pos + 1;
        let turn = if is_native_cannot_answer(&qa.orig_answer.text) {
            Turn {
                index,
                question: qa.question,
                answer_text: CANNOT_ANSWER.to_string(),
                answer_span: None,
                evidence_span: None,
                is_unanswerable: true,
                correctness: None,
                valid_question: None,
                references: dedup_references(CANNOT_ANSWER, qa.answers.into_iter().map(|a| a.text)),
            }
        } else {
            let span = resolve_extractive_span(
                &para.context,
                &qa.orig_answer.text,
                qa.orig_answer.answer_start,
                &para.id,
                index,
            )?;
            Turn {
                index,
                question: qa.question,
                answer_text: qa.orig_answer.text.clone(),
                answer_span: Some(span),
                evidence_span: None,
                is_unanswerable: false,
                correctness: None,
                valid_question: None,
                references: dedup_references(
                    &qa.orig_answer.text,
                    qa.answers.into_iter().map(|a| a.text),
                ),
            }
        };
        turns.push(turn);
    }
    Ok(Conversation {
        passage_has_no_answer_suffix: para.context.ends_with(CANNOT_ANSWER),
        id: para.id,
        domain: domain.to_string(),
        passage: para.context,
        turns,
    })
}

fn resolve_extractive_span(
    context: &str,
    answer: &str,
    answer_start: i64,
    conversation_id: &str,
    turn_index: usize,
) -> Result<(usize, usize)> {
    let fail = |message: String| Error::Integrity {
        conversation_id: conversation_id.to_string(),
        turn_index,
        message,
    };
    if answer_start < 0 {
        return Err(fail(format!("negative answer_start {answer_start}")));
    }
    let start = answer_start as usize;
    let end = start + char_len(answer);
    let sub = char_slice(context, start, end).ok_or_else(|| {
        fail(format!(
            "answer span ({start}, {end}) out of bounds for passage of length {}",
            char_len(context)
        ))
    })?;
    if sub != answer {
        return Err(fail(format!(
            "answer span ({start}, {end}) yields {sub:?}, expected {answer:?}"
        )));
    }
    Ok((start, end))
}

// ---------------------------------------------------------------------------
// CoQA
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct CoqaFile {
    data: Vec<CoqaStory>,
}

#[derive(Deserialize)]
struct CoqaStory {
    id: String,
    source: String,
    story: String,
    questions: Vec<CoqaQuestion>,
    answers: Vec<CoqaAnswer>,
    #[serde(default)]
    additional_answers: Option<BTreeMap<String, Vec<CoqaAnswer>>>,
}

#[derive(Deserialize)]
struct CoqaQuestion {
    input_text: String,
    turn_id: i64,
}

#[derive(Deserialize)]
struct CoqaAnswer {
    #[serde(default = "minus_one")]
    span_start: i64,
    #[serde(default = "minus_one")]
    span_end: i64,
    #[serde(default)]
    span_text: String,
    input_text: String,
    turn_id: i64,
}

fn minus_one() -> i64 {
    -1
}

/// Map a CoQA `source` value onto the domain labels used in reports.
fn coqa_domain(source: &str) -> String {
    match source {
        "mctest" => "children_stories".to_string(),
        "gutenberg" => "literature".to_string(),
        "race" => "mid_high_school".to_string(),
        "cnn" => "news".to_string(),
        "wikipedia" => "wikipedia".to_string(),
        other => other.to_string(),
    }
}

fn is_coqa_unknown(text: &str) -> bool {
    text.trim().eq_ignore_ascii_case("unknown")
}

fn parse_coqa(raw: &str) -> Result<Vec<Conversation>> {
    let file: CoqaFile = serde_json::from_str(raw).map_err(|e| json_err("coqa document", e))?;
    let mut convs = Vec::with_capacity(file.data.len());
    for story in file.data {
        convs.push(coqa_story_to_conversation(story)?);
    }
    Ok(convs)
}

fn coqa_story_to_conversation(story: CoqaStory) -> Result<Conversation> {
    if story.questions.len() != story.answers.len() {
        return Err(Error::Parse(format!(
            "coqa story {}: {} questions but {} answers",
            story.id,
            story.questions.len(),
            story.answers.len()
        )));
    }
    let mut turns = Vec::with_capacity(story.questions.len());
    for (pos, (q, a)) in story.questions.iter().zip(&story.answers).enumerate() {
        let index = pos + 1;
        if q.turn_id != index as i64 || a.turn_id != index as i64 {
            return Err(Error::Integrity {
                conversation_id: story.id.clone(),
                turn_index: index,
                message: format!(
                    "turn ids must be contiguous from 1, found question {} / answer {}",
                    q.turn_id, a.turn_id
                ),
            });
        }
        let unanswerable = is_coqa_unknown(&a.input_text);
        let evidence_span = if a.span_start >= 0 && a.span_end >= a.span_start {
            let start = a.span_start as usize;
            let end = a.span_end as usize;
            let sub = char_slice(&story.story, start, end).ok_or_else(|| Error::Integrity {
                conversation_id: story.id.clone(),
                turn_index: index,
                message: format!(
                    "evidence span ({start}, {end}) out of bounds for passage of length {}",
                    char_len(&story.story)
                ),
            })?;
            if sub != a.span_text {
                return Err(Error::Integrity {
                    conversation_id: story.id.clone(),
                    turn_index: index,
                    message: format!(
                        "evidence span ({start}, {end}) yields {sub:?}, expected {:?}",
                        a.span_text
                    ),
                });
            }
            Some((start, end))
        } else {
            None
        };
        let answer_text = if unanswerable {
            CANNOT_ANSWER.to_string()
        } else {
            a.input_text.clone()
        };
        let extra: Vec<String> = story
            .additional_answers
            .as_ref()
            .map(|sets| {
                sets.values()
                    .filter_map(|answers| answers.get(pos).map(|a| a.input_text.clone()))
                    .collect()
            })
            .unwrap_or_default();
        turns.push(Turn {
            index,
            question: q.input_text.clone(),
            references: dedup_references(
                &answer_text,
                extra.into_iter().map(|r| {
                    if is_coqa_unknown(&r) {
                        CANNOT_ANSWER.to_string()
                    } else {
                        r
                    }
                }),
            ),
            answer_text,
            answer_span: None,
            evidence_span: if unanswerable { None } else { evidence_span },
            is_unanswerable: unanswerable,
            correctness: None,
            valid_question: None,
        });
    }
    Ok(Conversation {
        id: story.id,
        domain: coqa_domain(&story.source),
        passage_has_no_answer_suffix: story.story.ends_with(CANNOT_ANSWER),
        passage: story.story,
        turns,
    })
}

// ---------------------------------------------------------------------------
// DoQA
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct DoqaFile {
    data: Vec<DoqaDialogue>,
}

#[derive(Deserialize)]
struct DoqaDialogue {
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    domain: Option<String>,
    paragraphs: Vec<DoqaParagraph>,
}

#[derive(Deserialize)]
struct DoqaParagraph {
    #[serde(default)]
    id: Option<String>,
    context: String,
    qas: Vec<DoqaQa>,
}

#[derive(Deserialize)]
struct DoqaQa {
    question: String,
    #[serde(default)]
    orig_answer: Option<QuacAnswer>,
    #[serde(default)]
    answers: Vec<QuacAnswer>,
}

const DOQA_DOMAINS: [&str; 3] = ["cooking", "movies", "travel"];

fn doqa_domain(dialogue: &DoqaDialogue) -> String {
    if let Some(domain) = &dialogue.domain {
        return domain.to_lowercase();
    }
    if let Some(title) = &dialogue.title {
        let head = title
            .split(|c: char| !c.is_ascii_alphanumeric())
            .next()
            .unwrap_or("")
            .to_lowercase();
        if DOQA_DOMAINS.contains(&head.as_str()) {
            return head;
        }
    }
    "unknown".to_string()
}

fn parse_doqa(raw: &str) -> Result<Vec<Conversation>> {
    let file: DoqaFile = serde_json::from_str(raw).map_err(|e| json_err("doqa document", e))?;
    let mut convs = Vec::new();
    for (dialogue_idx, dialogue) in file.data.into_iter().enumerate() {
        let domain = doqa_domain(&dialogue);
        let title = dialogue.title.clone().unwrap_or_default();
        for (para_idx, para) in dialogue.paragraphs.into_iter().enumerate() {
            let id = para.id.clone().unwrap_or_else(|| {
                if title.is_empty() {
                    format!("doqa-{dialogue_idx}-{para_idx}")
                } else {
                    format!("{title}-{para_idx}")
                }
            });
            let qas = para
                .qas
                .into_iter()
                .map(|qa| {
                    let canonical = qa.orig_answer.or_else(|| {
                        // test releases carry the reference list only
                        qa.answers.first().map(|a| QuacAnswer {
                            text: a.text.clone(),
                            answer_start: a.answer_start,
                        })
                    });
                    match canonical {
                        Some(orig) => Ok(QuacQa {
                            question: qa.question,
                            orig_answer: orig,
                            answers: qa.answers,
                        }),
                        None => Err(Error::Parse(format!(
                            "doqa dialogue {id}: question {:?} has no answers",
                            qa.question
                        ))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            convs.push(quac_paragraph_to_conversation(
                QuacParagraph {
                    id,
                    context: para.context.clone(),
                    qas,
                },
                &domain,
            )?);
        }
    }
    Ok(convs)
}

// ---------------------------------------------------------------------------
// QuAC noisy-history JSONL
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct NhRecord {
    conversation_id: String,
    turn_index: usize,
    question: String,
    answer_text: String,
    #[serde(default)]
    char_span: Option<(usize, usize)>,
    correct: bool,
    valid_question: bool,
    #[serde(default)]
    passage: Option<String>,
    #[serde(default)]
    domain: Option<String>,
}

fn parse_quac_nh(raw: &str) -> Result<Vec<Conversation>> {
    let mut convs: Vec<Conversation> = Vec::new();
    let mut index_of: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: NhRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("quac-nh line {}: {e}", lineno + 1)))?;
        let conv_idx = match index_of.get(&rec.conversation_id) {
            Some(&idx) => idx,
            None => {
                let passage = rec.passage.clone().ok_or_else(|| {
                    Error::Parse(format!(
                        "quac-nh line {}: first turn of conversation {} must carry a passage",
                        lineno + 1,
                        rec.conversation_id
                    ))
                })?;
                convs.push(Conversation {
                    id: rec.conversation_id.clone(),
                    domain: rec
                        .domain
                        .clone()
                        .unwrap_or_else(|| "wikipedia".to_string()),
                    passage_has_no_answer_suffix: passage.ends_with(CANNOT_ANSWER),
                    passage,
                    turns: Vec::new(),
                });
                index_of.insert(rec.conversation_id.clone(), convs.len() - 1);
                convs.len() - 1
            }
        };
        let conv = &mut convs[conv_idx];
        let expected_index = conv.turns.len() + 1;
        if rec.turn_index != expected_index {
            return Err(Error::Integrity {
                conversation_id: rec.conversation_id,
                turn_index: rec.turn_index,
                message: format!("expected turn index {expected_index} (turns must be contiguous)"),
            });
        }
        let unanswerable = is_native_cannot_answer(&rec.answer_text);
        let answer_text = if unanswerable {
            CANNOT_ANSWER.to_string()
        } else {
            rec.answer_text
        };
        turns_push_nh(
            conv,
            rec.turn_index,
            rec.question,
            answer_text,
            rec.char_span,
            unanswerable,
            rec.correct,
            rec.valid_question,
        )?;
    }
    Ok(convs)
}

#[allow(clippy::too_many_arguments)]
fn turns_push_nh(
    conv: &mut Conversation,
    index: usize,
    question: String,
    answer_text: String,
    char_span: Option<(usize, usize)>,
    unanswerable: bool,
    correct: bool,
    valid_question: bool,
) -> Result<()> {
    let answer_span = if unanswerable {
        None
    } else if let Some((start, end)) = char_span {
        let sub = char_slice(&conv.passage, start, end).ok_or_else(|| Error::Integrity {
            conversation_id: conv.id.clone(),
            turn_index: index,
            message: format!(
                "answer span ({start}, {end}) out of bounds for passage of length {}",
                char_len(&conv.passage)
            ),
        })?;
        if sub != answer_text {
            return Err(Error::Integrity {
                conversation_id: conv.id.clone(),
                turn_index: index,
                message: format!(
                    "answer span ({start}, {end}) yields {sub:?}, expected {answer_text:?}"
                ),
            });
        }
        Some((start, end))
    } else {
        None
    };
    conv.turns.push(Turn {
        index,
        question,
        references: vec![answer_text.clone()],
        answer_text,
        answer_span,
        evidence_span: None,
        is_unanswerable: unanswerable,
        correctness: Some(correct),
        valid_question: Some(valid_question),
    });
    Ok(())
}
