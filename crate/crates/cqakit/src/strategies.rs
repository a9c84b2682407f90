//! Model-ready input builders for the history-modeling strategies.
//!
//! The central piece is the prompt-insertion builder ([`build_marcqap`]):
//! every answer from the (truncated) history is wrapped in textual markers
//! placed at the answer's span inside the passage, with the marker carrying
//! the turn's recency index. [`strip_markers`] is its verification inverse.
//! Token-annotation builders ([`build_hae_map`], [`build_poshae_map`])
//! produce the per-token highlight maps used by embedding-based methods.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Example, Turn};
use crate::error::{Error, Result};
use crate::history::{render_history, truncate_history, HistoryTemplate};
use crate::offsets::{char_len, find_char};

/// History-modeling strategies supported by the batch builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Strategy {
    NoHistory,
    Concat,
    Rewrite,
    RewriteC,
    Excord,
    Hae,
    Poshae,
    Marcqap,
    MarcqapBare,
    MarcqapRandom,
    MarcqapSemantic,
    MarcqapSemanticIndex,
    MarcqapSemanticFull,
    MarcqapC,
}

/// Whether an insertion opens or closes a highlighted span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerRole {
    Begin,
    End,
}

/// A single marker insertion. `pos` is a char offset into the
/// pre-insertion passage; `turn` is the source turn index (0 when the
/// marker is not tied to a turn, e.g. the random-position variant).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub pos: usize,
    pub marker: String,
    pub role: MarkerRole,
    pub turn: usize,
}

/// The ordered list of insertions realizing one example's prompt.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkerPlan {
    pub insertions: Vec<Insertion>,
}

impl MarkerPlan {
    fn push_span(&mut self, turn: usize, start: usize, end: usize, begin: String, close: String) {
        self.insertions.push(Insertion {
            pos: start,
            marker: begin,
            role: MarkerRole::Begin,
            turn,
        });
        self.insertions.push(Insertion {
            pos: end,
            marker: close,
            role: MarkerRole::End,
            turn,
        });
    }

    /// Order insertions by position. At equal positions end markers come
    /// before begin markers, and the older turn's marker goes outermost,
    /// so identical spans nest instead of crossing.
    fn normalize(&mut self) {
        self.insertions.sort_by_key(|ins| {
            let role_rank = match ins.role {
                MarkerRole::End => 0u8,
                MarkerRole::Begin => 1u8,
            };
            let tie = match ins.role {
                MarkerRole::Begin => ins.turn as i64,
                MarkerRole::End => -(ins.turn as i64),
            };
            (ins.pos, role_rank, tie)
        });
    }

    /// Realize the plan over `text` in a single pass. Insertion positions
    /// refer to pre-insertion offsets, so walking the text left to right and
    /// emitting pending markers before each char is equivalent to applying
    /// the insertions from the highest position downward.
    fn apply(&self, text: &str) -> String {
        let extra: usize = self.insertions.iter().map(|i| i.marker.len()).sum();
        let mut out = String::with_capacity(text.len() + extra);
        let mut pending = self.insertions.iter().peekable();
        for (ci, ch) in text.chars().enumerate() {
            while let Some(ins) = pending.peek() {
                if ins.pos <= ci {
                    out.push_str(&ins.marker);
                    pending.next();
                } else {
                    break;
                }
            }
            out.push(ch);
        }
        for ins in pending {
            out.push_str(&ins.marker);
        }
        out
    }
}

/// How marker indices encode recency relative to the current turn `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    /// Index `k - 1 - j` (most recent turn gets 0).
    ReverseZeroBased,
    /// Index `k - j` (most recent turn gets 1).
    ReverseOneBased,
}

/// Configuration for the prompt-insertion builder and its variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarcqapConfig {
    pub index_mode: IndexMode,
    /// Begin-marker pattern; `{i}` is replaced with the computed index.
    pub begin_marker_pattern: String,
    /// End-marker pattern; `{i}` is replaced with the computed index.
    pub end_marker_pattern: String,
    /// Token appended to passages lacking it, targeted by unanswerable turns.
    pub no_answer_string: String,
    /// Highlight evidence spans when an answer has no extractive span.
    pub highlight_evidence_for_abstractive: bool,
}

impl Default for MarcqapConfig {
    fn default() -> Self {
        MarcqapConfig {
            index_mode: IndexMode::ReverseOneBased,
            begin_marker_pattern: "<{i}>".to_string(),
            end_marker_pattern: "</{i}>".to_string(),
            no_answer_string: crate::corpus::CANNOT_ANSWER.to_string(),
            highlight_evidence_for_abstractive: true,
        }
    }
}

impl MarcqapConfig {
    /// Marker index for history turn `j` relative to current turn `k`.
    pub fn marker_index(&self, k: usize, j: usize) -> usize {
        match self.index_mode {
            IndexMode::ReverseZeroBased => k - 1 - j,
            IndexMode::ReverseOneBased => k - j,
        }
    }

    fn validate_indexed_patterns(&self) -> Result<()> {
        for (name, pattern) in [
            ("begin_marker_pattern", &self.begin_marker_pattern),
            ("end_marker_pattern", &self.end_marker_pattern),
        ] {
            if !pattern.contains("{i}") {
                return Err(Error::Config(format!(
                    "{name} {pattern:?} lacks the {{i}} index placeholder"
                )));
            }
        }
        if self.no_answer_string.is_empty() {
            return Err(Error::Config("no_answer_string must not be empty".into()));
        }
        Ok(())
    }
}

/// A strategy-tagged, model-ready input. Serialized verbatim as one JSONL
/// record by the batch builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltInput {
    pub strategy: Strategy,
    pub conversation_id: String,
    pub turn_index: usize,
    pub question: String,
    pub passage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_annotations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertions: Option<Vec<Insertion>>,
    pub domain: String,
}

fn base_input(strategy: Strategy, ex: &Example) -> BuiltInput {
    BuiltInput {
        strategy,
        conversation_id: ex.conversation_id.clone(),
        turn_index: ex.k,
        question: ex.question.clone(),
        passage: ex.passage.clone(),
        history: None,
        token_annotations: None,
        insertions: None,
        domain: ex.domain.clone(),
    }
}

/// A built input plus the number of historic answers that had to be
/// skipped because no usable span could be resolved for them.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    pub input: BuiltInput,
    pub skipped_answers: usize,
}

// ---------------------------------------------------------------------------
// Plain builders
// ---------------------------------------------------------------------------

/// Question and passage only; the history is ignored.
pub fn build_no_history(ex: &Example) -> BuiltInput {
    base_input(Strategy::NoHistory, ex)
}

/// Question and passage plus the rendered (truncated) history.
pub fn build_concat(ex: &Example, template: &HistoryTemplate, limit: usize) -> BuiltInput {
    let mut input = base_input(Strategy::Concat, ex);
    input.history = Some(render_history(
        truncate_history(&ex.history, limit),
        template,
    ));
    input
}

/// The rewritten question replaces the original; no history is attached.
pub fn build_rewrite(ex: &Example, rewritten_question: &str) -> BuiltInput {
    let mut input = base_input(Strategy::Rewrite, ex);
    input.question = rewritten_question.to_string();
    input
}

/// Like [`build_concat`] but with the rewritten question.
pub fn build_rewrite_c(
    ex: &Example,
    rewritten_question: &str,
    template: &HistoryTemplate,
    limit: usize,
) -> BuiltInput {
    let mut input = build_concat(ex, template, limit);
    input.strategy = Strategy::RewriteC;
    input.question = rewritten_question.to_string();
    input
}

/// The training pair (original question, rewritten question), both in
/// concat form over an identical passage.
pub fn build_excord_pair(
    ex: &Example,
    rewritten_question: &str,
    template: &HistoryTemplate,
    limit: usize,
) -> (BuiltInput, BuiltInput) {
    let mut original = build_concat(ex, template, limit);
    original.strategy = Strategy::Excord;
    let mut rewritten = original.clone();
    rewritten.question = rewritten_question.to_string();
    (original, rewritten)
}

// ---------------------------------------------------------------------------
// Whitespace tokenization with offsets
// ---------------------------------------------------------------------------

/// A highlight span attributed to a history turn: `(turn_index, start, end)`
/// in char offsets.
pub type TurnSpan = (usize, usize, usize);

/// A whitespace token with its half-open char-offset range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

/// Split on whitespace, keeping char offsets. Joining the tokens back with
/// the original gaps reconstructs the input.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut token_start_char = 0;
    let mut token_start_byte = 0;
    let mut in_token = false;
    let mut chars_seen = 0;
    for (ci, (bi, ch)) in text.char_indices().enumerate() {
        chars_seen = ci + 1;
        if ch.is_whitespace() {
            if in_token {
                tokens.push(Token {
                    text: &text[token_start_byte..bi],
                    start: token_start_char,
                    end: ci,
                });
                in_token = false;
            }
        } else if !in_token {
            in_token = true;
            token_start_char = ci;
            token_start_byte = bi;
        }
    }
    if in_token {
        tokens.push(Token {
            text: &text[token_start_byte..],
            start: token_start_char,
            end: chars_seen,
        });
    }
    tokens
}

// ---------------------------------------------------------------------------
// Historic-answer span resolution
// ---------------------------------------------------------------------------

/// Locate the passage span to highlight for a historic turn: the stored
/// answer span, else the evidence span (when enabled), else the first
/// occurrence of the answer text in the passage.
fn locate_turn_span(turn: &Turn, passage: &str, use_evidence: bool) -> Option<(usize, usize)> {
    if let Some(span) = turn.answer_span {
        return Some(span);
    }
    if use_evidence {
        if let Some(span) = turn.evidence_span {
            return Some(span);
        }
    }
    if turn.answer_text.is_empty() {
        return None;
    }
    find_char(passage, &turn.answer_text).map(|start| (start, start + char_len(&turn.answer_text)))
}

/// Spans to annotate for the token-map builders. Unanswerable turns have
/// nothing to point at and are passed over silently; answers whose span
/// cannot be resolved are counted as skipped.
fn resolve_annotation_spans(ex: &Example, limit: usize) -> (Vec<TurnSpan>, usize) {
    let mut spans = Vec::new();
    let mut skipped = 0;
    for turn in truncate_history(&ex.history, limit) {
        if turn.is_unanswerable {
            continue;
        }
        match locate_turn_span(turn, &ex.passage, true) {
            Some((start, end)) if start < end => spans.push((turn.index, start, end)),
            _ => skipped += 1,
        }
    }
    (spans, skipped)
}

fn spans_intersect(a_start: usize, a_end: usize, b_start: usize, b_end: usize) -> bool {
    a_start < b_end && b_start < a_end
}

/// Binary per-token map: 1 iff the token intersects any historic answer
/// span within the truncated history.
pub fn build_hae_map(ex: &Example, limit: usize) -> BuildOutput {
    let (spans, skipped) = resolve_annotation_spans(ex, limit);
    let annotations = tokenize_with_offsets(&ex.passage)
        .iter()
        .map(|tok| {
            usize::from(
                spans
                    .iter()
                    .any(|&(_, s, e)| spans_intersect(tok.start, tok.end, s, e)),
            )
        })
        .collect();
    let mut input = base_input(Strategy::Hae, ex);
    input.token_annotations = Some(annotations);
    BuildOutput {
        input,
        skipped_answers: skipped,
    }
}

/// Per-token map carrying the covering turn's index (0 when uncovered).
/// When several turns cover a token the most recent turn wins.
pub fn build_poshae_map(ex: &Example, limit: usize) -> BuildOutput {
    let (spans, skipped) = resolve_annotation_spans(ex, limit);
    let annotations = tokenize_with_offsets(&ex.passage)
        .iter()
        .map(|tok| {
            spans
                .iter()
                .filter(|&&(_, s, e)| spans_intersect(tok.start, tok.end, s, e))
                .map(|&(turn, _, _)| turn)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut input = base_input(Strategy::Poshae, ex);
    input.token_annotations = Some(annotations);
    BuildOutput {
        input,
        skipped_answers: skipped,
    }
}

// ---------------------------------------------------------------------------
// Prompt insertion
// ---------------------------------------------------------------------------

/// The suffixed passage and resolved highlight targets for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct MarcqapTargets {
    /// Passage with the no-answer token appended when it was missing.
    pub passage: String,
    /// Resolved spans in pre-insertion char offsets.
    pub spans: Vec<TurnSpan>,
    pub skipped_answers: usize,
}

struct ResolvedTarget<'a> {
    turn: &'a Turn,
    start: usize,
    end: usize,
}

fn resolve_targets<'a>(
    ex: &'a Example,
    cfg: &MarcqapConfig,
    limit: usize,
) -> Result<(String, Vec<ResolvedTarget<'a>>, usize)> {
    if cfg.no_answer_string.is_empty() {
        return Err(Error::Config("no_answer_string must not be empty".into()));
    }
    let suffixed = if ex.passage.ends_with(&cfg.no_answer_string) {
        ex.passage.clone()
    } else {
        format!("{} {}", ex.passage, cfg.no_answer_string)
    };
    let suffixed_len = char_len(&suffixed);
    let suffix_span = (suffixed_len - char_len(&cfg.no_answer_string), suffixed_len);
    let passage_len = char_len(&ex.passage);

    let mut targets = Vec::new();
    let mut skipped = 0;
    for turn in truncate_history(&ex.history, limit) {
        let (start, end) = if turn.is_unanswerable {
            suffix_span
        } else {
            match locate_turn_span(turn, &ex.passage, cfg.highlight_evidence_for_abstractive) {
                Some(span) => span,
                None => {
                    skipped += 1;
                    continue;
                }
            }
        };
        if start > end || end > suffixed_len || (!turn.is_unanswerable && end > passage_len) {
            return Err(Error::Integrity {
                conversation_id: ex.conversation_id.clone(),
                turn_index: turn.index,
                message: format!(
                    "highlight span ({start}, {end}) out of bounds for passage of length {passage_len}"
                ),
            });
        }
        if start == end {
            skipped += 1;
            continue;
        }
        targets.push(ResolvedTarget { turn, start, end });
    }
    Ok((suffixed, targets, skipped))
}

/// Resolve the highlight spans without building markers. Used by the
/// chunking statistics pipeline.
pub fn marcqap_targets(ex: &Example, cfg: &MarcqapConfig, limit: usize) -> Result<MarcqapTargets> {
    let (passage, targets, skipped_answers) = resolve_targets(ex, cfg, limit)?;
    Ok(MarcqapTargets {
        passage,
        spans: targets
            .iter()
            .map(|t| (t.turn.index, t.start, t.end))
            .collect(),
        skipped_answers,
    })
}

fn build_marked<F>(
    ex: &Example,
    cfg: &MarcqapConfig,
    limit: usize,
    strategy: Strategy,
    make_markers: F,
) -> Result<BuildOutput>
where
    F: Fn(&Turn) -> (String, String),
{
    let (suffixed, targets, skipped) = resolve_targets(ex, cfg, limit)?;
    let mut plan = MarkerPlan::default();
    for target in &targets {
        let (begin, close) = make_markers(target.turn);
        plan.push_span(target.turn.index, target.start, target.end, begin, close);
    }
    plan.normalize();
    let marked = plan.apply(&suffixed);
    let mut input = base_input(strategy, ex);
    input.passage = marked;
    input.insertions = Some(plan.insertions);
    Ok(BuildOutput {
        input,
        skipped_answers: skipped,
    })
}

/// Build the answer-highlighted passage: append the no-answer token when
/// missing, then wrap every resolved historic answer span in indexed
/// begin/end markers. Unanswerable historic turns highlight the no-answer
/// suffix itself. The question is passed through unchanged and no separate
/// history text is attached.
pub fn build_marcqap(ex: &Example, cfg: &MarcqapConfig, limit: usize) -> Result<BuildOutput> {
    cfg.validate_indexed_patterns()?;
    build_marked(ex, cfg, limit, Strategy::Marcqap, |turn| {
        let idx = cfg.marker_index(ex.k, turn.index).to_string();
        (
            cfg.begin_marker_pattern.replace("{i}", &idx),
            cfg.end_marker_pattern.replace("{i}", &idx),
        )
    })
}

/// Ablated forms of the prompt-insertion builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarcqapVariant {
    /// Constant `<>` / `</>` symbols, no indexing.
    Bare,
    /// The same number of bare symbols at seeded-random positions.
    Random,
    /// Marker carries the first word of the turn's question, e.g. `<what>`.
    Semantic,
    /// First question word plus the recency index, e.g. `<what_1>`.
    SemanticIndex,
    /// Marker carries the entire historic question.
    SemanticFull,
    /// Full indexed markers plus the rendered history text.
    WithHistory,
}

fn semantic_head(question: &str) -> String {
    let head = question
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if head.is_empty() {
        "q".to_string()
    } else {
        head
    }
}

/// Build one of the ablation variants. `seed` is required by
/// [`MarcqapVariant::Random`] so that runs stay reproducible.
pub fn build_marcqap_variant(
    ex: &Example,
    variant: MarcqapVariant,
    cfg: &MarcqapConfig,
    template: &HistoryTemplate,
    limit: usize,
    seed: Option<u64>,
) -> Result<BuildOutput> {
    match variant {
        MarcqapVariant::Bare => build_marked(ex, cfg, limit, Strategy::MarcqapBare, |_| {
            ("<>".to_string(), "</>".to_string())
        }),
        MarcqapVariant::Semantic => {
            build_marked(ex, cfg, limit, Strategy::MarcqapSemantic, |turn| {
                let head = semantic_head(&turn.question);
                (format!("<{head}>"), format!("</{head}>"))
            })
        }
        MarcqapVariant::SemanticIndex => {
            build_marked(ex, cfg, limit, Strategy::MarcqapSemanticIndex, |turn| {
                let head = semantic_head(&turn.question);
                let idx = cfg.marker_index(ex.k, turn.index);
                (format!("<{head}_{idx}>"), format!("</{head}_{idx}>"))
            })
        }
        MarcqapVariant::SemanticFull => {
            build_marked(ex, cfg, limit, Strategy::MarcqapSemanticFull, |turn| {
                (
                    format!("<{}>", turn.question),
                    format!("</{}>", turn.question),
                )
            })
        }
        MarcqapVariant::WithHistory => {
            cfg.validate_indexed_patterns()?;
            let mut out = build_marked(ex, cfg, limit, Strategy::MarcqapC, |turn| {
                let idx = cfg.marker_index(ex.k, turn.index).to_string();
                (
                    cfg.begin_marker_pattern.replace("{i}", &idx),
                    cfg.end_marker_pattern.replace("{i}", &idx),
                )
            })?;
            out.input.history = Some(render_history(
                truncate_history(&ex.history, limit),
                template,
            ));
            Ok(out)
        }
        MarcqapVariant::Random => {
            let seed = seed.ok_or_else(|| {
                Error::Config("the random variant requires a seed for determinism".into())
            })?;
            let (suffixed, targets, skipped) = resolve_targets(ex, cfg, limit)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let len = char_len(&suffixed);
            let mut plan = MarkerPlan::default();
            for _ in 0..targets.len() * 2 {
                plan.insertions.push(Insertion {
                    pos: rng.gen_range(0..=len),
                    marker: "<>".to_string(),
                    role: MarkerRole::Begin,
                    turn: 0,
                });
            }
            plan.normalize();
            let marked = plan.apply(&suffixed);
            let mut input = base_input(Strategy::MarcqapRandom, ex);
            input.passage = marked;
            input.insertions = Some(plan.insertions);
            Ok(BuildOutput {
                input,
                skipped_answers: skipped,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Marker stripping (verification inverse)
// ---------------------------------------------------------------------------

fn pattern_regex_fragment(pattern: &str, group: &str) -> String {
    match pattern.split_once("{i}") {
        Some((pre, post)) => format!(
            "{}(?P<{group}>\\d+){}",
            regex::escape(pre),
            regex::escape(post)
        ),
        None => regex::escape(pattern),
    }
}

/// Remove all markers produced by [`build_marcqap`] under `cfg` for current
/// turn `k`, returning the pre-insertion passage and the recovered
/// `(turn_index, start, end)` spans.
///
/// Indexed markers are matched by index, so overlapping (crossing) spans
/// are recovered exactly. Patterns without the `{i}` placeholder (the bare
/// variant) are matched last-in-first-out and recovered with turn index 0.
/// The source passage must not itself contain marker-shaped substrings.
pub fn strip_markers(
    marked: &str,
    cfg: &MarcqapConfig,
    k: usize,
) -> Result<(String, Vec<TurnSpan>)> {
    if cfg.begin_marker_pattern.is_empty() || cfg.end_marker_pattern.is_empty() {
        return Err(Error::Config("marker patterns must not be empty".into()));
    }
    let indexed = cfg.begin_marker_pattern.contains("{i}");
    if indexed != cfg.end_marker_pattern.contains("{i}") {
        return Err(Error::Config(
            "begin and end marker patterns must both carry {i}, or neither".into(),
        ));
    }
    let begin_frag = pattern_regex_fragment(&cfg.begin_marker_pattern, "bi");
    let end_frag = pattern_regex_fragment(&cfg.end_marker_pattern, "ei");
    let re = Regex::new(&format!("(?P<b>{begin_frag})|(?P<e>{end_frag})"))
        .map_err(|e| Error::Config(format!("marker patterns do not compile: {e}")))?;

    let turn_of_index = |idx: usize| -> Result<usize> {
        let j = match cfg.index_mode {
            IndexMode::ReverseOneBased => k as i64 - idx as i64,
            IndexMode::ReverseZeroBased => k as i64 - 1 - idx as i64,
        };
        if j < 1 {
            return Err(Error::Structure(format!(
                "marker index {idx} does not correspond to a history turn of turn {k}"
            )));
        }
        Ok(j as usize)
    };

    let mut out = String::with_capacity(marked.len());
    let mut out_chars = 0;
    let mut spans = Vec::new();
    let mut open_by_index: HashMap<usize, (usize, usize)> = HashMap::new();
    let mut open_stack: Vec<usize> = Vec::new();
    let mut cursor = 0;

    for caps in re.captures_iter(marked) {
        let m = caps.get(0).expect("match");
        let gap = &marked[cursor..m.start()];
        out.push_str(gap);
        out_chars += char_len(gap);
        cursor = m.end();

        if caps.name("b").is_some() {
            if indexed {
                let idx: usize = caps["bi"].parse().map_err(|_| {
                    Error::Structure(format!("marker index overflow in {:?}", &caps["b"]))
                })?;
                let turn = turn_of_index(idx)?;
                if open_by_index.insert(idx, (turn, out_chars)).is_some() {
                    return Err(Error::Structure(format!(
                        "duplicate begin marker with index {idx}"
                    )));
                }
            } else {
                open_stack.push(out_chars);
            }
        } else if indexed {
            let idx: usize = caps["ei"].parse().map_err(|_| {
                Error::Structure(format!("marker index overflow in {:?}", &caps["e"]))
            })?;
            let (turn, start) = open_by_index.remove(&idx).ok_or_else(|| {
                Error::Structure(format!("end marker with index {idx} has no matching begin"))
            })?;
            spans.push((turn, start, out_chars));
        } else {
            let start = open_stack
                .pop()
                .ok_or_else(|| Error::Structure("end marker has no matching begin".into()))?;
            spans.push((0, start, out_chars));
        }
    }
    out.push_str(&marked[cursor..]);

    if !open_by_index.is_empty() {
        let mut indices: Vec<usize> = open_by_index.keys().copied().collect();
        indices.sort_unstable();
        return Err(Error::Structure(format!(
            "unclosed begin markers with indices {indices:?}"
        )));
    }
    if !open_stack.is_empty() {
        return Err(Error::Structure(format!(
            "{} unclosed begin markers",
            open_stack.len()
        )));
    }
    Ok((out, spans))
}

// ---------------------------------------------------------------------------
// Rewrite lookup table
// ---------------------------------------------------------------------------

/// One line of a rewrites file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewriteRecord {
    pub conversation_id: String,
    pub turn_index: usize,
    pub rewritten_question: String,
}

/// Rewritten questions keyed by `(conversation_id, turn_index)`.
#[derive(Debug, Default)]
pub struct RewriteTable {
    entries: HashMap<(String, usize), String>,
}

impl RewriteTable {
    pub fn from_jsonl(raw: &str) -> Result<Self> {
        let mut entries = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: RewriteRecord = serde_json::from_str(line)
                .map_err(|e| Error::Parse(format!("rewrites line {}: {e}", lineno + 1)))?;
            entries.insert(
                (rec.conversation_id, rec.turn_index),
                rec.rewritten_question,
            );
        }
        Ok(RewriteTable { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_jsonl(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The rewrite for `(conversation_id, k)`, or a lookup error naming it.
    pub fn get(&self, conversation_id: &str, k: usize) -> Result<&str> {
        self.entries
            .get(&(conversation_id.to_string(), k))
            .map(String::as_str)
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "no rewritten question for ({conversation_id}, {k})"
                ))
            })
    }
}
