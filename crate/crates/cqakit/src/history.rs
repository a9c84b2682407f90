//! Truncated and textually rendered views of the conversation history.

use serde::{Deserialize, Serialize};

use crate::corpus::{Turn, CANNOT_ANSWER};

/// Controls how a history is serialized to text.
///
/// The default keeps the rendering minimal: question before answer, single
/// spaces everywhere, no role tags, no turn numbers. All pieces are
/// configurable through the run-config file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistoryTemplate {
    /// Separator between consecutive turns.
    pub turn_separator: String,
    /// Separator between a question and its answer.
    pub qa_separator: String,
    /// Optional tag before each question (e.g. "Q: ").
    pub question_prefix: String,
    /// Optional tag before each answer (e.g. "A: ").
    pub answer_prefix: String,
    /// Prefix each turn with its index, as "[i] ".
    pub number_turns: bool,
}

impl Default for HistoryTemplate {
    fn default() -> Self {
        HistoryTemplate {
            turn_separator: " ".to_string(),
            qa_separator: " ".to_string(),
            question_prefix: String::new(),
            answer_prefix: String::new(),
            number_turns: false,
        }
    }
}

/// The last `min(limit, |history|)` turns, order preserved.
pub fn truncate_history(history: &[Turn], limit: usize) -> &[Turn] {
    let start = history.len().saturating_sub(limit);
    &history[start..]
}

/// Render a history as text, question then answer per turn.
/// Unanswerable turns render the canonical no-answer token.
pub fn render_history(history: &[Turn], template: &HistoryTemplate) -> String {
    let parts: Vec<String> = history
        .iter()
        .map(|turn| {
            let answer = if turn.is_unanswerable {
                CANNOT_ANSWER
            } else {
                turn.answer_text.as_str()
            };
            let number = if template.number_turns {
                format!("[{}] ", turn.index)
            } else {
                String::new()
            };
            format!(
                "{number}{}{}{}{}{answer}",
                template.question_prefix,
                turn.question,
                template.qa_separator,
                template.answer_prefix
            )
        })
        .collect();
    parts.join(&template.turn_separator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn turn(index: usize, question: &str, answer: &str) -> Turn {
        Turn {
            index,
            question: question.into(),
            answer_text: answer.into(),
            answer_span: None,
            evidence_span: None,
            is_unanswerable: false,
            correctness: None,
            valid_question: None,
            references: vec![],
        }
    }

    #[test]
    fn truncate_keeps_most_recent() {
        let h: Vec<Turn> = (1..=5).map(|i| turn(i, "q", "a")).collect();
        let t = truncate_history(&h, 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].index, 4);
        assert_eq!(t[1].index, 5);
    }

    #[test]
    fn truncate_limit_at_least_length_is_identity() {
        let h: Vec<Turn> = (1..=3).map(|i| turn(i, "q", "a")).collect();
        assert_eq!(truncate_history(&h, 3), &h[..]);
        assert_eq!(truncate_history(&h, 10), &h[..]);
    }

    #[test]
    fn truncate_zero_is_empty() {
        let h: Vec<Turn> = (1..=3).map(|i| turn(i, "q", "a")).collect();
        assert!(truncate_history(&h, 0).is_empty());
    }

    #[test]
    fn render_default_template() {
        let h = vec![turn(1, "Where?", "Prague")];
        assert_eq!(
            render_history(&h, &HistoryTemplate::default()),
            "Where? Prague"
        );
    }

    #[test]
    fn render_empty_history() {
        assert_eq!(render_history(&[], &HistoryTemplate::default()), "");
    }

    #[test]
    fn render_unanswerable_uses_canonical_token() {
        let mut t = turn(1, "When was he born?", "whatever");
        t.is_unanswerable = true;
        assert_eq!(
            render_history(&[t], &HistoryTemplate::default()),
            "When was he born? CANNOTANSWER"
        );
    }

    #[test]
    fn render_with_tags_and_numbers() {
        let template = HistoryTemplate {
            turn_separator: " | ".into(),
            qa_separator: " ".into(),
            question_prefix: "Q: ".into(),
            answer_prefix: "A: ".into(),
            number_turns: true,
        };
        let h = vec![turn(1, "Where?", "Prague"), turn(2, "What?", "physics")];
        assert_eq!(
            render_history(&h, &template),
            "[1] Q: Where? A: Prague | [2] Q: What? A: physics"
        );
    }

    proptest! {
        // truncate(h, a) then truncate(., b) == truncate(h, min(a, b))
        #[test]
        fn truncation_composes(len in 0usize..12, a in 0usize..15, b in 0usize..15) {
            let h: Vec<Turn> = (1..=len).map(|i| turn(i, "q", "a")).collect();
            let two_step = truncate_history(truncate_history(&h, a), b).to_vec();
            let one_step = truncate_history(&h, a.min(b)).to_vec();
            prop_assert_eq!(two_step, one_step);
        }

        // with single-word questions/answers the default rendering is injective
        #[test]
        fn render_injective_for_separator_free_histories(
            qa1 in proptest::collection::vec(("[a-z]{1,6}", "[a-z]{1,6}"), 0..4),
            qa2 in proptest::collection::vec(("[a-z]{1,6}", "[a-z]{1,6}"), 0..4),
        ) {
            let mk = |qa: &[(String, String)]| -> Vec<Turn> {
                qa.iter()
                    .enumerate()
                    .map(|(i, (q, a))| turn(i + 1, q, a))
                    .collect()
            };
            let h1 = mk(&qa1);
            let h2 = mk(&qa2);
            let template = HistoryTemplate::default();
            if render_history(&h1, &template) == render_history(&h2, &template) {
                prop_assert_eq!(qa1, qa2);
            }
        }
    }
}
