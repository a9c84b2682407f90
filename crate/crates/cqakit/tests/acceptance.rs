//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test --test acceptance -- --nocapture` to see the
//! lines for passing criteria too.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cqakit::chunking::{chunk_is_partial, chunk_tokens};
use cqakit::corpus::{Conversation, Example, Turn, CANNOT_ANSWER};
use cqakit::history::truncate_history;
use cqakit::metrics::{delta_pct, example_f1, paired_t_test, token_f1};
use cqakit::offsets::{char_len, char_slice};
use cqakit::sampling::sample_fraction;
use cqakit::strategies::{
    build_hae_map, build_marcqap, build_poshae_map, strip_markers, IndexMode, MarcqapConfig,
};

fn criterion(number: usize, name: &str, body: impl FnOnce() -> Result<(), String>) {
    let result = body();
    match &result {
        Ok(()) => println!("acceptance criterion {number} ({name}): PASS"),
        Err(e) => println!("acceptance criterion {number} ({name}): FAIL\n{e}"),
    }
    if let Err(e) = result {
        panic!("criterion {number} ({name}) failed: {e}");
    }
}

fn turn(index: usize, question: &str, answer: &str, span: Option<(usize, usize)>) -> Turn {
    Turn {
        index,
        question: question.into(),
        answer_text: answer.into(),
        answer_span: span,
        evidence_span: None,
        is_unanswerable: false,
        correctness: None,
        valid_question: None,
        references: vec![],
    }
}

fn unanswerable(index: usize) -> Turn {
    Turn {
        index,
        question: format!("q{index}?"),
        answer_text: CANNOT_ANSWER.into(),
        answer_span: None,
        evidence_span: None,
        is_unanswerable: true,
        correctness: None,
        valid_question: None,
        references: vec![],
    }
}

// ---------------------------------------------------------------------------
// 1. relative-improvement fixture reproduction
// ---------------------------------------------------------------------------

// (method F1, no-history F1, reported delta %) for the in-domain results
// table: four low-resource columns, the full-data column, and the
// large-model column.
const MAIN_TABLE: &[(f64, f64, f64)] = &[
    // 1% column, anchor 45.0
    (43.9, 45.0, -2.4),
    (46.5, 45.0, 3.3),
    (42.3, 45.0, -6.0),
    (46.0, 45.0, 2.2),
    (44.5, 45.0, -1.1),
    (40.5, 45.0, -10.0),
    (48.2, 45.0, 7.1),
    // 5% column, anchor 50.0
    (51.2, 50.0, 2.4),
    (54.0, 50.0, 8.0),
    (54.4, 50.0, 8.8),
    (53.0, 50.0, 6.0),
    (50.8, 50.0, 1.6),
    (51.0, 50.0, 2.0),
    (57.4, 50.0, 14.8),
    // 10% column, anchor 52.9
    (53.4, 52.9, 0.9),
    (56.4, 52.9, 6.6),
    (57.2, 52.9, 8.1),
    (57.2, 52.9, 8.1),
    (55.0, 52.9, 4.0),
    (55.1, 52.9, 4.2),
    (61.3, 52.9, 15.9),
    // 20% column, anchor 55.4
    (57.8, 55.4, 4.3),
    (59.2, 55.4, 6.9),
    (60.6, 55.4, 9.4),
    (60.3, 55.4, 8.8),
    (59.8, 55.4, 7.9),
    (60.9, 55.4, 9.9),
    (64.6, 55.4, 16.6),
    // 100% column, anchor 60.4
    (65.8, 60.4, 8.9),
    (64.6, 60.4, 7.0),
    (67.3, 60.4, 11.4),
    (67.5, 60.4, 11.8),
    (69.0, 60.4, 14.2),
    (69.8, 60.4, 15.6),
    (70.2, 60.4, 16.2),
    // large-model column, anchor 65.6 (three rows consistent with it)
    (72.3, 65.6, 10.2),
    (69.0, 65.6, 5.2),
    (72.5, 65.6, 10.5),
];

// The remaining four rows of the large-model column were computed against
// the unrounded anchor (65.7); with the rounded 65.6 above they come out
// 0.17-0.21 high (e.g. (73.8 - 65.6) / 65.6 = 12.5 vs the reported 12.3).
// They are pinned to the anchor that reproduces the reported values.
const MAIN_TABLE_UNROUNDED_ANCHOR: &[(f64, f64, f64)] = &[
    (73.8, 65.7, 12.3),
    (73.2, 65.7, 11.4),
    (74.2, 65.7, 12.9),
    (74.7, 65.7, 13.7),
];

// Per-method low-resource F1 columns (1%, 5%, 10%, 20%) and the reported
// average improvement over those four columns.
const MAIN_TABLE_AVG: &[([f64; 4], f64)] = &[
    ([43.9, 51.2, 53.4, 57.8], 1.3),
    ([46.5, 54.0, 56.4, 59.2], 6.2),
    ([42.3, 54.4, 57.2, 60.6], 5.1),
    ([46.0, 53.0, 57.2, 60.3], 6.3),
    ([44.5, 50.8, 55.0, 59.8], 3.1),
    ([40.5, 51.0, 55.1, 60.9], 1.5),
    ([48.2, 57.4, 61.3, 64.6], 13.6),
];
const LOW_RESOURCE_ANCHORS: [f64; 4] = [45.0, 50.0, 52.9, 55.4];

// Domain-shift table: per-domain (method F1, no-history F1, reported
// delta %), eight domains per method, plus the reported per-method average.
const DOMAIN_ANCHORS: [f64; 8] = [54.8, 42.6, 50.3, 50.1, 58.2, 46.9, 45.0, 44.0];
const DOMAIN_TABLE: &[([f64; 8], [f64; 8], f64)] = &[
    (
        [62.2, 48.0, 55.3, 54.9, 59.9, 54.8, 52.0, 48.4],
        [13.5, 12.7, 9.9, 9.6, 2.9, 16.8, 15.6, 10.0],
        11.4,
    ),
    (
        [60.1, 47.7, 55.0, 54.8, 60.9, 44.6, 43.2, 40.9],
        [9.7, 12.0, 9.3, 9.4, 4.6, -4.9, -4.0, -7.0],
        3.6,
    ),
    (
        [62.7, 49.0, 56.7, 55.2, 59.4, 52.0, 49.1, 46.4],
        [14.4, 15.0, 12.7, 10.2, 2.1, 10.9, 9.1, 5.5],
        10.0,
    ),
    (
        [62.7, 51.5, 58.2, 57.0, 63.6, 53.7, 51.1, 48.6],
        [14.4, 20.9, 15.7, 13.8, 9.3, 14.5, 13.6, 10.5],
        14.1,
    ),
    (
        [61.8, 50.5, 56.6, 55.4, 60.9, 45.0, 45.1, 45.1],
        [12.8, 18.5, 12.5, 10.6, 4.6, -4.1, 0.2, 2.5],
        7.2,
    ),
    (
        [56.6, 47.4, 55.4, 52.7, 61.7, 45.6, 45.8, 44.7],
        [3.3, 11.3, 10.1, 5.2, 6.0, -2.8, 1.8, 1.6],
        4.6,
    ),
    (
        [66.7, 56.4, 61.8, 60.8, 67.5, 53.3, 51.8, 50.1],
        [21.7, 32.4, 22.9, 21.4, 16.0, 13.6, 15.1, 13.9],
        19.6,
    ),
];

#[test]
fn criterion_1_delta_fixture_reproduction() {
    criterion(1, "delta fixture reproduction", || {
        let start = Instant::now();
        let mut failures = String::new();
        for &(method, anchor, reported) in MAIN_TABLE {
            let got = delta_pct(method, anchor).map_err(|e| e.to_string())?;
            if (got - reported).abs() > 0.05 {
                let _ = writeln!(
                    failures,
                    "main table ({method}, {anchor}): got {got:.4}, reported {reported}"
                );
            }
        }
        for &(method, anchor, reported) in MAIN_TABLE_UNROUNDED_ANCHOR {
            let got = delta_pct(method, anchor).map_err(|e| e.to_string())?;
            if (got - reported).abs() > 0.05 {
                let _ = writeln!(
                    failures,
                    "main table / unrounded anchor ({method}, {anchor}): got {got:.4}, reported {reported}"
                );
            }
            // the rounded anchor provably does not reproduce these rows
            let rounded = delta_pct(method, 65.6).map_err(|e| e.to_string())?;
            if (rounded - reported).abs() <= 0.05 {
                let _ = writeln!(
                    failures,
                    "({method}, 65.6) unexpectedly reproduces {reported}"
                );
            }
        }
        for &(columns, reported_avg) in MAIN_TABLE_AVG {
            let deltas: Vec<f64> = columns
                .iter()
                .zip(LOW_RESOURCE_ANCHORS)
                .map(|(&m, b)| delta_pct(m, b).unwrap())
                .collect();
            let avg = deltas.iter().sum::<f64>() / deltas.len() as f64;
            if (avg - reported_avg).abs() > 0.05 {
                let _ = writeln!(
                    failures,
                    "main table avg: got {avg:.4}, reported {reported_avg}"
                );
            }
        }
        for &(f1s, reported, reported_avg) in DOMAIN_TABLE {
            let mut deltas = Vec::new();
            for ((m, b), pub_delta) in f1s.iter().zip(DOMAIN_ANCHORS).zip(reported) {
                let got = delta_pct(*m, b).map_err(|e| e.to_string())?;
                deltas.push(got);
                if (got - pub_delta).abs() > 0.1 {
                    let _ = writeln!(
                        failures,
                        "domain table ({m}, {b}): got {got:.4}, reported {pub_delta}"
                    );
                }
            }
            let avg = deltas.iter().sum::<f64>() / deltas.len() as f64;
            if (avg - reported_avg).abs() > 0.1 {
                let _ = writeln!(
                    failures,
                    "domain table avg: got {avg:.4}, reported {reported_avg}"
                );
            }
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs_f64() >= 1.0 {
            let _ = writeln!(failures, "fixtures took {elapsed:?}, budget is 1 s");
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(failures)
        }
    });
}

// ---------------------------------------------------------------------------
// 2. prompt-insertion round trip
// ---------------------------------------------------------------------------

const PASSAGE_ALPHABET: &[char] = &[
    'a', 'b', 'c', 'd', 'e', 'f', 'g', 'h', 'i', 'j', 'k', 'l', 'm', 'n', 'o', 'p', 'q', 'r', 's',
    't', 'u', 'v', 'w', 'x', 'y', 'z', ' ', ' ', ' ', '.', ',', ';', 'é', 'ü', '中',
];

fn random_passage(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let len = rng.gen_range(min..=max);
    (0..len)
        .map(|_| PASSAGE_ALPHABET[rng.gen_range(0..PASSAGE_ALPHABET.len())])
        .collect()
}

struct RoundTripCase {
    example: Example,
    cfg: MarcqapConfig,
    limit: usize,
    expected_passage: String,
    expected_spans: Vec<(usize, usize, usize)>,
}

fn gen_roundtrip_case(rng: &mut ChaCha8Rng) -> RoundTripCase {
    let mut passage = random_passage(rng, 50, 5000);
    if rng.gen_bool(0.1) {
        passage.push_str(" CANNOTANSWER");
    }
    let plen = char_len(&passage);

    let history_len = rng.gen_range(0..=12);
    let k = history_len + 1;
    let mut unanswerable_left = 2;
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut overlaps_left = 3;
    let mut history = Vec::with_capacity(history_len);
    for j in 1..=history_len {
        if unanswerable_left > 0 && rng.gen_bool(0.15) {
            unanswerable_left -= 1;
            history.push(unanswerable(j));
            continue;
        }
        let (start, end) = if overlaps_left > 0 && !spans.is_empty() && rng.gen_bool(0.5) {
            // deliberately overlap or nest with an earlier span
            overlaps_left -= 1;
            let &(prev_start, prev_end) = &spans[rng.gen_range(0..spans.len())];
            let start = rng.gen_range(prev_start..prev_end);
            let max_end = (prev_end + rng.gen_range(0..30)).min(plen);
            let end = rng.gen_range(start + 1..=max_end.max(start + 1)).min(plen);
            (start, end.max(start + 1))
        } else {
            let start = rng.gen_range(0..plen - 1);
            let end = rng.gen_range(start + 1..=(start + 40).min(plen));
            (start, end)
        };
        spans.push((start, end));
        let answer = char_slice(&passage, start, end).unwrap().to_string();
        history.push(turn(j, &format!("q{j}?"), &answer, Some((start, end))));
    }

    let cfg = MarcqapConfig {
        index_mode: if rng.gen_bool(0.5) {
            IndexMode::ReverseOneBased
        } else {
            IndexMode::ReverseZeroBased
        },
        ..MarcqapConfig::default()
    };
    let limit = rng.gen_range(0..=14);

    // expected values derived independently of the builder
    let expected_passage = if passage.ends_with(CANNOT_ANSWER) {
        passage.clone()
    } else {
        format!("{passage} {CANNOT_ANSWER}")
    };
    let suffix_len = char_len(CANNOT_ANSWER);
    let total = char_len(&expected_passage);
    let kept = history.len().min(limit);
    let expected_spans: Vec<(usize, usize, usize)> = history[history.len() - kept..]
        .iter()
        .map(|t| {
            if t.is_unanswerable {
                (t.index, total - suffix_len, total)
            } else {
                let (s, e) = t.answer_span.unwrap();
                (t.index, s, e)
            }
        })
        .collect();

    RoundTripCase {
        example: Example {
            conversation_id: "rt".into(),
            k,
            passage,
            history,
            question: "current?".into(),
            gold_references: vec!["x".into()],
            gold_unanswerable: false,
            domain: "d".into(),
            label_correct: None,
            label_valid_question: None,
        },
        cfg,
        limit,
        expected_passage,
        expected_spans,
    }
}

#[test]
fn criterion_2_marcqap_roundtrip() {
    criterion(2, "prompt-insertion round trip", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
        let cases = 1200;
        for case_idx in 0..cases {
            let case = gen_roundtrip_case(&mut rng);
            let built = build_marcqap(&case.example, &case.cfg, case.limit)
                .map_err(|e| format!("case {case_idx}: build failed: {e}"))?;
            let (recovered, spans) = strip_markers(&built.input.passage, &case.cfg, case.example.k)
                .map_err(|e| format!("case {case_idx}: strip failed: {e}"))?;
            if recovered != case.expected_passage {
                return Err(format!(
                    "case {case_idx}: recovered passage differs\nexpected: {:?}\ngot:      {:?}",
                    case.expected_passage, recovered
                ));
            }
            let mut got = spans;
            let mut expected = case.expected_spans.clone();
            got.sort_unstable();
            expected.sort_unstable();
            if got != expected {
                return Err(format!(
                    "case {case_idx}: span multiset differs\nexpected: {expected:?}\ngot:      {got:?}"
                ));
            }
        }
        let elapsed = start.elapsed();
        if elapsed.as_secs_f64() >= 10.0 {
            return Err(format!("{cases} cases took {elapsed:?}, budget is 10 s"));
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 3. F1 oracle equivalence
// ---------------------------------------------------------------------------

/// Independent normalization: char-wise scan instead of split/filter/join.
fn oracle_tokens(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        for lc in c.to_lowercase() {
            if lc.is_ascii_punctuation() {
                continue;
            }
            if lc.is_whitespace() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            } else {
                cur.push(lc);
            }
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words.retain(|w| w != "a" && w != "an" && w != "the");
    words
}

/// Independent bag F1: sorted two-pointer multiset intersection.
fn oracle_token_f1(pred: &str, gold: &str) -> f64 {
    let mut p = oracle_tokens(pred);
    let mut g = oracle_tokens(gold);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    p.sort_unstable();
    g.sort_unstable();
    let (mut i, mut j, mut common) = (0usize, 0usize, 0usize);
    while i < p.len() && j < g.len() {
        match p[i].cmp(&g[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

const ANSWER_VOCAB: &[&str] = &[
    "the",
    "a",
    "an",
    "Holocaust",
    "industry",
    "critics",
    "Prague",
    "philosophy",
    "Tesla",
    "moved",
    "Alan",
    "Dershowitz",
    "Omer",
    "Bartov",
    "history,",
    "Novick.",
    "PRAGUE",
    "",
];

fn random_answer(rng: &mut ChaCha8Rng) -> String {
    let words = rng.gen_range(0..6);
    (0..words)
        .map(|_| ANSWER_VOCAB[rng.gen_range(0..ANSWER_VOCAB.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
fn criterion_3_f1_oracle_equivalence() {
    criterion(3, "word-level F1 oracle equivalence", || {
        // hand-derived fixtures
        let fixtures = [
            ("Alan Dershowitz", "Omer Bartov", 0.0),
            ("the Holocaust industry", "Holocaust industry critics", 0.8),
            ("Prague", "Prague", 1.0),
        ];
        for (pred, gold, expected) in fixtures {
            let got = token_f1(pred, gold);
            if (got - expected).abs() > 1e-12 {
                return Err(format!(
                    "fixture ({pred:?}, {gold:?}): got {got}, expected {expected}"
                ));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
        let mut disagreements = 0;
        for _ in 0..1500 {
            let pred = random_answer(&mut rng);
            let gold = random_answer(&mut rng);
            if token_f1(&pred, &gold) != oracle_token_f1(&pred, &gold) {
                disagreements += 1;
            }
            // max-over-references path
            let refs: Vec<String> = (0..rng.gen_range(1..4))
                .map(|_| random_answer(&mut rng))
                .collect();
            let got = example_f1(&pred, &refs, false);
            let oracle = refs
                .iter()
                .map(|r| oracle_token_f1(&pred, r))
                .fold(0.0, f64::max);
            if got != oracle {
                disagreements += 1;
            }
        }
        if disagreements > 0 {
            return Err(format!("{disagreements} oracle disagreements"));
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 4. highlight-map oracle equivalence
// ---------------------------------------------------------------------------

/// Independent whitespace tokenizer over a char vector.
fn oracle_token_ranges(passage: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = passage.chars().collect();
    let mut ranges = Vec::new();
    let mut start = None;
    for (i, c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                ranges.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        ranges.push((s, chars.len()));
    }
    ranges
}

/// Per-character oracle: paint each covered char with the maximum covering
/// turn index (most recent wins), then label each token from its chars.
fn oracle_maps(ex: &Example, limit: usize) -> (Vec<usize>, Vec<usize>) {
    let plen = char_len(&ex.passage);
    let mut cover = vec![0usize; plen];
    let kept = ex.history.len().min(limit);
    for t in &ex.history[ex.history.len() - kept..] {
        if t.is_unanswerable {
            continue;
        }
        let (s, e) = t.answer_span.expect("generator always sets spans");
        for c in cover.iter_mut().take(e.min(plen)).skip(s) {
            *c = (*c).max(t.index);
        }
    }
    let mut hae = Vec::new();
    let mut poshae = Vec::new();
    for (s, e) in oracle_token_ranges(&ex.passage) {
        let label = cover[s..e].iter().copied().max().unwrap_or(0);
        poshae.push(label);
        hae.push(usize::from(label != 0));
    }
    (hae, poshae)
}

#[test]
fn criterion_4_highlight_map_oracle() {
    criterion(4, "highlight-map oracle equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
        for case_idx in 0..600 {
            let passage = random_passage(&mut rng, 20, 400);
            let plen = char_len(&passage);
            let history_len = rng.gen_range(0..=8);
            let history: Vec<Turn> = (1..=history_len)
                .map(|j| {
                    if rng.gen_bool(0.2) {
                        unanswerable(j)
                    } else {
                        let start = rng.gen_range(0..plen - 1);
                        let end = rng.gen_range(start + 1..=(start + 25).min(plen));
                        let answer = char_slice(&passage, start, end).unwrap().to_string();
                        turn(j, &format!("q{j}?"), &answer, Some((start, end)))
                    }
                })
                .collect();
            let ex = Example {
                conversation_id: "hm".into(),
                k: history_len + 1,
                passage,
                history,
                question: "q?".into(),
                gold_references: vec!["x".into()],
                gold_unanswerable: false,
                domain: "d".into(),
                label_correct: None,
                label_valid_question: None,
            };
            let limit = rng.gen_range(0..=10);
            let (oracle_hae, oracle_poshae) = oracle_maps(&ex, limit);
            let hae = build_hae_map(&ex, limit).input.token_annotations.unwrap();
            let poshae = build_poshae_map(&ex, limit)
                .input
                .token_annotations
                .unwrap();
            if hae != oracle_hae {
                return Err(format!("case {case_idx}: binary map disagrees with oracle"));
            }
            if poshae != oracle_poshae {
                return Err(format!(
                    "case {case_idx}: positional map disagrees with oracle"
                ));
            }
            let derived: Vec<usize> = poshae.iter().map(|&t| usize::from(t != 0)).collect();
            if hae != derived {
                return Err(format!(
                    "case {case_idx}: binary map != thresholded positional map"
                ));
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 5. truncation / sampling determinism
// ---------------------------------------------------------------------------

fn synthetic_corpus(count: usize, turns: usize, passage_chars: usize) -> Vec<Conversation> {
    let words = [
        "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    ];
    (0..count)
        .map(|i| {
            let mut passage = String::with_capacity(passage_chars + 8);
            let mut w = i;
            while passage.len() < passage_chars {
                passage.push_str(words[w % words.len()]);
                passage.push(' ');
                w += 1;
            }
            let passage = passage.trim_end().to_string();
            let turns: Vec<Turn> = (1..=turns)
                .map(|j| {
                    // token-aligned span sliding with the turn number
                    let start = (j * 13) % (char_len(&passage) / 2);
                    let end = start + 5;
                    let answer = char_slice(&passage, start, end).unwrap().to_string();
                    turn(j, &format!("q{j} of c{i}?"), &answer, Some((start, end)))
                })
                .collect();
            Conversation {
                id: format!("c{i}"),
                domain: "wikipedia".into(),
                passage,
                passage_has_no_answer_suffix: false,
                turns,
            }
        })
        .collect()
}

#[test]
fn criterion_5_truncation_and_sampling_determinism() {
    criterion(5, "truncation composition and sampling determinism", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0005);
        for _ in 0..300 {
            let len = rng.gen_range(0..15);
            let history: Vec<Turn> = (1..=len).map(|j| turn(j, "q", "a", None)).collect();
            let a = rng.gen_range(0..18);
            let b = rng.gen_range(0..18);
            let two_step = truncate_history(truncate_history(&history, a), b);
            let one_step = truncate_history(&history, a.min(b));
            if two_step != one_step {
                return Err(format!(
                    "composition law violated for len {len}, a {a}, b {b}"
                ));
            }
        }

        // in-process byte stability
        let corpus = synthetic_corpus(60, 3, 120);
        let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
        let full = dir.path().join("corpus.jsonl");
        cqakit::corpus::write_conversations(&full, &corpus).map_err(|e| e.to_string())?;
        let out1 = dir.path().join("s1.jsonl");
        let out2 = dir.path().join("s2.jsonl");
        let sampled1 = sample_fraction(&corpus, 0.25, 99).map_err(|e| e.to_string())?;
        let sampled2 = sample_fraction(&corpus, 0.25, 99).map_err(|e| e.to_string())?;
        cqakit::corpus::write_conversations(&out1, &sampled1).map_err(|e| e.to_string())?;
        cqakit::corpus::write_conversations(&out2, &sampled2).map_err(|e| e.to_string())?;
        let bytes1 = std::fs::read(&out1).map_err(|e| e.to_string())?;
        let bytes2 = std::fs::read(&out2).map_err(|e| e.to_string())?;
        if bytes1 != bytes2 {
            return Err("in-process sampling not byte-stable".into());
        }

        // across process restarts
        for out in ["p1.jsonl", "p2.jsonl"] {
            let status = std::process::Command::new(env!("CARGO_BIN_EXE_cqakit"))
                .args([
                    "sample",
                    "--in",
                    full.to_str().unwrap(),
                    "--out",
                    dir.path().join(out).to_str().unwrap(),
                    "--fraction",
                    "0.25",
                    "--seed",
                    "99",
                ])
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err("sample subprocess failed".into());
            }
        }
        let proc1 = std::fs::read(dir.path().join("p1.jsonl")).map_err(|e| e.to_string())?;
        let proc2 = std::fs::read(dir.path().join("p2.jsonl")).map_err(|e| e.to_string())?;
        if proc1 != proc2 {
            return Err("sampling not byte-stable across process restarts".into());
        }
        if proc1 != bytes1 {
            return Err("subprocess sample differs from in-process sample".into());
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 6. chunking properties
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_chunking_properties() {
    criterion(6, "chunk coverage and partial detection", || {
        let hand = chunk_tokens(10, 4, 2).map_err(|e| e.to_string())?;
        if hand != vec![(0, 4), (2, 6), (4, 8), (6, 10)] {
            return Err(format!("hand fixture yielded {hand:?}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0006);
        for case_idx in 0..500 {
            let len = rng.gen_range(0..300);
            let window = rng.gen_range(1..30);
            let stride = rng.gen_range(1..=window);
            let chunks = chunk_tokens(len, window, stride).map_err(|e| e.to_string())?;
            let mut covered = vec![false; len];
            for &(s, e) in &chunks {
                if e - s > window || e > len {
                    return Err(format!("case {case_idx}: bad chunk ({s}, {e})"));
                }
                for flag in &mut covered[s..e] {
                    *flag = true;
                }
            }
            if !covered.iter().all(|&c| c) {
                return Err(format!("case {case_idx}: coverage hole"));
            }
            for w in chunks.windows(2) {
                if w[1].0 - w[0].0 != stride {
                    return Err(format!("case {case_idx}: stride violated: {:?}", w));
                }
            }
            // partial detection vs brute force on random spans
            for _ in 0..5 {
                let span_s = rng.gen_range(0..300);
                let span_e = span_s + rng.gen_range(1..20);
                for &chunk in &chunks {
                    let inter = (span_s.max(chunk.0)..span_e.min(chunk.1)).count();
                    let brute = inter > 0 && inter != span_e - span_s;
                    if chunk_is_partial(chunk, (span_s, span_e)) != brute {
                        return Err(format!(
                            "case {case_idx}: partial mismatch chunk {chunk:?} span ({span_s}, {span_e})"
                        ));
                    }
                }
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 7. significance oracle
// ---------------------------------------------------------------------------

/// Log-gamma (Lanczos), used by the independent p-value oracle.
fn gammln(xx: f64) -> f64 {
    const COF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let x = xx;
    let mut y = xx;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for c in COF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAXIT: usize = 300;
    const EPS: f64 = 3.0e-14;
    const FPMIN: f64 = 1.0e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAXIT {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function.
fn betai(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let bt = (gammln(a + b) - gammln(a) - gammln(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p for a t statistic with `df` degrees of freedom.
fn oracle_p(t: f64, df: f64) -> f64 {
    betai(df / 2.0, 0.5, df / (df + t * t))
}

/// Independent paired-t computation.
fn oracle_paired_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let t = mean / (var / n).sqrt();
    (t, oracle_p(t, n - 1.0))
}

#[test]
fn criterion_7_significance_oracle() {
    criterion(7, "paired t-test against reference oracle", || {
        // sanity-check the oracle itself against frozen reference values
        let frozen: [(&[f64], &[f64], f64, f64); 2] = [
            (
                &[0.5, 0.6, 0.7, 0.8, 0.9],
                &[0.4, 0.65, 0.6, 0.85, 0.8],
                1.0886621079036347,
                0.33750185654036463,
            ),
            (
                &[0.33, 0.67, 0.5, 0.25, 0.75, 0.6, 0.4],
                &[0.3, 0.7, 0.45, 0.3, 0.7, 0.65, 0.35],
                0.3920312801169887,
                0.7085812810943475,
            ),
        ];
        for (a, b, t_ref, p_ref) in frozen {
            let (t, p) = oracle_paired_t(a, b);
            if (t - t_ref).abs() > 1e-9 || (p - p_ref).abs() > 1e-9 {
                return Err(format!(
                    "oracle disagrees with frozen reference: t {t} vs {t_ref}, p {p} vs {p_ref}"
                ));
            }
        }

        let identical = [0.2, 0.4, 0.9, 0.5];
        let (t, p) = paired_t_test(&identical, &identical).map_err(|e| e.to_string())?;
        if t != 0.0 || p != 1.0 {
            return Err(format!("identical lists gave t {t}, p {p}"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0007);
        for case_idx in 0..20 {
            let n = rng.gen_range(5..60);
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let b: Vec<f64> = a
                .iter()
                .map(|x| (x + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0))
                .collect();
            let (t, p) = paired_t_test(&a, &b).map_err(|e| e.to_string())?;
            let (t_oracle, p_oracle) = oracle_paired_t(&a, &b);
            if (t - t_oracle).abs() > 1e-9 {
                return Err(format!("case {case_idx}: t {t} vs oracle {t_oracle}"));
            }
            if (p - p_oracle).abs() > 1e-6 {
                return Err(format!("case {case_idx}: p {p} vs oracle {p_oracle}"));
            }
        }
        Ok(())
    });
}

// ---------------------------------------------------------------------------
// 8. batch-build throughput and stability
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_build_throughput() {
    criterion(8, "batch build throughput and byte stability", || {
        let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
        let corpus_path = dir.path().join("synthetic.jsonl");
        // 1250 conversations x 8 turns = 10,000 examples over ~2000-char passages
        let corpus = synthetic_corpus(1250, 8, 2000);
        cqakit::corpus::write_conversations(&corpus_path, &corpus).map_err(|e| e.to_string())?;

        let out1 = dir.path().join("built1.jsonl");
        let args = |out: &std::path::Path| cqakit::cli::BuildArgs {
            strategy: cqakit::strategies::Strategy::Marcqap,
            input: corpus_path.clone(),
            output: out.to_path_buf(),
            history_limit: None,
            rewrites: None,
            marker_config: None,
            config: None,
            seed: None,
            filter_noisy: false,
        };
        let start = Instant::now();
        let summary = cqakit::cli::cmd_build(&args(&out1)).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed();
        if summary.records != 10_000 {
            return Err(format!("expected 10000 records, built {}", summary.records));
        }
        if elapsed.as_secs_f64() >= 10.0 {
            return Err(format!(
                "build of 10k examples took {elapsed:?}, budget is 10 s"
            ));
        }
        let out2 = dir.path().join("built2.jsonl");
        cqakit::cli::cmd_build(&args(&out2)).map_err(|e| e.to_string())?;
        let bytes1 = std::fs::read(&out1).map_err(|e| e.to_string())?;
        let bytes2 = std::fs::read(&out2).map_err(|e| e.to_string())?;
        if bytes1 != bytes2 {
            return Err("build output not byte-identical across runs".into());
        }
        println!(
            "  built {} records in {:.2}s",
            summary.records,
            elapsed.as_secs_f64()
        );
        Ok(())
    });
}
