//! Word-level F1 scoring, relative-improvement reporting, per-domain
//! aggregation, and paired significance testing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::corpus::CANNOT_ANSWER;
use crate::error::{Error, Result};

/// Normalize an answer for scoring: lowercase, strip ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_counts(normalized: &str) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for tok in normalized.split_whitespace() {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

/// Bag-of-tokens F1 over normalized answers. Both sides empty scores 1.0,
/// exactly one side empty scores 0.0.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let pred_norm = normalize_answer(pred);
    let gold_norm = normalize_answer(gold);
    let pred_counts = token_counts(&pred_norm);
    let gold_counts = token_counts(&gold_norm);
    let pred_total: usize = pred_counts.values().sum();
    let gold_total: usize = gold_counts.values().sum();
    if pred_total == 0 && gold_total == 0 {
        return 1.0;
    }
    if pred_total == 0 || gold_total == 0 {
        return 0.0;
    }
    let common: usize = pred_counts
        .iter()
        .map(|(tok, &n)| n.min(*gold_counts.get(tok).unwrap_or(&0)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred_total as f64;
    let recall = common as f64 / gold_total as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Score one example: max token F1 over the references, or exact-match on
/// the canonical no-answer token when the gold label is unanswerable.
pub fn example_f1(pred: &str, references: &[String], gold_unanswerable: bool) -> f64 {
    if gold_unanswerable {
        return if normalize_answer(pred) == normalize_answer(CANNOT_ANSWER) {
            1.0
        } else {
            0.0
        };
    }
    references
        .iter()
        .map(|r| token_f1(pred, r))
        .fold(0.0, f64::max)
}

/// Corpus score as a percentage: 100 x mean of the per-example F1s.
pub fn corpus_f1(per_example: &[f64]) -> Result<f64> {
    if per_example.is_empty() {
        return Err(Error::Metric("cannot average an empty score list".into()));
    }
    Ok(100.0 * per_example.iter().sum::<f64>() / per_example.len() as f64)
}

/// Relative F1 improvement over a baseline, in percent.
pub fn delta_pct(method_f1: f64, baseline_f1: f64) -> Result<f64> {
    if baseline_f1 <= 0.0 {
        return Err(Error::Metric(format!(
            "baseline F1 must be positive, got {baseline_f1}"
        )));
    }
    Ok(100.0 * (method_f1 - baseline_f1) / baseline_f1)
}

/// Two-sided paired Student's t-test over per-example scores.
///
/// Identical lists return `(0, 1)`. A constant nonzero difference has zero
/// variance; the limiting convention `(±inf, 0)` is reported.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Metric(
            "paired t-test needs at least two observations".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Metric(format!("t distribution: {e}")))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok((t, p))
}

/// A scored example with its grouping key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub conversation_id: String,
    pub turn_index: usize,
    pub domain: String,
    pub f1: f64,
}

/// Paired t-test result as reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub t_statistic: f64,
    pub p_value: f64,
}

/// Per-example score as reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerExampleScore {
    pub conversation_id: String,
    pub turn_index: usize,
    pub f1: f64,
}

/// Full evaluation report: corpus F1, optional improvement over a baseline,
/// per-domain breakdown, optional significance test, per-example scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_corpus_f1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_domain: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_domain_baseline: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_domain_delta_pct: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_delta_pct: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<Significance>,
    pub per_example: Vec<PerExampleScore>,
}

fn group_f1(scored: &[&ScoredExample]) -> Result<f64> {
    let scores: Vec<f64> = scored.iter().map(|s| s.f1).collect();
    corpus_f1(&scores)
}

/// Build a report from scored examples, optionally against a baseline
/// scored on the same example keys, optionally broken down by domain.
pub fn build_report(
    method: &[ScoredExample],
    baseline: Option<&[ScoredExample]>,
    by_domain: bool,
) -> Result<EvalReport> {
    let scores: Vec<f64> = method.iter().map(|s| s.f1).collect();
    let overall = corpus_f1(&scores)?;
    let mut report = EvalReport {
        corpus_f1: overall,
        baseline_corpus_f1: None,
        delta_pct: None,
        by_domain: BTreeMap::new(),
        by_domain_baseline: BTreeMap::new(),
        by_domain_delta_pct: BTreeMap::new(),
        avg_delta_pct: None,
        significance: None,
        per_example: method
            .iter()
            .map(|s| PerExampleScore {
                conversation_id: s.conversation_id.clone(),
                turn_index: s.turn_index,
                f1: s.f1,
            })
            .collect(),
    };

    let baseline_by_key: Option<HashMap<(&str, usize), f64>> = baseline.map(|b| {
        b.iter()
            .map(|s| ((s.conversation_id.as_str(), s.turn_index), s.f1))
            .collect()
    });
    if let (Some(b), Some(by_key)) = (baseline, &baseline_by_key) {
        let missing: Vec<String> = method
            .iter()
            .filter(|s| !by_key.contains_key(&(s.conversation_id.as_str(), s.turn_index)))
            .map(|s| format!("({}, {})", s.conversation_id, s.turn_index))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lookup(format!(
                "baseline scores missing for {} examples: {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        let base_scores: Vec<f64> = b.iter().map(|s| s.f1).collect();
        let base_overall = corpus_f1(&base_scores)?;
        report.baseline_corpus_f1 = Some(base_overall);
        report.delta_pct = Some(delta_pct(overall, base_overall)?);
    }

    if by_domain {
        let mut domains: BTreeMap<String, Vec<&ScoredExample>> = BTreeMap::new();
        for s in method {
            if s.domain.trim().is_empty() {
                return Err(Error::Metric(format!(
                    "example ({}, {}) lacks a domain label",
                    s.conversation_id, s.turn_index
                )));
            }
            domains.entry(s.domain.clone()).or_default().push(s);
        }
        let mut deltas = Vec::new();
        for (domain, members) in &domains {
            let method_f1 = group_f1(members)?;
            report.by_domain.insert(domain.clone(), method_f1);
            if let Some(by_key) = &baseline_by_key {
                let base_scores: Vec<f64> = members
                    .iter()
                    .map(|s| by_key[&(s.conversation_id.as_str(), s.turn_index)])
                    .collect();
                let base_f1 = corpus_f1(&base_scores)?;
                let delta = delta_pct(method_f1, base_f1)?;
                report.by_domain_baseline.insert(domain.clone(), base_f1);
                report.by_domain_delta_pct.insert(domain.clone(), delta);
                deltas.push(delta);
            }
        }
        if !deltas.is_empty() {
            report.avg_delta_pct = Some(deltas.iter().sum::<f64>() / deltas.len() as f64);
        }
    }
    Ok(report)
}

/// Per-domain F1 and improvement over the baseline, plus the unweighted
/// mean of the per-domain improvements.
pub fn domain_report(method: &[ScoredExample], baseline: &[ScoredExample]) -> Result<EvalReport> {
    build_report(method, Some(baseline), true)
}

impl EvalReport {
    /// Render the report as a small Markdown table.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let with_delta = self.delta_pct.is_some() || !self.by_domain_delta_pct.is_empty();
        if with_delta {
            out.push_str("| Domain | No-History F1 | F1 | Δ% |\n|---|---|---|---|\n");
        } else {
            out.push_str("| Domain | F1 |\n|---|---|\n");
        }
        let fmt_f1 = |v: f64| format!("{v:.1}");
        let fmt_delta = |v: f64| format!("{v:+.1}%");
        for (domain, f1) in &self.by_domain {
            if with_delta {
                let base = self
                    .by_domain_baseline
                    .get(domain)
                    .map(|v| fmt_f1(*v))
                    .unwrap_or_default();
                let delta = self
                    .by_domain_delta_pct
                    .get(domain)
                    .map(|v| fmt_delta(*v))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "| {domain} | {base} | {} | {delta} |\n",
                    fmt_f1(*f1)
                ));
            } else {
                out.push_str(&format!("| {domain} | {} |\n", fmt_f1(*f1)));
            }
        }
        if with_delta {
            let base = self.baseline_corpus_f1.map(fmt_f1).unwrap_or_default();
            let delta = self.delta_pct.map(fmt_delta).unwrap_or_default();
            out.push_str(&format!(
                "| Overall | {base} | {} | {delta} |\n",
                fmt_f1(self.corpus_f1)
            ));
            if let Some(avg) = self.avg_delta_pct {
                out.push_str(&format!("| Avg Δ% | | | {} |\n", fmt_delta(avg)));
            }
        } else {
            out.push_str(&format!("| Overall | {} |\n", fmt_f1(self.corpus_f1)));
        }
        if let Some(sig) = &self.significance {
            out.push_str(&format!(
                "\nPaired t-test: t = {:.4}, p = {:.6}\n",
                sig.t_statistic, sig.p_value
            ));
        }
        out
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub conversation_id: String,
    pub turn_index: usize,
    pub prediction: String,
}

/// Read a predictions JSONL file into a `(conversation_id, turn_index)` map.
pub fn read_predictions(path: &Path) -> Result<HashMap<(String, usize), String>> {
    let raw = fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("{}: line {}: {e}", path.display(), lineno + 1)))?;
        if map
            .insert(
                (rec.conversation_id.clone(), rec.turn_index),
                rec.prediction,
            )
            .is_some()
        {
            return Err(Error::Parse(format!(
                "{}: duplicate prediction for ({}, {})",
                path.display(),
                rec.conversation_id,
                rec.turn_index
            )));
        }
    }
    Ok(map)
}
