//! Deterministic conversation-level subsampling and setting assembly.

use clap::ValueEnum;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::strategies::Strategy;

/// Keep `round(fraction * |convs|)` conversations, drawn uniformly without
/// replacement with a seeded generator, in original corpus order.
///
/// Sampling happens at conversation level so that no example's history can
/// reference a turn that was sampled away.
pub fn sample_fraction(
    convs: &[Conversation],
    fraction: f64,
    seed: u64,
) -> Result<Vec<Conversation>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let n = convs.len();
    let keep = ((fraction * n as f64).round() as usize).min(n);
    let mut indices: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates, written out so the byte stream is pinned by
    // this crate rather than by a dependency's sampling algorithm
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..keep {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
    }
    let mut chosen = indices[..keep].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| convs[i].clone()).collect())
}

/// The five study settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    Standard,
    HighResource,
    LowResource,
    DomainShift,
    NoisyHistory,
}

/// Declarative description of a setting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingSpec {
    pub setting: SettingKind,
    /// Pre-training corpora (high-resource only).
    #[serde(default)]
    pub pretrain: Vec<String>,
    /// Training corpora; defaults per setting when empty.
    #[serde(default)]
    pub train: Vec<String>,
    /// Evaluation corpora; defaults per setting when empty.
    #[serde(default)]
    pub eval: Vec<String>,
    #[serde(default)]
    pub fraction: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub history_limit: Option<usize>,
}

/// Resolved, reproducible binding of one setting run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingManifest {
    pub setting: SettingKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pretrain_sources: Vec<String>,
    pub train_sources: Vec<String>,
    pub eval_sources: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval_domains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub strategies: Vec<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conversation_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_count: Option<usize>,
}

/// Domain labels of the out-of-domain evaluation sets.
pub const DOMAIN_SHIFT_DOMAINS: [&str; 8] = [
    "children_stories",
    "literature",
    "mid_high_school",
    "news",
    "wikipedia",
    "cooking",
    "movies",
    "travel",
];

/// Bind a setting spec into a manifest, filling in the per-setting default
/// corpora and validating the parameters the setting requires.
pub fn assemble_setting(spec: &SettingSpec) -> Result<SettingManifest> {
    let default = |given: &[String], fallback: &[&str]| -> Vec<String> {
        if given.is_empty() {
            fallback.iter().map(|s| s.to_string()).collect()
        } else {
            given.to_vec()
        }
    };
    let (pretrain, train, eval, eval_domains): (
        Vec<String>,
        Vec<String>,
        Vec<String>,
        Vec<String>,
    ) = match spec.setting {
        SettingKind::Standard => (
            vec![],
            default(&spec.train, &["quac-train"]),
            default(&spec.eval, &["quac-dev"]),
            vec![],
        ),
        SettingKind::HighResource => (
            default(&spec.pretrain, &["coqa-train"]),
            default(&spec.train, &["quac-train"]),
            default(&spec.eval, &["quac-dev"]),
            vec![],
        ),
        SettingKind::LowResource => {
            let fraction = spec.fraction.ok_or_else(|| {
                Error::Config("the low-resource setting requires a fraction".into())
            })?;
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!(
                    "fraction must lie in (0, 1], got {fraction}"
                )));
            }
            (
                vec![],
                default(&spec.train, &["quac-train"]),
                default(&spec.eval, &["quac-dev"]),
                vec![],
            )
        }
        SettingKind::DomainShift => {
            let eval = if spec.eval.is_empty() {
                DOMAIN_SHIFT_DOMAINS
                    .iter()
                    .map(|d| {
                        let source = if ["cooking", "movies", "travel"].contains(d) {
                            "doqa"
                        } else {
                            "coqa"
                        };
                        format!("{source}-{d}")
                    })
                    .collect()
            } else {
                spec.eval.clone()
            };
            (
                vec![],
                default(&spec.train, &["quac-train"]),
                eval,
                DOMAIN_SHIFT_DOMAINS.iter().map(|d| d.to_string()).collect(),
            )
        }
        SettingKind::NoisyHistory => (
            vec![],
            default(&spec.train, &["quac-train"]),
            default(&spec.eval, &["quac-nh"]),
            vec![],
        ),
    };
    Ok(SettingManifest {
        setting: spec.setting,
        pretrain_sources: pretrain,
        train_sources: train,
        eval_sources: eval,
        eval_domains,
        fraction: if spec.setting == SettingKind::LowResource {
            spec.fraction
        } else {
            None
        },
        seed: spec.seed,
        strategies: spec.strategies.clone(),
        history_limit: spec.history_limit,
        conversation_count: None,
        example_count: None,
    })
}

impl SettingManifest {
    /// Record the actual corpus size this manifest was realized over.
    pub fn with_counts(mut self, convs: &[Conversation]) -> Self {
        self.conversation_count = Some(convs.len());
        self.example_count = Some(convs.iter().map(|c| c.turns.len()).sum());
        self
    }
}
