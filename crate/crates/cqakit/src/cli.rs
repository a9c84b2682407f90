//! Batch command-line driver.
//!
//! Every command is deterministic given identical inputs, flags, and seeds,
//! and echoes its run parameters into a `<out>.manifest.json` file next to
//! its output. Errors are printed to stderr as `error[<category>]: ...`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chunking::{
    chunk_tokens, partial_highlight_stats, span_to_token_coords, ChunkedExample, HighlightStats,
};
use crate::corpus::{
    build_examples, filter_noisy, parse_dataset, read_conversations, write_conversations,
    DatasetFormat, Example,
};
use crate::error::{Error, Result};
use crate::history::HistoryTemplate;
use crate::metrics::{
    build_report, example_f1, paired_t_test, read_predictions, EvalReport, ScoredExample,
    Significance,
};
use crate::sampling::sample_fraction;
use crate::strategies::{
    build_concat, build_excord_pair, build_hae_map, build_marcqap, build_marcqap_variant,
    build_no_history, build_poshae_map, build_rewrite, build_rewrite_c, marcqap_targets,
    tokenize_with_offsets, BuiltInput, MarcqapConfig, MarcqapVariant, RewriteTable, Strategy,
};

#[derive(Debug, Parser)]
#[command(
    name = "cqakit",
    version,
    about = "Conversational-QA corpus engineering and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a dataset file into the normalized conversation model.
    Ingest(IngestArgs),
    /// Build model-ready inputs for a history-modeling strategy.
    Build(BuildArgs),
    /// Draw a deterministic conversation-level subset.
    Sample(SampleArgs),
    /// Score predictions against a gold corpus.
    Evaluate(EvaluateArgs),
    /// Report chunking / partial-highlighting statistics.
    Stats(StatsArgs),
}

/// Optional run-config file (JSON). Command-line flags override its values.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default)]
pub struct RunConfig {
    pub marker: Option<MarcqapConfig>,
    pub template: Option<HistoryTemplate>,
    pub history_limit: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfig {
    fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)?;
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn read_marker_config(path: &Path) -> Result<MarcqapConfig> {
    let raw = fs::read_to_string(path)?;
    serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_manifest(out: &Path, manifest: serde_json::Value) -> Result<()> {
    let path = manifest_path(out);
    fs::write(&path, format!("{:#}\n", manifest))?;
    Ok(())
}

/// Manifest location for an output file: `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn load_examples(path: &Path, apply_noisy_filter: bool) -> Result<Vec<Example>> {
    let convs = read_conversations(path)?;
    if convs.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no conversations found",
            path.display()
        )));
    }
    let mut examples = Vec::new();
    for conv in &convs {
        examples.extend(build_examples(conv));
    }
    if apply_noisy_filter {
        examples = filter_noisy(&examples)?;
    }
    Ok(examples)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input dataset format.
    #[arg(long, value_enum)]
    pub format: DatasetFormat,
    /// Source dataset file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Normalized corpus output (JSONL, one conversation per line).
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Report how many examples survive the noisy-history filter.
    #[arg(long)]
    pub filter_noisy: bool,
    /// Override the domain label of every ingested conversation.
    #[arg(long)]
    pub domain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub conversations: usize,
    pub examples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retained_examples: Option<usize>,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<IngestSummary> {
    let raw = fs::read_to_string(&args.input)?;
    let mut convs = parse_dataset(&raw, args.format)?;
    if convs.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no conversations found",
            args.input.display()
        )));
    }
    if let Some(domain) = &args.domain {
        for conv in &mut convs {
            conv.domain = domain.clone();
        }
    }
    let examples: usize = convs.iter().map(|c| c.turns.len()).sum();
    let retained_examples = if args.filter_noisy {
        let mut all = Vec::new();
        for conv in &convs {
            all.extend(build_examples(conv));
        }
        Some(filter_noisy(&all)?.len())
    } else {
        None
    };
    write_conversations(&args.output, &convs)?;
    let summary = IngestSummary {
        conversations: convs.len(),
        examples,
        retained_examples,
    };
    write_manifest(
        &args.output,
        json!({
            "command": "ingest",
            "format": format!("{:?}", args.format).to_lowercase(),
            "input": args.input.display().to_string(),
            "output": args.output.display().to_string(),
            "filter_noisy": args.filter_noisy,
            "domain_override": args.domain,
            "conversations": summary.conversations,
            "examples": summary.examples,
            "retained_examples": summary.retained_examples,
        }),
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// build
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// History-modeling strategy to build inputs for.
    #[arg(long, value_enum)]
    pub strategy: Strategy,
    /// Normalized corpus file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output JSONL of built inputs.
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Keep only the most recent N history turns (default: unlimited).
    #[arg(long)]
    pub history_limit: Option<usize>,
    /// Rewritten-question JSONL, required by rewrite / rewrite_c / excord.
    #[arg(
        long,
        required_if_eq_any([
            ("strategy", "rewrite"),
            ("strategy", "rewrite_c"),
            ("strategy", "excord"),
        ])
    )]
    pub rewrites: Option<PathBuf>,
    /// Marker configuration file (JSON).
    #[arg(long)]
    pub marker_config: Option<PathBuf>,
    /// Run-config file (JSON); explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for randomized variants.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Drop examples that fail the noisy-history filter before building.
    #[arg(long)]
    pub filter_noisy: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub records: usize,
    pub skipped_answers: usize,
}

fn built_records_for(
    ex: &Example,
    strategy: Strategy,
    cfg: &MarcqapConfig,
    template: &HistoryTemplate,
    limit: usize,
    rewrites: Option<&RewriteTable>,
    seed: Option<u64>,
) -> Result<(Vec<BuiltInput>, usize)> {
    let rewrite_for = |table: Option<&RewriteTable>| -> Result<String> {
        let table =
            table.ok_or_else(|| Error::Config("this strategy requires --rewrites".to_string()))?;
        Ok(table.get(&ex.conversation_id, ex.k)?.to_string())
    };
    let out = match strategy {
        Strategy::NoHistory => (vec![build_no_history(ex)], 0),
        Strategy::Concat => (vec![build_concat(ex, template, limit)], 0),
        Strategy::Rewrite => (vec![build_rewrite(ex, &rewrite_for(rewrites)?)], 0),
        Strategy::RewriteC => (
            vec![build_rewrite_c(
                ex,
                &rewrite_for(rewrites)?,
                template,
                limit,
            )],
            0,
        ),
        Strategy::Excord => {
            let (a, b) = build_excord_pair(ex, &rewrite_for(rewrites)?, template, limit);
            (vec![a, b], 0)
        }
        Strategy::Hae => {
            let built = build_hae_map(ex, limit);
            (vec![built.input], built.skipped_answers)
        }
        Strategy::Poshae => {
            let built = build_poshae_map(ex, limit);
            (vec![built.input], built.skipped_answers)
        }
        Strategy::Marcqap => {
            let built = build_marcqap(ex, cfg, limit)?;
            (vec![built.input], built.skipped_answers)
        }
        Strategy::MarcqapBare
        | Strategy::MarcqapRandom
        | Strategy::MarcqapSemantic
        | Strategy::MarcqapSemanticIndex
        | Strategy::MarcqapSemanticFull
        | Strategy::MarcqapC => {
            let variant = match strategy {
                Strategy::MarcqapBare => MarcqapVariant::Bare,
                Strategy::MarcqapRandom => MarcqapVariant::Random,
                Strategy::MarcqapSemantic => MarcqapVariant::Semantic,
                Strategy::MarcqapSemanticIndex => MarcqapVariant::SemanticIndex,
                Strategy::MarcqapSemanticFull => MarcqapVariant::SemanticFull,
                _ => MarcqapVariant::WithHistory,
            };
            let built = build_marcqap_variant(ex, variant, cfg, template, limit, seed)?;
            (vec![built.input], built.skipped_answers)
        }
    };
    Ok(out)
}

pub fn cmd_build(args: &BuildArgs) -> Result<BuildSummary> {
    let config = match &args.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    let cfg = match &args.marker_config {
        Some(path) => read_marker_config(path)?,
        None => config.marker.clone().unwrap_or_default(),
    };
    let template = config.template.clone().unwrap_or_default();
    let limit = args
        .history_limit
        .or(config.history_limit)
        .unwrap_or(usize::MAX);
    let seed = args.seed.or(config.seed);
    let rewrites = match &args.rewrites {
        Some(path) => Some(RewriteTable::read(path)?),
        None => None,
    };
    if args.strategy == Strategy::MarcqapRandom && seed.is_none() {
        return Err(Error::Config(
            "--strategy marcqap_random requires --seed for determinism".into(),
        ));
    }

    let examples = load_examples(&args.input, args.filter_noisy)?;
    let file = fs::File::create(&args.output)?;
    let mut out = BufWriter::new(file);
    let mut records = 0;
    let mut skipped_answers = 0;
    for (i, ex) in examples.iter().enumerate() {
        // decorrelate the randomized variant across examples while keeping
        // the run reproducible from the single --seed
        let example_seed = seed.map(|s| s.wrapping_add(i as u64));
        let (built, skipped) = built_records_for(
            ex,
            args.strategy,
            &cfg,
            &template,
            limit,
            rewrites.as_ref(),
            example_seed,
        )?;
        skipped_answers += skipped;
        for record in built {
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
            records += 1;
        }
    }
    out.flush()?;
    if skipped_answers > 0 {
        eprintln!("warning: skipped {skipped_answers} historic answers without usable spans");
    }
    let summary = BuildSummary {
        records,
        skipped_answers,
    };
    write_manifest(
        &args.output,
        json!({
            "command": "build",
            "strategy": serde_json::to_value(args.strategy)?,
            "input": args.input.display().to_string(),
            "output": args.output.display().to_string(),
            "history_limit": if limit == usize::MAX { None } else { Some(limit) },
            "seed": seed,
            "filter_noisy": args.filter_noisy,
            "marker_config": cfg,
            "template": template,
            "rewrites": args.rewrites.as_ref().map(|p| p.display().to_string()),
            "records": summary.records,
            "skipped_answers": summary.skipped_answers,
        }),
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Normalized corpus file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Subset corpus output.
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Fraction of conversations to retain, in (0, 1].
    #[arg(long)]
    pub fraction: f64,
    /// Sampling seed.
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampleSummary {
    pub conversations: usize,
    pub examples: usize,
}

pub fn cmd_sample(args: &SampleArgs) -> Result<SampleSummary> {
    let convs = read_conversations(&args.input)?;
    let subset = sample_fraction(&convs, args.fraction, args.seed)?;
    write_conversations(&args.output, &subset)?;
    let summary = SampleSummary {
        conversations: subset.len(),
        examples: subset.iter().map(|c| c.turns.len()).sum(),
    };
    write_manifest(
        &args.output,
        json!({
            "command": "sample",
            "input": args.input.display().to_string(),
            "output": args.output.display().to_string(),
            "fraction": args.fraction,
            "seed": args.seed,
            "source_conversations": convs.len(),
            "conversations": summary.conversations,
            "examples": summary.examples,
        }),
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predictions JSONL ({conversation_id, turn_index, prediction}).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Normalized gold corpus.
    #[arg(long)]
    pub gold: PathBuf,
    /// Baseline predictions for the improvement column.
    #[arg(long)]
    pub baseline_predictions: Option<PathBuf>,
    /// Break the report down by domain.
    #[arg(long)]
    pub by_domain: bool,
    /// Second predictions file to test against (paired t-test).
    #[arg(long)]
    pub significance: Option<PathBuf>,
    /// Score only examples that survive the noisy-history filter.
    #[arg(long)]
    pub filter_noisy: bool,
    /// JSON report path (default: <predictions>.report.json).
    #[arg(long)]
    pub out_json: Option<PathBuf>,
    /// Markdown report path (default: <predictions>.report.md).
    #[arg(long)]
    pub out_md: Option<PathBuf>,
}

fn score_against(
    examples: &[Example],
    predictions: &std::collections::HashMap<(String, usize), String>,
    label: &str,
) -> Result<Vec<ScoredExample>> {
    let mut missing = Vec::new();
    for ex in examples {
        if !predictions.contains_key(&(ex.conversation_id.clone(), ex.k)) {
            missing.push(format!("({}, {})", ex.conversation_id, ex.k));
        }
    }
    let known: std::collections::HashSet<(String, usize)> = examples
        .iter()
        .map(|ex| (ex.conversation_id.clone(), ex.k))
        .collect();
    let mut extra: Vec<String> = predictions
        .keys()
        .filter(|key| !known.contains(*key))
        .map(|(c, k)| format!("({c}, {k})"))
        .collect();
    extra.sort();
    if !missing.is_empty() || !extra.is_empty() {
        let cap = |mut keys: Vec<String>| {
            if keys.len() > 20 {
                let more = keys.len() - 20;
                keys.truncate(20);
                keys.push(format!("... {more} more"));
            }
            keys.join(", ")
        };
        let mut message = format!("{label}: prediction keys do not match the gold corpus.");
        if !missing.is_empty() {
            message.push_str(&format!(
                " Missing {} predictions: {}.",
                missing.len(),
                cap(missing)
            ));
        }
        if !extra.is_empty() {
            message.push_str(&format!(
                " {} predictions without gold examples: {}.",
                extra.len(),
                cap(extra)
            ));
        }
        return Err(Error::Lookup(message));
    }
    Ok(examples
        .iter()
        .map(|ex| {
            let pred = &predictions[&(ex.conversation_id.clone(), ex.k)];
            ScoredExample {
                conversation_id: ex.conversation_id.clone(),
                turn_index: ex.k,
                domain: ex.domain.clone(),
                f1: example_f1(pred, &ex.gold_references, ex.gold_unanswerable),
            }
        })
        .collect())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalReport> {
    let examples = load_examples(&args.gold, args.filter_noisy)?;
    let predictions = read_predictions(&args.predictions)?;
    let method = score_against(&examples, &predictions, "predictions")?;

    let baseline = match &args.baseline_predictions {
        Some(path) => Some(score_against(
            &examples,
            &read_predictions(path)?,
            "baseline predictions",
        )?),
        None => None,
    };
    let mut report = build_report(&method, baseline.as_deref(), args.by_domain)?;

    if let Some(path) = &args.significance {
        let other = score_against(
            &examples,
            &read_predictions(path)?,
            "significance predictions",
        )?;
        let a: Vec<f64> = method.iter().map(|s| s.f1).collect();
        let b: Vec<f64> = other.iter().map(|s| s.f1).collect();
        let (t_statistic, p_value) = paired_t_test(&a, &b)?;
        report.significance = Some(Significance {
            t_statistic,
            p_value,
        });
    }

    let out_json = args
        .out_json
        .clone()
        .unwrap_or_else(|| derived_path(&args.predictions, ".report.json"));
    let out_md = args
        .out_md
        .clone()
        .unwrap_or_else(|| derived_path(&args.predictions, ".report.md"));
    fs::write(
        &out_json,
        format!("{}\n", serde_json::to_string_pretty(&report)?),
    )?;
    fs::write(&out_md, report.to_markdown())?;
    write_manifest(
        &out_json,
        json!({
            "command": "evaluate",
            "predictions": args.predictions.display().to_string(),
            "gold": args.gold.display().to_string(),
            "baseline_predictions": args.baseline_predictions.as_ref().map(|p| p.display().to_string()),
            "significance": args.significance.as_ref().map(|p| p.display().to_string()),
            "by_domain": args.by_domain,
            "filter_noisy": args.filter_noisy,
            "examples": examples.len(),
            "corpus_f1": report.corpus_f1,
            "delta_pct": report.delta_pct,
        }),
    )?;
    Ok(report)
}

fn derived_path(base: &Path, suffix: &str) -> PathBuf {
    let mut name = base.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    base.with_file_name(name)
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Normalized corpus file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Chunk window, in tokens.
    #[arg(long)]
    pub window: usize,
    /// Chunk stride, in tokens.
    #[arg(long)]
    pub stride: usize,
    /// Keep only the most recent N history turns (default: unlimited).
    #[arg(long)]
    pub history_limit: Option<usize>,
    /// Marker configuration file (JSON).
    #[arg(long)]
    pub marker_config: Option<PathBuf>,
    /// Optional JSON report path.
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsSummary {
    pub examples: usize,
    pub window: usize,
    pub stride: usize,
    pub examples_split: f64,
    pub chunks_partial: f64,
    pub skipped_answers: usize,
}

pub fn cmd_stats(args: &StatsArgs) -> Result<StatsSummary> {
    let cfg = match &args.marker_config {
        Some(path) => read_marker_config(path)?,
        None => MarcqapConfig::default(),
    };
    let limit = args.history_limit.unwrap_or(usize::MAX);
    let examples = load_examples(&args.input, false)?;
    let mut batch = Vec::with_capacity(examples.len());
    let mut skipped_answers = 0;
    for ex in &examples {
        let targets = marcqap_targets(ex, &cfg, limit)?;
        skipped_answers += targets.skipped_answers;
        let tokens = tokenize_with_offsets(&targets.passage);
        let chunks = chunk_tokens(tokens.len(), args.window, args.stride)?;
        let spans = targets
            .spans
            .iter()
            .filter_map(|&(_, start, end)| span_to_token_coords(&tokens, (start, end)))
            .collect();
        batch.push(ChunkedExample { chunks, spans });
    }
    let HighlightStats {
        examples_split,
        chunks_partial,
    } = partial_highlight_stats(&batch);
    let summary = StatsSummary {
        examples: examples.len(),
        window: args.window,
        stride: args.stride,
        examples_split,
        chunks_partial,
        skipped_answers,
    };
    if let Some(out) = &args.output {
        fs::write(
            out,
            format!("{}\n", serde_json::to_string_pretty(&summary)?),
        )?;
        write_manifest(
            out,
            json!({
                "command": "stats",
                "input": args.input.display().to_string(),
                "output": out.display().to_string(),
                "window": args.window,
                "stride": args.stride,
                "history_limit": args.history_limit,
            }),
        )?;
    }
    Ok(summary)
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

/// Run a parsed command, printing its summary lines to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let summary = cmd_ingest(&args)?;
            println!("conversations: {}", summary.conversations);
            println!("examples: {}", summary.examples);
            if let Some(retained) = summary.retained_examples {
                println!("retained_examples: {retained}");
            }
        }
        Command::Build(args) => {
            let summary = cmd_build(&args)?;
            println!("records: {}", summary.records);
            if summary.skipped_answers > 0 {
                println!("skipped_answers: {}", summary.skipped_answers);
            }
        }
        Command::Sample(args) => {
            let summary = cmd_sample(&args)?;
            println!("conversations: {}", summary.conversations);
            println!("examples: {}", summary.examples);
        }
        Command::Evaluate(args) => {
            let report = cmd_evaluate(&args)?;
            println!("corpus_f1: {:.1}", report.corpus_f1);
            if let Some(delta) = report.delta_pct {
                println!("delta_pct: {delta:+.1}");
            }
            if let Some(avg) = report.avg_delta_pct {
                println!("avg_delta_pct: {avg:+.1}");
            }
            if let Some(sig) = report.significance {
                println!("t_statistic: {:.4}", sig.t_statistic);
                println!("p_value: {:.6}", sig.p_value);
            }
        }
        Command::Stats(args) => {
            let summary = cmd_stats(&args)?;
            println!("examples: {}", summary.examples);
            println!("examples_split: {:.4}", summary.examples_split);
            println!("chunks_partial: {:.4}", summary.chunks_partial);
        }
    }
    Ok(())
}
