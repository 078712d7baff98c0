//! Command-line interface: train the LM, train the transition classifier,
//! generate, and evaluate.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 malformed data, 4 no usable
//! signal (infeasible instance or degenerate training data).

use crate::agtsp::AgtspError;
use crate::amr::{parse_penman, read_amr_bank, AmrGraph};
use crate::generator::{evaluate_corpus, generate, EvalOptions, GenOptions, SolverKind};
use crate::lm::{self, NgramLm};
use crate::rulebank::{default_skip_list, parse_verbalizations, RuleBank, VerbalizationEntry};
use crate::transition::{
    accuracy, mine_examples, model_loss, read_model, train, write_examples_tsv, write_model,
    FeatureScaler, MineOptions, TrainOptions, TransitionModel,
};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Duration;
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(name = "amr2text", version, about = "Rule-based AMR-to-text generation with tour-ordered rule translations")]
pub struct Cli {
    /// TOML config file; command-line flags override its values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Per-graph diagnostics on stderr (JSON lines)
    #[arg(long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train the n-gram language model from plain text, one sentence per line
    TrainLm(TrainLmArgs),
    /// Mine transition examples from (graph, sentence) pairs and fit the classifier
    TrainTransitions(TrainTransitionsArgs),
    /// Generate one sentence per graph block, in order, on stdout
    Generate(GenerateArgs),
    /// Generate a reference-annotated corpus and score it with BLEU
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct TrainLmArgs {
    /// Training text (tokens separated by whitespace)
    #[arg(long)]
    pub corpus: PathBuf,
    /// Where to write the ARPA model
    #[arg(long)]
    pub out: PathBuf,
    /// N-gram order
    #[arg(long)]
    pub order: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainTransitionsArgs {
    /// Graph bank with `# ::snt` reference sentences
    #[arg(long)]
    pub corpus: PathBuf,
    /// Rule table (`fragment ||| translation ||| count` lines)
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// ARPA language model for the LM feature
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Where to write the trained model
    #[arg(long)]
    pub out: PathBuf,
    /// Verbalization table for concept fallback rules
    #[arg(long)]
    pub verbalizations: Option<PathBuf>,
    /// Keep only the N highest-count rules per fragment
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Sampled negatives per mined positive
    #[arg(long)]
    pub negatives_per_positive: Option<usize>,
    /// Gradient descent epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Gradient descent step size
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// L2 penalty on the non-bias weights
    #[arg(long)]
    pub l2: Option<f64>,
    /// Seed for example shuffling and negative sampling
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also dump the mined examples as TSV
    #[arg(long)]
    pub examples_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Graph bank (blocks separated by blank lines; metadata optional)
    #[arg(long)]
    pub input: PathBuf,
    /// Rule table (`fragment ||| translation ||| count` lines)
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// ARPA language model
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Trained transition model (not needed with --baseline-bigram)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Verbalization table for concept fallback rules
    #[arg(long)]
    pub verbalizations: Option<PathBuf>,
    /// Keep only the N highest-count rules per fragment
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Largest group count handled exactly; bigger graphs use the heuristic
    #[arg(long)]
    pub exact_limit: Option<usize>,
    /// Heuristic solver seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Score transitions with the LM alone instead of the trained model
    #[arg(long)]
    pub baseline_bigram: bool,
    /// Stop at the first failing block instead of emitting an empty line
    #[arg(long)]
    pub abort_on_error: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Graph bank with `# ::snt` reference sentences
    #[arg(long)]
    pub input: PathBuf,
    /// Rule table (`fragment ||| translation ||| count` lines)
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// ARPA language model
    #[arg(long)]
    pub lm: Option<PathBuf>,
    /// Trained transition model (not needed with --baseline-bigram)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Verbalization table for concept fallback rules
    #[arg(long)]
    pub verbalizations: Option<PathBuf>,
    /// Keep only the N highest-count rules per fragment
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Largest group count handled exactly; bigger graphs use the heuristic
    #[arg(long)]
    pub exact_limit: Option<usize>,
    /// Heuristic solver seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Score transitions with the LM alone instead of the trained model
    #[arg(long)]
    pub baseline_bigram: bool,
    /// Skip references longer than this many tokens
    #[arg(long)]
    pub max_reference_tokens: Option<usize>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NoSignal(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io { .. } => 2,
            CliError::Data(_) => 3,
            CliError::NoSignal(_) => 4,
        }
    }
}

fn data(e: impl Display) -> CliError {
    CliError::Data(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct ConfigPaths {
    pub rules: Option<PathBuf>,
    pub verbalizations: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub top_n: Option<usize>,
    pub lm_order: Option<usize>,
    pub exact_limit: Option<usize>,
    pub seed: Option<u64>,
    pub negatives_per_positive: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub l2: Option<f64>,
    pub lowercase_lm: Option<bool>,
    pub max_reference_tokens: Option<usize>,
    pub heuristic_budget_ms: Option<u64>,
    pub skip_list: Option<Vec<String>>,
    #[serde(default)]
    pub paths: ConfigPaths,
}

/// Effective settings: config values, falling back to built-in defaults.
/// Command-line flags override these per command.
#[derive(Debug)]
pub struct Settings {
    pub top_n: usize,
    pub lm_order: usize,
    pub exact_limit: usize,
    pub seed: u64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub lowercase_lm: bool,
    pub max_reference_tokens: usize,
    pub budget: Option<Duration>,
    pub skip_list: BTreeSet<String>,
    pub paths: ConfigPaths,
}

impl Settings {
    fn from_config(cfg: ConfigFile) -> Settings {
        Settings {
            top_n: cfg.top_n.unwrap_or(10),
            lm_order: cfg.lm_order.unwrap_or(4),
            exact_limit: cfg.exact_limit.unwrap_or(16),
            seed: cfg.seed.unwrap_or(0),
            negatives_per_positive: cfg.negatives_per_positive.unwrap_or(4),
            epochs: cfg.epochs.unwrap_or(500),
            learning_rate: cfg.learning_rate.unwrap_or(0.1),
            l2: cfg.l2.unwrap_or(1e-4),
            lowercase_lm: cfg.lowercase_lm.unwrap_or(true),
            max_reference_tokens: cfg.max_reference_tokens.unwrap_or(30),
            budget: cfg.heuristic_budget_ms.map(Duration::from_millis),
            skip_list: cfg
                .skip_list
                .map(|l| l.into_iter().collect())
                .unwrap_or_else(default_skip_list),
            paths: cfg.paths,
        }
    }
}

fn load_settings(config: Option<&Path>) -> Result<Settings, CliError> {
    let cfg = match config {
        Some(path) => toml::from_str(&read(path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        None => ConfigFile::default(),
    };
    Ok(Settings::from_config(cfg))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let settings = load_settings(cli.config.as_deref())?;
    match &cli.command {
        Command::TrainLm(args) => cmd_train_lm(args, &settings),
        Command::TrainTransitions(args) => cmd_train_transitions(args, &settings, cli.verbose),
        Command::Generate(args) => cmd_generate(args, &settings, cli.verbose),
        Command::Evaluate(args) => cmd_evaluate(args, &settings),
    }
}

fn load_rules(path: Option<&PathBuf>, fallback: &ConfigPaths, top_n: usize) -> Result<RuleBank, CliError> {
    match path.or(fallback.rules.as_ref()) {
        Some(p) => RuleBank::parse(&read(p)?, top_n).map_err(data),
        None => Ok(RuleBank::empty(top_n)),
    }
}

fn load_lm(path: Option<&PathBuf>, fallback: &ConfigPaths, what: &str) -> Result<NgramLm, CliError> {
    let p = path.or(fallback.lm.as_ref()).ok_or_else(|| {
        CliError::Usage(format!("{what} needs a language model: pass --lm or set paths.lm"))
    })?;
    lm::read_arpa(&read(p)?).map_err(data)
}

fn load_verbalizations(
    path: Option<&PathBuf>,
    fallback: &ConfigPaths,
) -> Result<Vec<VerbalizationEntry>, CliError> {
    match path.or(fallback.verbalizations.as_ref()) {
        Some(p) => Ok(parse_verbalizations(&read(p)?).0),
        None => Ok(Vec::new()),
    }
}

/// Parse every block of a graph bank, keeping block indexes for messages.
fn parse_blocks(text: &str) -> Result<Vec<(usize, crate::amr::AmrBlock, AmrGraph)>, CliError> {
    let mut out = Vec::new();
    for (i, block) in read_amr_bank(text).into_iter().enumerate() {
        let graph = parse_penman(&block.graph_text).map_err(|e| {
            CliError::Data(format!("block {i} (near line {}): {e}", block.first_line))
        })?;
        out.push((i, block, graph));
    }
    Ok(out)
}

fn cmd_train_lm(args: &TrainLmArgs, s: &Settings) -> Result<(), CliError> {
    let order = args.order.unwrap_or(s.lm_order);
    let text = read(&args.corpus)?;
    let sentences: Vec<Vec<String>> = text
        .lines()
        .map(|l| if s.lowercase_lm { l.to_lowercase() } else { l.to_string() })
        .map(|l| l.split_whitespace().map(String::from).collect::<Vec<_>>())
        .filter(|t: &Vec<String>| !t.is_empty())
        .collect();
    let model = lm::train(&sentences, order).map_err(data)?;
    write(&args.out, &lm::write_arpa(&model))?;
    println!("vocabulary: {}", model.vocab_size());
    for k in 1..=model.order() {
        println!("ngram {k}: {}", model.ngram_count(k));
    }
    Ok(())
}

fn cmd_train_transitions(
    args: &TrainTransitionsArgs,
    s: &Settings,
    verbose: bool,
) -> Result<(), CliError> {
    let top_n = args.top_n.unwrap_or(s.top_n);
    let bank = load_rules(args.rules.as_ref(), &s.paths, top_n)?;
    let lm = load_lm(args.lm.as_ref(), &s.paths, "train-transitions")?;
    let verbalizations = load_verbalizations(args.verbalizations.as_ref(), &s.paths)?;

    let mut pairs: Vec<(AmrGraph, Vec<String>)> = Vec::new();
    for (_, block, graph) in parse_blocks(&read(&args.corpus)?)? {
        if let Some(sentence) = block.sentence() {
            let tokens = sentence.split_whitespace().map(String::from).collect();
            pairs.push((graph, tokens));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::NoSignal(
            "no (graph, sentence) pairs in the corpus: every block needs a '# ::snt' line".into(),
        ));
    }

    let mine_opts = MineOptions {
        negatives_per_positive: args.negatives_per_positive.unwrap_or(s.negatives_per_positive),
        seed: args.seed.unwrap_or(s.seed),
        lowercase: s.lowercase_lm,
    };
    let mined = mine_examples(&pairs, &bank, &s.skip_list, &verbalizations, &lm, &mine_opts);
    if verbose {
        eprintln!(
            "{}",
            serde_json::json!({
                "pairs": pairs.len(),
                "skipped_pairs": mined.skipped_pairs,
                "positives": mined.positives,
                "negatives": mined.negatives,
            })
        );
    }
    if let Some(path) = &args.examples_out {
        write(path, &write_examples_tsv(&mined.examples))?;
    }

    let train_opts = TrainOptions {
        l2: args.l2.unwrap_or(s.l2),
        epochs: args.epochs.unwrap_or(s.epochs),
        learning_rate: args.learning_rate.unwrap_or(s.learning_rate),
        seed: args.seed.unwrap_or(s.seed),
    };
    let model = train(&mined.examples, &train_opts)
        .map_err(|e| CliError::NoSignal(e.to_string()))?;
    write(&args.out, &write_model(&model))?;

    println!("pairs: {}", pairs.len());
    println!("skipped pairs: {}", mined.skipped_pairs);
    println!("positives: {}", mined.positives);
    println!("negatives: {}", mined.negatives);
    println!("final loss: {:.6}", model_loss(&model, &mined.examples, train_opts.l2));
    println!("training accuracy: {:.4}", accuracy(&model, &mined.examples));
    Ok(())
}

fn load_transition_model(
    path: Option<&PathBuf>,
    fallback: &ConfigPaths,
    baseline: bool,
) -> Result<TransitionModel, CliError> {
    if baseline {
        // unused under the LM baseline, but the pipeline still wants a value
        return Ok(TransitionModel::new([0.0; 4], FeatureScaler::identity()));
    }
    let p = path.or(fallback.model.as_ref()).ok_or_else(|| {
        CliError::Usage(
            "a trained transition model is required: pass --model or set paths.model \
             (or use --baseline-bigram)"
                .into(),
        )
    })?;
    read_model(&read(p)?).map_err(data)
}

fn cmd_generate(args: &GenerateArgs, s: &Settings, verbose: bool) -> Result<(), CliError> {
    let top_n = args.top_n.unwrap_or(s.top_n);
    let bank = load_rules(args.rules.as_ref(), &s.paths, top_n)?;
    let lm = load_lm(args.lm.as_ref(), &s.paths, "generate")?;
    let model = load_transition_model(args.model.as_ref(), &s.paths, args.baseline_bigram)?;
    let verbalizations = load_verbalizations(args.verbalizations.as_ref(), &s.paths)?;
    let opts = GenOptions {
        exact_limit: args.exact_limit.unwrap_or(s.exact_limit),
        seed: args.seed.unwrap_or(s.seed),
        baseline_bigram: args.baseline_bigram,
        lowercase_lm: s.lowercase_lm,
        budget: s.budget,
    };

    for (i, _, graph) in parse_blocks(&read(&args.input)?)? {
        match generate(&graph, &bank, &model, &lm, &s.skip_list, &verbalizations, &opts) {
            Ok(result) => {
                println!("{}", result.sentence);
                if verbose {
                    let rules: Vec<String> = result
                        .used_rules
                        .iter()
                        .map(|&r| result.instance.candidates[r].translation().join(" "))
                        .collect();
                    eprintln!(
                        "{}",
                        serde_json::json!({
                            "block": i,
                            "groups": result.instance.group_count(),
                            "nodes": result.instance.nodes.len(),
                            "solver": match result.solver {
                                SolverKind::Exact => "exact",
                                SolverKind::Heuristic => "heuristic",
                            },
                            "cost": result.cost,
                            "rules": rules,
                        })
                    );
                }
            }
            Err(e) => {
                if args.abort_on_error {
                    return Err(map_gen_error(i, e));
                }
                eprintln!("warning: block {i}: {e}");
                println!();
            }
        }
    }
    Ok(())
}

fn map_gen_error(block: usize, e: AgtspError) -> CliError {
    CliError::NoSignal(format!("block {block}: {e}"))
}

fn cmd_evaluate(args: &EvaluateArgs, s: &Settings) -> Result<(), CliError> {
    let top_n = args.top_n.unwrap_or(s.top_n);
    let bank = load_rules(args.rules.as_ref(), &s.paths, top_n)?;
    let lm = load_lm(args.lm.as_ref(), &s.paths, "evaluate")?;
    let model = load_transition_model(args.model.as_ref(), &s.paths, args.baseline_bigram)?;
    let verbalizations = load_verbalizations(args.verbalizations.as_ref(), &s.paths)?;
    let opts = EvalOptions {
        max_reference_tokens: args.max_reference_tokens.unwrap_or(s.max_reference_tokens),
        lowercase: s.lowercase_lm,
        gen: GenOptions {
            exact_limit: args.exact_limit.unwrap_or(s.exact_limit),
            seed: args.seed.unwrap_or(s.seed),
            baseline_bigram: args.baseline_bigram,
            lowercase_lm: s.lowercase_lm,
            budget: s.budget,
        },
    };

    let blocks = read_amr_bank(&read(&args.input)?);
    let report = evaluate_corpus(
        &blocks,
        &bank,
        &model,
        &lm,
        &s.skip_list,
        &verbalizations,
        &opts,
    )
    .map_err(data)?;

    println!("instances: {}", report.blocks);
    println!("filtered: {}", report.filtered);
    println!("evaluated: {}", report.evaluated);
    println!("failed: {}", report.failed);
    println!(
        "induced concept coverage: {:.2}%",
        100.0 * report.induced_concept_coverage()
    );
    println!(
        "induced graph coverage: {:.2}%",
        100.0 * report.induced_graph_coverage()
    );
    println!("BLEU: {:.2}", report.bleu.score);
    Ok(())
}
