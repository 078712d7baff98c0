//! End-to-end generation and evaluation.
//!
//! Generation: collect candidate rules for a graph, build the tour instance,
//! solve it (exactly when small enough, heuristically otherwise), then read
//! the sentence off the tour by emitting each chosen rule's translation at
//! its first node. Evaluation: corpus BLEU against reference sentences.

use crate::agtsp::{build_instance, solve_exact, solve_heuristic, AgtspError, AgtspInstance, AgtspNode, CostModel, Tour};
use crate::amr::{parse_penman, AmrBlock, AmrGraph, ParseError};
use crate::lm::NgramLm;
use crate::rulebank::{candidates, induced_candidates, RuleBank, VerbalizationEntry};
use crate::transition::TransitionModel;
use std::collections::BTreeSet;
use std::collections::HashSet;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct GenOptions {
    /// Largest group count the exact solver is asked to handle; bigger
    /// instances go to the heuristic.
    pub exact_limit: usize,
    pub seed: u64,
    /// Score transitions with the LM alone instead of the trained classifier.
    pub baseline_bigram: bool,
    /// Fold tokens to lowercase for LM lookups (surface casing is kept).
    pub lowercase_lm: bool,
    /// Wall-clock cap for the heuristic solver.
    pub budget: Option<Duration>,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            exact_limit: 16,
            seed: 0,
            baseline_bigram: false,
            lowercase_lm: true,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Exact,
    Heuristic,
}

#[derive(Debug)]
pub struct GenerationResult {
    pub sentence: String,
    pub tokens: Vec<String>,
    pub tour: Tour,
    /// Candidate indices of the chosen rules, in emission order.
    pub used_rules: Vec<usize>,
    pub cost: f64,
    pub solver: SolverKind,
    pub instance: AgtspInstance,
}

/// Generate a sentence for one graph.
pub fn generate(
    graph: &AmrGraph,
    bank: &RuleBank,
    model: &TransitionModel,
    lm: &NgramLm,
    skip_list: &BTreeSet<String>,
    verbalizations: &[VerbalizationEntry],
    opts: &GenOptions,
) -> Result<GenerationResult, AgtspError> {
    let cands = candidates(graph, bank, skip_list, verbalizations);
    let cost_model = if opts.baseline_bigram {
        CostModel::BigramLm { lm }
    } else {
        CostModel::Maxent { model, lm }
    };
    let instance = build_instance(graph, cands, &cost_model, opts.lowercase_lm)?;
    let (tour, solver) = if instance.group_count() <= opts.exact_limit {
        (solve_exact(&instance, opts.exact_limit)?, SolverKind::Exact)
    } else {
        (solve_heuristic(&instance, opts.seed, opts.budget)?, SolverKind::Heuristic)
    };

    let mut tokens = Vec::new();
    let mut used_rules = Vec::new();
    let mut covered: HashSet<usize> = HashSet::new();
    for &v in &tour.nodes {
        if let AgtspNode::Assignment { concept, rule } = instance.nodes[v] {
            let m = &instance.candidates[rule];
            if m.first() == concept {
                tokens.extend(m.translation().iter().cloned());
                used_rules.push(rule);
            }
            covered.insert(concept);
        }
    }
    // a legal tour picks non-overlapping rules that partition the graph
    debug_assert_eq!(covered.len(), graph.nodes.len());
    let sentence = tokens.join(" ");
    let cost = tour.total_cost;
    Ok(GenerationResult { sentence, tokens, tour, used_rules, cost, solver, instance })
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{candidates} candidates vs {references} references")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("block {index} (near line {line}): {source}")]
    BadBlock { index: usize, line: usize, source: ParseError },
}

pub const MAX_BLEU_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Clipped n-gram matches per order (index 0 = unigrams).
    pub matches: [usize; MAX_BLEU_ORDER],
    /// Candidate n-gram totals per order.
    pub totals: [usize; MAX_BLEU_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
    pub brevity_penalty: f64,
    /// 0..=100.
    pub score: f64,
}

impl BleuReport {
    /// Clipped precision for one order (1-based); None when no candidate
    /// n-grams of that order exist.
    pub fn precision(&self, order: usize) -> Option<f64> {
        let i = order - 1;
        (self.totals[i] > 0).then(|| self.matches[i] as f64 / self.totals[i] as f64)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> std::collections::HashMap<&[String], usize> {
    let mut counts = std::collections::HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over up to 4-gram clipped precisions, geometric mean with
/// uniform weight over the orders that have any candidate n-grams, times a
/// brevity penalty. One reference per candidate. Returns 0 when any counted
/// order has zero matches or the candidate side is empty.
pub fn bleu_report(
    candidates: &[Vec<String>],
    references: &[Vec<String>],
) -> Result<BleuReport, EvalError> {
    if candidates.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    let mut matches = [0usize; MAX_BLEU_ORDER];
    let mut totals = [0usize; MAX_BLEU_ORDER];
    let mut candidate_len = 0usize;
    let mut reference_len = 0usize;
    for (cand, reference) in candidates.iter().zip(references) {
        candidate_len += cand.len();
        reference_len += reference.len();
        for n in 1..=MAX_BLEU_ORDER {
            let cc = ngram_counts(cand, n);
            let rc = ngram_counts(reference, n);
            for (gram, count) in &cc {
                matches[n - 1] += (*count).min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += cand.len().saturating_sub(n - 1);
        }
    }
    let brevity_penalty = if candidate_len == 0 {
        0.0
    } else if candidate_len >= reference_len {
        1.0
    } else {
        (1.0 - reference_len as f64 / candidate_len as f64).exp()
    };
    let counted: Vec<usize> = (0..MAX_BLEU_ORDER).filter(|&i| totals[i] > 0).collect();
    let score = if counted.is_empty() || counted.iter().any(|&i| matches[i] == 0) {
        0.0
    } else {
        let log_sum: f64 = counted
            .iter()
            .map(|&i| (matches[i] as f64 / totals[i] as f64).ln())
            .sum();
        100.0 * brevity_penalty * (log_sum / counted.len() as f64).exp()
    };
    Ok(BleuReport { matches, totals, candidate_len, reference_len, brevity_penalty, score })
}

pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, EvalError> {
    bleu_report(candidates, references).map(|r| r.score)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    /// References longer than this many tokens are skipped.
    pub max_reference_tokens: usize,
    /// Compare candidate and reference lowercased.
    pub lowercase: bool,
    pub gen: GenOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { max_reference_tokens: 30, lowercase: true, gen: GenOptions::default() }
    }
}

#[derive(Debug)]
pub struct CorpusReport {
    /// Graph blocks seen in the corpus file.
    pub blocks: usize,
    /// Blocks dropped for a missing or overlong reference.
    pub filtered: usize,
    /// Blocks actually generated and scored.
    pub evaluated: usize,
    /// Blocks where generation failed (scored as empty output).
    pub failed: usize,
    /// Graph nodes covered by at least one learned (non-fallback) rule.
    pub induced_covered_concepts: usize,
    pub total_concepts: usize,
    /// Graphs fully coverable by learned rules alone.
    pub fully_induced_graphs: usize,
    pub bleu: BleuReport,
    /// Generated sentences, aligned with evaluated blocks.
    pub sentences: Vec<String>,
}

impl CorpusReport {
    pub fn induced_concept_coverage(&self) -> f64 {
        if self.total_concepts == 0 {
            return 0.0;
        }
        self.induced_covered_concepts as f64 / self.total_concepts as f64
    }

    pub fn induced_graph_coverage(&self) -> f64 {
        if self.evaluated == 0 {
            return 0.0;
        }
        self.fully_induced_graphs as f64 / self.evaluated as f64
    }
}

fn fold(tokens: &[String], lowercase: bool) -> Vec<String> {
    if lowercase {
        tokens.iter().map(|t| t.to_lowercase()).collect()
    } else {
        tokens.to_vec()
    }
}

/// Generate every block with a usable reference and score the corpus.
/// Parse failures are hard errors; generation failures score as empty output
/// and are counted in `failed`.
pub fn evaluate_corpus(
    blocks: &[AmrBlock],
    bank: &RuleBank,
    model: &TransitionModel,
    lm: &NgramLm,
    skip_list: &BTreeSet<String>,
    verbalizations: &[VerbalizationEntry],
    opts: &EvalOptions,
) -> Result<CorpusReport, EvalError> {
    let mut report = CorpusReport {
        blocks: blocks.len(),
        filtered: 0,
        evaluated: 0,
        failed: 0,
        induced_covered_concepts: 0,
        total_concepts: 0,
        fully_induced_graphs: 0,
        bleu: BleuReport {
            matches: [0; MAX_BLEU_ORDER],
            totals: [0; MAX_BLEU_ORDER],
            candidate_len: 0,
            reference_len: 0,
            brevity_penalty: 0.0,
            score: 0.0,
        },
        sentences: Vec::new(),
    };
    let mut cands: Vec<Vec<String>> = Vec::new();
    let mut refs: Vec<Vec<String>> = Vec::new();
    for (index, block) in blocks.iter().enumerate() {
        let Some(sentence) = block.sentence() else {
            report.filtered += 1;
            continue;
        };
        let reference: Vec<String> = sentence.split_whitespace().map(String::from).collect();
        if reference.len() > opts.max_reference_tokens {
            report.filtered += 1;
            continue;
        }
        let graph = parse_penman(&block.graph_text).map_err(|source| EvalError::BadBlock {
            index,
            line: block.first_line,
            source,
        })?;

        report.total_concepts += graph.nodes.len();
        let induced = induced_candidates(&graph, bank);
        let covered: HashSet<usize> =
            induced.iter().flat_map(|m| m.covered.iter().copied()).collect();
        report.induced_covered_concepts += covered.len();
        if covered.len() == graph.nodes.len() {
            report.fully_induced_graphs += 1;
        }

        report.evaluated += 1;
        match generate(&graph, bank, model, lm, skip_list, verbalizations, &opts.gen) {
            Ok(result) => {
                cands.push(fold(&result.tokens, opts.lowercase));
                report.sentences.push(result.sentence);
            }
            Err(_) => {
                report.failed += 1;
                cands.push(Vec::new());
                report.sentences.push(String::new());
            }
        }
        refs.push(fold(&reference, opts.lowercase));
    }
    report.bleu = bleu_report(&cands, &refs)?;
    Ok(report)
}
