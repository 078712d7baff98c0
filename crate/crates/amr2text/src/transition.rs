//! Transition scoring between adjacent rules in a tour.
//!
//! A binary maxent (logistic) classifier decides how plausible it is that one
//! rule's translation immediately follows another's. Three real features plus
//! a bias: a language-model score for the destination translation given the
//! source translation's tail, the destination word count, and the undirected
//! distance between the two fragment roots in the input graph. Features are
//! z-scored with statistics frozen at training time.

use crate::amr::{AmrGraph, NodeId};
use crate::lm::{NgramLm, END};
use crate::rulebank::{candidates, MatchedRule, RuleBank, VerbalizationEntry};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use thiserror::Error;

pub const FEATURE_NAMES: [&str; 3] = ["lm_score", "word_count", "path_length"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    /// log10 LM score of the destination translation continuing the source.
    pub lm_score: f64,
    /// Token count of the destination translation (0 for the end node).
    pub word_count: f64,
    /// Undirected distance between fragment roots; 0 if either endpoint is
    /// the start or end node.
    pub path_length: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 3] {
        [self.lm_score, self.word_count, self.path_length]
    }
}

/// A tour endpoint as the classifier sees it.
#[derive(Debug, Clone, Copy)]
pub enum Endpoint<'a> {
    Start,
    End,
    Rule(&'a MatchedRule),
}

fn tokens<'a>(e: &Endpoint<'a>) -> &'a [String] {
    match e {
        Endpoint::Rule(m) => m.translation(),
        _ => &[],
    }
}

fn lm_tokens(ts: &[String], lowercase: bool) -> Vec<String> {
    if lowercase {
        ts.iter().map(|t| t.to_lowercase()).collect()
    } else {
        ts.to_vec()
    }
}

/// Features for traveling `from -> to`. `lowercase` folds tokens before LM
/// lookup only; it never changes surface output.
pub fn extract_features(
    from: Endpoint,
    to: Endpoint,
    graph: &AmrGraph,
    lm: &NgramLm,
    lowercase: bool,
) -> FeatureVector {
    let ctx = lm_tokens(tokens(&from), lowercase);
    let ctx_refs: Vec<&str> = ctx.iter().map(String::as_str).collect();
    let (lm_score, word_count) = match &to {
        Endpoint::End => (lm.score_continuation(&ctx_refs, &[END]), 0.0),
        Endpoint::Rule(m) => {
            let cont = lm_tokens(m.translation(), lowercase);
            let cont_refs: Vec<&str> = cont.iter().map(String::as_str).collect();
            (lm.score_continuation(&ctx_refs, &cont_refs), m.translation().len() as f64)
        }
        Endpoint::Start => (0.0, 0.0),
    };
    let path_length = match (&from, &to) {
        (Endpoint::Rule(a), Endpoint::Rule(b)) => graph
            .undirected_distance(a.root_node(), b.root_node())
            .expect("fragment roots lie in one connected graph") as f64,
        _ => 0.0,
    };
    FeatureVector { lm_score, word_count, path_length }
}

/// Per-feature z-scaling, frozen at training time. A degenerate (zero) stdev
/// is replaced by 1 so scaling stays defined.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub means: [f64; 3],
    pub stdevs: [f64; 3],
}

impl FeatureScaler {
    pub fn identity() -> Self {
        FeatureScaler { means: [0.0; 3], stdevs: [1.0; 3] }
    }

    pub fn fit(features: &[FeatureVector]) -> Self {
        let n = features.len().max(1) as f64;
        let mut means = [0.0; 3];
        for f in features {
            for (m, v) in means.iter_mut().zip(f.as_array()) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut vars = [0.0; 3];
        for f in features {
            for (s, (v, m)) in vars.iter_mut().zip(f.as_array().into_iter().zip(means)) {
                *s += (v - m) * (v - m);
            }
        }
        let mut stdevs = [0.0; 3];
        for (sd, v) in stdevs.iter_mut().zip(vars) {
            let s = (v / n).sqrt();
            *sd = if s > 0.0 { s } else { 1.0 };
        }
        FeatureScaler { means, stdevs }
    }

    pub fn scale(&self, f: &FeatureVector) -> [f64; 3] {
        let raw = f.as_array();
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = (raw[i] - self.means[i]) / self.stdevs[i];
        }
        out
    }
}

/// Trained transition classifier: three feature weights plus bias, and the
/// training-time feature scaler.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub weights: [f64; 4],
    pub scaler: FeatureScaler,
}

fn logistic(z: f64) -> f64 {
    let z = z.clamp(-700.0, 700.0);
    let p = 1.0 / (1.0 + (-z).exp());
    p.clamp(1e-300, 1.0 - 1e-16)
}

impl TransitionModel {
    pub fn new(weights: [f64; 4], scaler: FeatureScaler) -> Self {
        TransitionModel { weights, scaler }
    }

    /// lambda . scaled-features + bias.
    pub fn decision_value(&self, f: &FeatureVector) -> f64 {
        let x = self.scaler.scale(f);
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.weights[2] * x[2] + self.weights[3]
    }

    /// p("yes" | features): a logistic over the scaled features. Saturates at
    /// the float boundaries, never 0, 1, or NaN.
    pub fn probability(&self, f: &FeatureVector) -> f64 {
        logistic(self.decision_value(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionExample {
    pub features: FeatureVector,
    pub label: bool,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training examples")]
    NoExamples,
    #[error("all training examples carry the same label")]
    SingleLabel,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("training loss rose from {previous} to {current} at epoch {epoch}; lower the learning rate")]
    LossIncreased { epoch: usize, previous: f64, current: f64 },
    #[error("model file line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { l2: 1e-4, epochs: 500, learning_rate: 0.1, seed: 0 }
    }
}

/// Summed negative log-likelihood over (scaled features, label) pairs plus an
/// L2 penalty on the non-bias weights. This is the quantity training
/// minimizes and the gradient below differentiates.
pub fn regularized_nll(weights: &[f64; 4], examples: &[([f64; 3], bool)], l2: f64) -> f64 {
    let mut loss = 0.0;
    for (x, y) in examples {
        let z = weights[0] * x[0] + weights[1] * x[1] + weights[2] * x[2] + weights[3];
        // ln(1 + exp(-|z|)) form stays finite for any z
        let softplus = (-z.abs()).exp().ln_1p();
        loss += if *y { softplus + (-z).max(0.0) } else { softplus + z.max(0.0) };
    }
    loss + 0.5 * l2 * (weights[0].powi(2) + weights[1].powi(2) + weights[2].powi(2))
}

/// Analytic gradient of [`regularized_nll`].
pub fn regularized_nll_gradient(
    weights: &[f64; 4],
    examples: &[([f64; 3], bool)],
    l2: f64,
) -> [f64; 4] {
    let mut grad = [0.0; 4];
    for (x, y) in examples {
        let z = weights[0] * x[0] + weights[1] * x[1] + weights[2] * x[2] + weights[3];
        let p = 1.0 / (1.0 + (-z.clamp(-700.0, 700.0)).exp());
        let r = p - if *y { 1.0 } else { 0.0 };
        grad[0] += r * x[0];
        grad[1] += r * x[1];
        grad[2] += r * x[2];
        grad[3] += r;
    }
    grad[0] += l2 * weights[0];
    grad[1] += l2 * weights[1];
    grad[2] += l2 * weights[2];
    grad
}

/// Deterministic full-batch gradient descent from zero weights. The seed fixes
/// the example order (and with it float summation order). The loss must fall
/// monotonically across epochs or training aborts with diagnostics.
pub fn train(examples: &[TransitionExample], opts: &TrainOptions) -> Result<TransitionModel, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::NoExamples);
    }
    if examples.iter().all(|e| e.label) || examples.iter().all(|e| !e.label) {
        return Err(TrainError::SingleLabel);
    }
    let features: Vec<FeatureVector> = examples.iter().map(|e| e.features).collect();
    let scaler = FeatureScaler::fit(&features);
    let mut data: Vec<([f64; 3], bool)> =
        examples.iter().map(|e| (scaler.scale(&e.features), e.label)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    data.shuffle(&mut rng);

    let n = data.len() as f64;
    let mut weights = [0.0f64; 4];
    let mut prev = regularized_nll(&weights, &data, opts.l2);
    for epoch in 1..=opts.epochs {
        let grad = regularized_nll_gradient(&weights, &data, opts.l2);
        for (w, g) in weights.iter_mut().zip(grad) {
            *w -= opts.learning_rate * g / n;
        }
        let loss = regularized_nll(&weights, &data, opts.l2);
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        if loss > prev + 1e-9 {
            return Err(TrainError::LossIncreased { epoch, previous: prev, current: loss });
        }
        prev = loss;
    }
    Ok(TransitionModel { weights, scaler })
}

/// Final summed NLL of a model on raw-feature examples (diagnostics).
pub fn model_loss(model: &TransitionModel, examples: &[TransitionExample], l2: f64) -> f64 {
    let data: Vec<([f64; 3], bool)> =
        examples.iter().map(|e| (model.scaler.scale(&e.features), e.label)).collect();
    regularized_nll(&model.weights, &data, l2)
}

/// Fraction of examples the model classifies correctly at threshold 0.5.
pub fn accuracy(model: &TransitionModel, examples: &[TransitionExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct = examples
        .iter()
        .filter(|e| (model.probability(&e.features) > 0.5) == e.label)
        .count();
    correct as f64 / examples.len() as f64
}

#[derive(Debug, Default)]
pub struct MinedExamples {
    pub examples: Vec<TransitionExample>,
    pub positives: usize,
    pub negatives: usize,
    /// training pairs where no gold cut covered the sentence and all concepts
    pub skipped_pairs: usize,
}

#[derive(Debug, Clone)]
pub struct MineOptions {
    pub negatives_per_positive: usize,
    pub seed: u64,
    pub lowercase: bool,
}

impl Default for MineOptions {
    fn default() -> Self {
        MineOptions { negatives_per_positive: 4, seed: 0, lowercase: true }
    }
}

/// Greedy gold cut: scan the reference left to right, at each point take the
/// candidate whose translation matches the longest prefix of what remains and
/// whose fragment does not overlap concepts already covered (first candidate
/// in deterministic order wins ties). Succeeds only if the sentence and all
/// concepts end up exactly covered.
fn gold_cut(cands: &[MatchedRule], reference: &[String], n_concepts: usize) -> Option<Vec<usize>> {
    let mut covered: HashSet<NodeId> = HashSet::new();
    let mut pos = 0usize;
    let mut seq = Vec::new();
    loop {
        if pos == reference.len() && covered.len() == n_concepts {
            return Some(seq);
        }
        let mut best: Option<(usize, usize)> = None; // (translation len, candidate idx)
        for (idx, m) in cands.iter().enumerate() {
            if m.covered.iter().any(|c| covered.contains(c)) {
                continue;
            }
            let t = m.translation();
            if pos + t.len() > reference.len() || t != &reference[pos..pos + t.len()] {
                continue;
            }
            if best.is_none_or(|(len, _)| t.len() > len) {
                best = Some((t.len(), idx));
            }
        }
        let (len, idx) = best?;
        covered.extend(cands[idx].covered.iter().copied());
        pos += len;
        seq.push(idx);
    }
}

/// Mine classifier examples from (graph, reference) pairs. Positives are the
/// consecutive transitions of each pair's gold cut, including start->first and
/// last->end. Negatives are sampled (seeded, without replacement) from legal
/// transitions that are not gold: start->rule, rule->end, and rule->rule with
/// disjoint fragments.
pub fn mine_examples(
    pairs: &[(AmrGraph, Vec<String>)],
    bank: &RuleBank,
    skip_list: &BTreeSet<String>,
    verbalizations: &[VerbalizationEntry],
    lm: &NgramLm,
    opts: &MineOptions,
) -> MinedExamples {
    let mut out = MinedExamples::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for (graph, reference) in pairs {
        let cands = candidates(graph, bank, skip_list, verbalizations);
        let Some(seq) = gold_cut(&cands, reference, graph.nodes.len()) else {
            out.skipped_pairs += 1;
            continue;
        };

        // gold transitions as (from, to) with None = start/end
        let mut gold: Vec<(Option<usize>, Option<usize>)> = Vec::new();
        gold.push((None, Some(seq[0])));
        for w in seq.windows(2) {
            gold.push((Some(w[0]), Some(w[1])));
        }
        gold.push((Some(seq[seq.len() - 1]), None));

        let endpoint = |o: &Option<usize>, is_from: bool| match o {
            Some(i) => Endpoint::Rule(&cands[*i]),
            None if is_from => Endpoint::Start,
            None => Endpoint::End,
        };
        for (from, to) in &gold {
            let f = extract_features(
                endpoint(from, true),
                endpoint(to, false),
                graph,
                lm,
                opts.lowercase,
            );
            out.examples.push(TransitionExample { features: f, label: true });
            out.positives += 1;
        }

        // legal-but-not-gold pool
        let gold_set: HashSet<(Option<usize>, Option<usize>)> = gold.into_iter().collect();
        let mut pool: Vec<(Option<usize>, Option<usize>)> = Vec::new();
        for i in 0..cands.len() {
            pool.push((None, Some(i)));
            pool.push((Some(i), None));
        }
        for i in 0..cands.len() {
            for j in 0..cands.len() {
                if i != j && !cands[i].overlaps(&cands[j]) {
                    pool.push((Some(i), Some(j)));
                }
            }
        }
        pool.retain(|t| !gold_set.contains(t));
        pool.shuffle(&mut rng);
        let want = opts.negatives_per_positive * (seq.len() + 1);
        for (from, to) in pool.into_iter().take(want) {
            let f = extract_features(
                endpoint(&from, true),
                endpoint(&to, false),
                graph,
                lm,
                opts.lowercase,
            );
            out.examples.push(TransitionExample { features: f, label: false });
            out.negatives += 1;
        }
    }
    out
}

const MODEL_HEADER: &str = "amr2text transition model v1";

/// Plain-text model file: header, one `name weight mean stdev` line per
/// feature, then the bias. Floats print in shortest round-trip form, so
/// write/read is exact and byte-stable.
pub fn write_model(model: &TransitionModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MODEL_HEADER}");
    for (i, name) in FEATURE_NAMES.iter().enumerate() {
        let _ = writeln!(
            out,
            "{name} {} {} {}",
            model.weights[i], model.scaler.means[i], model.scaler.stdevs[i]
        );
    }
    let _ = writeln!(out, "bias {}", model.weights[3]);
    out
}

pub fn read_model(text: &str) -> Result<TransitionModel, TrainError> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: &str| TrainError::ModelFormat { line: line + 1, msg: msg.into() };
    let (i, header) = lines.next().ok_or_else(|| bad(0, "empty model file"))?;
    if header.trim() != MODEL_HEADER {
        return Err(bad(i, "unrecognized model header"));
    }
    let mut weights = [0.0f64; 4];
    let mut scaler = FeatureScaler::identity();
    for (slot, name) in FEATURE_NAMES.iter().enumerate() {
        let (i, line) = lines.next().ok_or_else(|| bad(slot + 1, "truncated model file"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != *name {
            return Err(bad(i, &format!("expected '{name} weight mean stdev'")));
        }
        let mut nums = [0.0f64; 3];
        for (k, p) in parts[1..].iter().enumerate() {
            nums[k] = p.parse().map_err(|_| bad(i, "bad number"))?;
        }
        weights[slot] = nums[0];
        scaler.means[slot] = nums[1];
        scaler.stdevs[slot] = nums[2];
    }
    let (i, line) = lines.next().ok_or_else(|| bad(4, "missing bias line"))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != "bias" {
        return Err(bad(i, "expected 'bias weight'"));
    }
    weights[3] = parts[1].parse().map_err(|_| bad(i, "bad number"))?;
    Ok(TransitionModel { weights, scaler })
}

/// TSV dump of mined examples for inspection.
pub fn write_examples_tsv(examples: &[TransitionExample]) -> String {
    let mut out = String::from("label\tlm_score\tword_count\tpath_length\n");
    for e in examples {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            if e.label { "yes" } else { "no" },
            e.features.lm_score,
            e.features.word_count,
            e.features.path_length
        );
    }
    out
}
