//! Asymmetric generalized TSP over rule assignments.
//!
//! Every graph node (concept or constant) forms a group; each matched rule
//! contributes one tour node per graph node it covers. A tour visits exactly
//! one node per group, so picking a tour simultaneously picks a set of
//! non-overlapping rules covering the graph and an order for their
//! translations. Transition costs encode legality (rule-internal successor
//! edges cost zero, everything illegal is infinite) and, between rules, the
//! negative log probability of a trained transition classifier or a bigram
//! LM baseline.

use crate::amr::{AmrGraph, NodeId};
use crate::lm::NgramLm;
use crate::rulebank::MatchedRule;
use crate::transition::{extract_features, Endpoint, TransitionModel};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::time::{Duration, Instant};
use thiserror::Error;

/// Probabilities are clamped into this open interval before taking -ln, so
/// every model-scored edge has a finite positive cost.
const PROB_FLOOR: f64 = 1e-12;

/// A transition cost. `Infinite` marks illegal moves; finite costs are
/// nonnegative by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    /// Infinite maps to IEEE infinity; safe here because costs are only ever
    /// added and compared, never subtracted.
    pub fn to_f64(self) -> f64 {
        match self {
            Cost::Finite(v) => v,
            Cost::Infinite => f64::INFINITY,
        }
    }

}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, other: Cost) -> Cost {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => Cost::Finite(a + b),
            _ => Cost::Infinite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgtspNode {
    Start,
    End,
    /// Candidate rule `rule` standing in for graph node `concept`.
    Assignment { concept: NodeId, rule: usize },
}

#[derive(Debug, Error)]
pub enum AgtspError {
    #[error("no candidate rule covers graph node '{concept}'")]
    CoverageViolation { concept: String },
    #[error("{groups} groups exceed the exact solver limit of {limit}")]
    TooLarge { groups: usize, limit: usize },
    #[error("no tour visits every group over finite-cost edges")]
    Infeasible,
    #[error("invalid tour: {0}")]
    InvalidTour(String),
}

/// The cost source for legal rule-to-rule transitions.
pub enum CostModel<'a> {
    /// Trained classifier probability, as -ln p.
    Maxent { model: &'a TransitionModel, lm: &'a NgramLm },
    /// LM-only baseline: -ln of the 10^(log10 score) of the destination
    /// translation given the source translation.
    BigramLm { lm: &'a NgramLm },
}

impl CostModel<'_> {
    fn score(&self, from: Endpoint, to: Endpoint, graph: &AmrGraph, lowercase: bool) -> f64 {
        match self {
            CostModel::Maxent { model, lm } => {
                let f = extract_features(from, to, graph, lm, lowercase);
                let p = model.probability(&f).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                -p.ln()
            }
            CostModel::BigramLm { lm } => {
                let f = extract_features(from, to, graph, lm, lowercase);
                // log10 p -> -ln p; scores come floored, never -inf
                (-f.lm_score * std::f64::consts::LN_10).max(0.0)
            }
        }
    }
}

#[derive(Debug)]
pub struct AgtspInstance {
    pub nodes: Vec<AgtspNode>,
    /// groups[0] is the start group, groups[last] the end group; the groups
    /// in between hold the assignment nodes of one graph node each, in BFS
    /// order from the root.
    pub groups: Vec<Vec<usize>>,
    pub group_of: Vec<usize>,
    pub costs: Vec<Vec<Cost>>,
    /// Candidate rules the assignment nodes refer to. Empty for instances
    /// built from raw parts.
    pub candidates: Vec<MatchedRule>,
}

impl AgtspInstance {
    pub fn start_index(&self) -> usize {
        0
    }

    pub fn end_index(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Number of graph-node groups (excluding start and end).
    pub fn group_count(&self) -> usize {
        self.groups.len() - 2
    }

    pub fn node_index(&self, concept: NodeId, rule: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| *n == AgtspNode::Assignment { concept, rule })
    }

    /// Assemble an instance directly from group sizes and a cost matrix.
    /// Node layout: start, then `sizes[0]` nodes, `sizes[1]` nodes, ..., end.
    /// `costs` must be square over that layout.
    pub fn from_parts(sizes: &[usize], costs: Vec<Cost>) -> AgtspInstance {
        let n = 2 + sizes.iter().sum::<usize>();
        assert_eq!(costs.len(), n * n, "cost matrix must be {n}x{n}");
        let mut nodes = vec![AgtspNode::Start];
        let mut groups = vec![vec![0usize]];
        for (gi, &size) in sizes.iter().enumerate() {
            let mut group = Vec::with_capacity(size);
            for k in 0..size {
                group.push(nodes.len());
                nodes.push(AgtspNode::Assignment { concept: gi + 1, rule: k });
            }
            groups.push(group);
        }
        groups.push(vec![nodes.len()]);
        nodes.push(AgtspNode::End);
        let mut group_of = vec![0usize; n];
        for (gi, group) in groups.iter().enumerate() {
            for &v in group {
                group_of[v] = gi;
            }
        }
        let matrix: Vec<Vec<Cost>> = costs.chunks(n).map(|row| row.to_vec()).collect();
        AgtspInstance { nodes, groups, group_of, costs: matrix, candidates: Vec::new() }
    }

    /// Total cost of a tour [start, assignments.., end], including the free
    /// closing edge back to start. Errors unless every group is visited
    /// exactly once in that shape.
    pub fn tour_cost(&self, tour: &[usize]) -> Result<Cost, AgtspError> {
        let bad = |msg: String| Err(AgtspError::InvalidTour(msg));
        if tour.len() != self.groups.len() {
            return bad(format!("expected {} nodes, got {}", self.groups.len(), tour.len()));
        }
        if tour[0] != self.start_index() {
            return bad("tour must open at the start node".into());
        }
        if tour[tour.len() - 1] != self.end_index() {
            return bad("tour must close at the end node".into());
        }
        let mut seen = vec![false; self.groups.len()];
        for &v in tour {
            if v >= self.nodes.len() {
                return bad(format!("node {v} out of range"));
            }
            let g = self.group_of[v];
            if seen[g] {
                return bad(format!("group {g} visited twice"));
            }
            seen[g] = true;
        }
        let mut total = Cost::Finite(0.0);
        for w in tour.windows(2) {
            total = total + self.costs[w[0]][w[1]];
        }
        total = total + self.costs[self.end_index()][self.start_index()];
        Ok(total)
    }

    /// Matrix dump for diagnostics: one row per node, tab separated, `inf`
    /// for illegal transitions.
    pub fn write_debug_tsv(&self) -> String {
        let label = |i: usize| match self.nodes[i] {
            AgtspNode::Start => "start".to_string(),
            AgtspNode::End => "end".to_string(),
            AgtspNode::Assignment { concept, rule } => format!("g{concept}r{rule}"),
        };
        let mut out = String::from("from\\to");
        for j in 0..self.nodes.len() {
            let _ = write!(out, "\t{}", label(j));
        }
        out.push('\n');
        for i in 0..self.nodes.len() {
            let _ = write!(out, "{}", label(i));
            for j in 0..self.nodes.len() {
                match self.costs[i][j] {
                    Cost::Finite(v) => {
                        let _ = write!(out, "\t{v:.4}");
                    }
                    Cost::Infinite => out.push_str("\tinf"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Build the instance for a graph and its candidate rules.
///
/// Legality rules for `costs[i][j]`:
/// - diagonal, start->end, anything->start, end->anything: infinite
///   (except the fixed zero-cost end->start closure);
/// - start->(c,r): scored iff c is the first node of r's fragment order;
/// - (c,r)->end: scored iff c is the last;
/// - same rule: zero iff c_j directly follows c_i in the fragment order;
/// - different rules: scored iff c_i is r_i's last, c_j is r_j's first, and
///   the fragments cover disjoint graph nodes.
pub fn build_instance(
    graph: &AmrGraph,
    candidates: Vec<MatchedRule>,
    cost_model: &CostModel,
    lowercase: bool,
) -> Result<AgtspInstance, AgtspError> {
    let order = graph.bfs_order(graph.root);
    let mut nodes = vec![AgtspNode::Start];
    let mut groups = vec![vec![0usize]];
    for &concept in &order {
        let mut group = Vec::new();
        for (ri, m) in candidates.iter().enumerate() {
            if m.covered.binary_search(&concept).is_ok() {
                group.push(nodes.len());
                nodes.push(AgtspNode::Assignment { concept, rule: ri });
            }
        }
        if group.is_empty() {
            return Err(AgtspError::CoverageViolation {
                concept: graph.node(concept).concept.clone(),
            });
        }
        groups.push(group);
    }
    groups.push(vec![nodes.len()]);
    nodes.push(AgtspNode::End);

    let n = nodes.len();
    let mut group_of = vec![0usize; n];
    for (gi, group) in groups.iter().enumerate() {
        for &v in group {
            group_of[v] = gi;
        }
    }

    let mut costs = vec![vec![Cost::Infinite; n]; n];
    let start = 0;
    let end = n - 1;
    costs[end][start] = Cost::Finite(0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j || j == start || i == end {
                continue;
            }
            let cost = match (nodes[i], nodes[j]) {
                (AgtspNode::Start, AgtspNode::End) => Cost::Infinite,
                (AgtspNode::Start, AgtspNode::Assignment { concept, rule }) => {
                    let m = &candidates[rule];
                    if m.first() == concept {
                        Cost::Finite(cost_model.score(
                            Endpoint::Start,
                            Endpoint::Rule(m),
                            graph,
                            lowercase,
                        ))
                    } else {
                        Cost::Infinite
                    }
                }
                (AgtspNode::Assignment { concept, rule }, AgtspNode::End) => {
                    let m = &candidates[rule];
                    if m.last() == concept {
                        Cost::Finite(cost_model.score(
                            Endpoint::Rule(m),
                            Endpoint::End,
                            graph,
                            lowercase,
                        ))
                    } else {
                        Cost::Infinite
                    }
                }
                (
                    AgtspNode::Assignment { concept: ci, rule: ri },
                    AgtspNode::Assignment { concept: cj, rule: rj },
                ) => {
                    if ri == rj {
                        if candidates[ri].next_after(ci) == Some(cj) {
                            Cost::Finite(0.0)
                        } else {
                            Cost::Infinite
                        }
                    } else {
                        let a = &candidates[ri];
                        let b = &candidates[rj];
                        if a.last() == ci && b.first() == cj && !a.overlaps(b) {
                            Cost::Finite(cost_model.score(
                                Endpoint::Rule(a),
                                Endpoint::Rule(b),
                                graph,
                                lowercase,
                            ))
                        } else {
                            Cost::Infinite
                        }
                    }
                }
                _ => Cost::Infinite,
            };
            costs[i][j] = cost;
        }
    }

    Ok(AgtspInstance { nodes, groups, group_of, costs, candidates })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tour {
    /// [start, one assignment node per group, end]
    pub nodes: Vec<usize>,
    /// Sum of edge costs including the zero-cost closing edge.
    pub total_cost: f64,
}

/// Exact solver: dynamic program over visited-group bitmasks, then a forward
/// walk that always takes the lowest-numbered node consistent with the
/// optimum, so ties resolve to the lexicographically smallest tour.
pub fn solve_exact(instance: &AgtspInstance, exact_limit: usize) -> Result<Tour, AgtspError> {
    let m = instance.group_count();
    if m > exact_limit {
        return Err(AgtspError::TooLarge { groups: m, limit: exact_limit });
    }
    if m == 0 {
        return Err(AgtspError::Infeasible);
    }
    let n = instance.nodes.len();
    let start = instance.start_index();
    let end = instance.end_index();
    let cost = |i: usize, j: usize| instance.costs[i][j].to_f64();
    // bit g-1 of a mask marks concept group g as visited
    let gbit = |v: usize| instance.group_of[v] - 1;
    let full: usize = (1usize << m) - 1;

    // g[mask][v]: v's group is in mask; cheapest way to visit the remaining
    // groups and reach end, starting from v.
    let mut table = vec![f64::INFINITY; (full + 1) * n];
    for v in start + 1..end {
        table[full * n + v] = cost(v, end);
    }
    for mask in (0..full).rev() {
        for v in start + 1..end {
            if mask & (1 << gbit(v)) == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            for w in start + 1..end {
                if mask & (1 << gbit(w)) != 0 {
                    continue;
                }
                let c = cost(v, w);
                if c.is_finite() {
                    let t = c + table[(mask | (1 << gbit(w))) * n + w];
                    if t < best {
                        best = t;
                    }
                }
            }
            table[mask * n + v] = best;
        }
    }

    let mut total = f64::INFINITY;
    for v in start + 1..end {
        let c = cost(start, v);
        if c.is_finite() {
            let t = c + table[(1 << gbit(v)) * n + v];
            if t < total {
                total = t;
            }
        }
    }
    if !total.is_finite() {
        return Err(AgtspError::Infeasible);
    }

    // forward reconstruction; float equality is exact because each target was
    // computed as the minimum over these very sums
    let mut tour = vec![start];
    let mut mask = 0usize;
    let mut cur = start;
    let mut target = total;
    while mask != full {
        let mut found = false;
        for w in start + 1..end {
            if mask & (1 << gbit(w)) != 0 {
                continue;
            }
            let c = cost(cur, w);
            let rest = table[(mask | (1 << gbit(w))) * n + w];
            if c.is_finite() && c + rest == target {
                tour.push(w);
                mask |= 1 << gbit(w);
                target = rest;
                cur = w;
                found = true;
                break;
            }
        }
        assert!(found, "reconstruction lost the optimal tour");
    }
    tour.push(end);
    Ok(Tour { nodes: tour, total_cost: total })
}

/// Greedy tour construction as depth-first search: at each step try the
/// unvisited-group successors in (optionally noise-perturbed) cost order and
/// backtrack when stuck. Returns None only if no feasible tour exists at all.
fn construct(instance: &AgtspInstance, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<usize>> {
    let m = instance.group_count();
    let n = instance.nodes.len();
    let start = instance.start_index();
    let end = instance.end_index();
    let cost = |i: usize, j: usize| instance.costs[i][j].to_f64();

    // precompute noise once so repeated visits rank children consistently
    let mut noise = vec![1.0f64; n * n];
    if let Some(rng) = rng {
        for x in noise.iter_mut() {
            *x = rng.gen_range(0.5..1.5);
        }
    }
    let ranked = |from: usize, visited: &[bool]| -> Vec<usize> {
        let mut opts: Vec<usize> = (start + 1..end)
            .filter(|&w| !visited[instance.group_of[w]] && cost(from, w).is_finite())
            .collect();
        opts.sort_by(|&a, &b| {
            let ka = cost(from, a) * noise[from * n + a];
            let kb = cost(from, b) * noise[from * n + b];
            ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
        });
        opts
    };

    let mut visited = vec![false; instance.groups.len()];
    let mut path: Vec<usize> = Vec::with_capacity(m);
    // stack of (current node, ranked children, next child index)
    let mut stack = vec![(start, ranked(start, &visited), 0usize)];
    while let Some(frame) = stack.last_mut() {
        if path.len() == m {
            if cost(frame.0, end).is_finite() {
                return Some(path);
            }
            // dead end: undo the node that completed the path
            let v = path.pop().unwrap();
            visited[instance.group_of[v]] = false;
            stack.pop();
            continue;
        }
        if frame.2 >= frame.1.len() {
            stack.pop();
            if let Some(v) = path.pop() {
                visited[instance.group_of[v]] = false;
            }
            continue;
        }
        let w = frame.1[frame.2];
        frame.2 += 1;
        if visited[instance.group_of[w]] {
            continue;
        }
        visited[instance.group_of[w]] = true;
        path.push(w);
        let children = ranked(w, &visited);
        stack.push((w, children, 0));
    }
    None
}

fn seq_cost(instance: &AgtspInstance, seq: &[usize]) -> f64 {
    let mut total = instance.costs[instance.start_index()][seq[0]].to_f64();
    for w in seq.windows(2) {
        total += instance.costs[w[0]][w[1]].to_f64();
    }
    total + instance.costs[seq[seq.len() - 1]][instance.end_index()].to_f64()
}

/// Local search: repeated first-improvement sweeps of three move kinds until
/// a full pass finds nothing better (or the budget runs out).
/// - re-insert: pull one group out of the tour and put any member of that
///   group back at any position (covers plain substitution and single-node
///   relocation at once);
/// - relocate: move a segment of 2..=3 nodes elsewhere in the tour;
/// - reverse: flip a subsegment (costs are asymmetric, so the whole
///   candidate is re-priced).
fn improve(instance: &AgtspInstance, seq: &mut Vec<usize>, deadline: Option<Instant>) {
    let mut best = seq_cost(instance, seq);
    loop {
        if let Some(d) = deadline {
            if Instant::now() >= d {
                return;
            }
        }
        let mut improved = false;

        'moves: {
            // re-insert any member of any group anywhere
            for pos in 0..seq.len() {
                let g = instance.group_of[seq[pos]];
                let mut removed = seq.clone();
                removed.remove(pos);
                for &u in &instance.groups[g] {
                    for q in 0..=removed.len() {
                        if u == seq[pos] && q == pos {
                            continue;
                        }
                        let mut cand = removed.clone();
                        cand.insert(q, u);
                        let c = seq_cost(instance, &cand);
                        if c < best - 1e-12 {
                            *seq = cand;
                            best = c;
                            improved = true;
                            break 'moves;
                        }
                    }
                }
            }
            // relocate a short segment
            for len in 2..=3usize.min(seq.len()) {
                for i in 0..=seq.len() - len {
                    for j in 0..=seq.len() - len {
                        if j == i {
                            continue;
                        }
                        let mut cand = seq.clone();
                        let seg: Vec<usize> = cand.drain(i..i + len).collect();
                        for (k, v) in seg.into_iter().enumerate() {
                            cand.insert(j + k, v);
                        }
                        let c = seq_cost(instance, &cand);
                        if c < best - 1e-12 {
                            *seq = cand;
                            best = c;
                            improved = true;
                            break 'moves;
                        }
                    }
                }
            }
            // reverse a subsegment
            for i in 0..seq.len() {
                for j in i + 1..seq.len() {
                    let mut cand = seq.clone();
                    cand[i..=j].reverse();
                    let c = seq_cost(instance, &cand);
                    if c < best - 1e-12 {
                        *seq = cand;
                        best = c;
                        improved = true;
                        break 'moves;
                    }
                }
            }
        }

        if !improved {
            return;
        }
    }
}

/// Escape move between local-search rounds: a double-bridge reshuffle of the
/// order plus a few random in-group member swaps. May pass through infinite
/// cost; the following local search either repairs it or the round is
/// discarded.
fn perturb(instance: &AgtspInstance, seq: &mut Vec<usize>, rng: &mut ChaCha8Rng) {
    if seq.len() >= 4 {
        let mut cuts: Vec<usize> = (1..seq.len()).collect();
        cuts.shuffle(rng);
        cuts.truncate(3);
        cuts.sort_unstable();
        let (a, b, c) = (cuts[0], cuts[1], cuts[2]);
        let mut out = Vec::with_capacity(seq.len());
        out.extend_from_slice(&seq[..a]);
        out.extend_from_slice(&seq[b..c]);
        out.extend_from_slice(&seq[a..b]);
        out.extend_from_slice(&seq[c..]);
        *seq = out;
    }
    for _ in 0..1 + seq.len() / 4 {
        let i = rng.gen_range(0..seq.len());
        let members = &instance.groups[instance.group_of[seq[i]]];
        seq[i] = members[rng.gen_range(0..members.len())];
    }
}

/// Heuristic solver: one plain greedy construction plus three noise-perturbed
/// restarts, each polished by local search and a round of perturb-and-improve
/// escapes; the cheapest tour seen wins. Deterministic for a fixed seed.
/// `budget` caps wall-clock time (the best tour so far is still returned).
pub fn solve_heuristic(
    instance: &AgtspInstance,
    seed: u64,
    budget: Option<Duration>,
) -> Result<Tour, AgtspError> {
    if instance.group_count() == 0 {
        return Err(AgtspError::Infeasible);
    }
    let deadline = budget.map(|b| Instant::now() + b);
    let out_of_time = || deadline.is_some_and(|d| Instant::now() >= d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let escape_rounds = (4 * instance.group_count()).max(20);
    'restarts: for restart in 0..4 {
        let seq = if restart == 0 {
            construct(instance, None)
        } else {
            construct(instance, Some(&mut rng))
        };
        let Some(mut seq) = seq else {
            break; // construction is exhaustive: no tour exists
        };
        improve(instance, &mut seq, deadline);
        let c = seq_cost(instance, &seq);
        if best.as_ref().is_none_or(|(bc, _)| c < *bc) {
            best = Some((c, seq));
        }
        for _ in 0..escape_rounds {
            if out_of_time() {
                break 'restarts;
            }
            let (best_cost, best_seq) = best.as_ref().unwrap();
            let mut cand = best_seq.clone();
            perturb(instance, &mut cand, &mut rng);
            improve(instance, &mut cand, deadline);
            let c = seq_cost(instance, &cand);
            if c < *best_cost {
                best = Some((c, cand));
            }
        }
    }
    let (total, seq) = best.ok_or(AgtspError::Infeasible)?;
    let mut nodes = Vec::with_capacity(seq.len() + 2);
    nodes.push(instance.start_index());
    nodes.extend(seq);
    nodes.push(instance.end_index());
    Ok(Tour { nodes, total_cost: total })
}
