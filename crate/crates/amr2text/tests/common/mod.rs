//! Shared helpers for integration tests: seeded synthetic graphs, random
//! tour instances with a planted feasible tour, and brute-force oracles.
//
// each test binary compiles this module separately and uses a subset of it
#![allow(dead_code)]

use amr2text::agtsp::{AgtspInstance, AgtspNode, Cost};
use amr2text::amr::{AmrGraph, GraphBuilder, NodeId};
use amr2text::lm::NgramLm;
use amr2text::rulebank::MatchedRule;
use amr2text::transition::{extract_features, Endpoint, TransitionModel};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const CONCEPTS: [&str; 12] = [
    "want-01", "go-01", "boy", "girl", "believe-01", "city", "dog", "see-01", "house", "tell-01",
    "run-02", "name",
];

const ROLES: [&str; 7] = [":ARG0", ":ARG1", ":ARG2", ":mod", ":time", ":location", ":op1"];

/// Random rooted graph: 1..=12 concept nodes in a random tree, plus optional
/// re-entrant edges and constant leaves.
pub fn synthetic_graph(rng: &mut ChaCha8Rng) -> AmrGraph {
    let n = rng.gen_range(1..=12);
    let mut b = GraphBuilder::new();
    let mut ids: Vec<NodeId> = Vec::with_capacity(n);
    for i in 0..n {
        let concept = CONCEPTS[rng.gen_range(0..CONCEPTS.len())];
        ids.push(b.concept(&format!("v{i}"), concept));
    }
    for i in 1..n {
        let parent = ids[rng.gen_range(0..i)];
        b.edge(parent, ROLES[rng.gen_range(0..ROLES.len())], ids[i]);
    }
    // re-entrances: extra edges between existing concept nodes
    for _ in 0..rng.gen_range(0..=n / 3) {
        let s = rng.gen_range(0..n);
        let t = rng.gen_range(0..n);
        if s != t {
            b.edge(ids[s], ROLES[rng.gen_range(0..ROLES.len())], ids[t]);
        }
    }
    for _ in 0..rng.gen_range(0..=2usize) {
        let c = if rng.gen_bool(0.5) { b.constant("\"Rome\"") } else { b.constant("3") };
        let parent = ids[rng.gen_range(0..n)];
        let role = if rng.gen_bool(0.5) { ":quant" } else { ":wiki" };
        b.edge(parent, role, c);
    }
    b.build(ids[0])
}

/// Random group-tour instance: 1..=`max_groups` groups of 1..=`max_size`
/// nodes, roughly half the legal-shape edges finite, plus one planted
/// feasible tour so an optimum always exists.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    max_groups: usize,
    max_size: usize,
) -> AgtspInstance {
    let m = rng.gen_range(1..=max_groups);
    let sizes: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=max_size)).collect();
    let total: usize = sizes.iter().sum();
    let n = total + 2;
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(1usize, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let idx = |g: usize, k: usize| offsets[g] + k;

    let mut costs = vec![Cost::Infinite; n * n];
    costs[(n - 1) * n] = Cost::Finite(0.0); // end -> start closure
    for gi in 0..m {
        for ki in 0..sizes[gi] {
            let i = idx(gi, ki);
            if rng.gen_bool(0.55) {
                costs[i] = Cost::Finite(rng.gen_range(0.1..10.0)); // start -> i
            }
            if rng.gen_bool(0.55) {
                costs[i * n + n - 1] = Cost::Finite(rng.gen_range(0.1..10.0)); // i -> end
            }
            for gj in 0..m {
                if gj == gi {
                    continue;
                }
                for kj in 0..sizes[gj] {
                    if rng.gen_bool(0.55) {
                        costs[i * n + idx(gj, kj)] = Cost::Finite(rng.gen_range(0.1..10.0));
                    }
                }
            }
        }
    }

    // plant one feasible tour
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut prev = 0usize;
    for &g in &order {
        let v = idx(g, rng.gen_range(0..sizes[g]));
        if !costs[prev * n + v].is_finite() {
            costs[prev * n + v] = Cost::Finite(rng.gen_range(0.1..10.0));
        }
        prev = v;
    }
    if !costs[prev * n + n - 1].is_finite() {
        costs[prev * n + n - 1] = Cost::Finite(rng.gen_range(0.1..10.0));
    }

    AgtspInstance::from_parts(&sizes, costs)
}

struct Searcher<'a> {
    inst: &'a AgtspInstance,
    best: Option<(f64, Vec<usize>)>,
}

impl Searcher<'_> {
    fn dfs(&mut self, cur: usize, acc: f64, path: &mut Vec<usize>, visited: &mut [bool]) {
        if let Some((bc, _)) = &self.best {
            // costs are nonnegative: an equal or worse prefix cannot beat the
            // first (lexicographically smallest) tour found at that cost
            if acc >= *bc {
                return;
            }
        }
        let m = self.inst.group_count();
        let end = self.inst.end_index();
        if path.len() == m + 1 {
            let c = self.inst.costs[cur][end].to_f64();
            let total = acc + c;
            if total.is_finite() && self.best.as_ref().is_none_or(|(bc, _)| total < *bc) {
                let mut tour = path.clone();
                tour.push(end);
                self.best = Some((total, tour));
            }
            return;
        }
        for w in 1..end {
            let g = self.inst.group_of[w];
            if visited[g] {
                continue;
            }
            let c = self.inst.costs[cur][w].to_f64();
            if !c.is_finite() {
                continue;
            }
            visited[g] = true;
            path.push(w);
            self.dfs(w, acc + c, path, visited);
            path.pop();
            visited[g] = false;
        }
    }
}

/// Exhaustive search over all group orders and node choices. Returns the
/// cheapest tour, lexicographically smallest on ties, or None if infeasible.
pub fn brute_force_tour(inst: &AgtspInstance) -> Option<(f64, Vec<usize>)> {
    let mut s = Searcher { inst, best: None };
    let start = inst.start_index();
    let mut path = vec![start];
    let mut visited = vec![false; inst.groups.len()];
    visited[0] = true;
    s.dfs(start, 0.0, &mut path, &mut visited);
    s.best
}

/// All injective label- and edge-preserving maps from fragment nodes to graph
/// nodes, found by plain enumeration. Mirrors what the matcher must return.
pub fn brute_force_matches(graph: &AmrGraph, fragment: &AmrGraph) -> Vec<Vec<NodeId>> {
    let k = fragment.nodes.len();
    let n = graph.nodes.len();
    let mut results = Vec::new();
    let mut mapping = vec![usize::MAX; k];
    let mut used = vec![false; n];
    fn rec(
        graph: &AmrGraph,
        fragment: &AmrGraph,
        slot: usize,
        mapping: &mut Vec<usize>,
        used: &mut Vec<bool>,
        results: &mut Vec<Vec<usize>>,
    ) {
        if slot == fragment.nodes.len() {
            // every fragment edge must exist in the graph under the mapping
            let ok = fragment.edges.iter().all(|e| {
                graph.edges.iter().any(|ge| {
                    ge.source == mapping[e.source]
                        && ge.relation == e.relation
                        && ge.target == mapping[e.target]
                })
            });
            if ok {
                results.push(mapping.clone());
            }
            return;
        }
        let f = &fragment.nodes[slot];
        for g in 0..graph.nodes.len() {
            if used[g] {
                continue;
            }
            let gn = &graph.nodes[g];
            if gn.is_constant != f.is_constant || gn.concept != f.concept {
                continue;
            }
            used[g] = true;
            mapping[slot] = g;
            rec(graph, fragment, slot + 1, mapping, used, results);
            used[g] = false;
        }
    }
    rec(graph, fragment, 0, &mut mapping, &mut used, &mut results);
    results.sort();
    results
}

/// Independent re-derivation of one matrix entry from the legality rules and
/// the classifier, used to cross-check instances built by the library.
pub fn expected_edge_cost(
    inst: &AgtspInstance,
    graph: &AmrGraph,
    model: &TransitionModel,
    lm: &NgramLm,
    i: usize,
    j: usize,
    lowercase: bool,
) -> Cost {
    let score = |from: Endpoint, to: Endpoint| {
        let f = extract_features(from, to, graph, lm, lowercase);
        let p = model.probability(&f).clamp(1e-12, 1.0 - 1e-12);
        Cost::Finite(-p.ln())
    };
    let first = |m: &MatchedRule| m.order[0];
    let last = |m: &MatchedRule| *m.order.last().unwrap();
    if i == j {
        return Cost::Infinite;
    }
    match (inst.nodes[i], inst.nodes[j]) {
        (AgtspNode::End, AgtspNode::Start) => Cost::Finite(0.0),
        (AgtspNode::End, _) | (_, AgtspNode::Start) | (AgtspNode::Start, AgtspNode::End) => {
            Cost::Infinite
        }
        (AgtspNode::Start, AgtspNode::Assignment { concept, rule }) => {
            let m = &inst.candidates[rule];
            if first(m) == concept {
                score(Endpoint::Start, Endpoint::Rule(m))
            } else {
                Cost::Infinite
            }
        }
        (AgtspNode::Assignment { concept, rule }, AgtspNode::End) => {
            let m = &inst.candidates[rule];
            if last(m) == concept {
                score(Endpoint::Rule(m), Endpoint::End)
            } else {
                Cost::Infinite
            }
        }
        (
            AgtspNode::Assignment { concept: ci, rule: ri },
            AgtspNode::Assignment { concept: cj, rule: rj },
        ) => {
            if ri == rj {
                let m = &inst.candidates[ri];
                let pos = m.order.iter().position(|&c| c == ci).unwrap();
                if pos + 1 < m.order.len() && m.order[pos + 1] == cj {
                    Cost::Finite(0.0)
                } else {
                    Cost::Infinite
                }
            } else {
                let a = &inst.candidates[ri];
                let b = &inst.candidates[rj];
                let disjoint = a.covered.iter().all(|c| !b.covered.contains(c));
                if last(a) == ci && first(b) == cj && disjoint {
                    score(Endpoint::Rule(a), Endpoint::Rule(b))
                } else {
                    Cost::Infinite
                }
            }
        }
    }
}
