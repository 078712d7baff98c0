//! Graph-to-string rules and rule matching.
//!
//! A rule pairs a penman fragment with a token translation, e.g.
//! `(w / want-01 :ARG1 (g / go-01)) ||| wants to go ||| 37`. A rule bank keeps
//! the `top_n` highest-count translations per distinct fragment. On top of the
//! bank, every input gets fallback concept rules (morphological variants of
//! each concept) and verbalization rules, so that full coverage never depends
//! on the induced rules alone.

use crate::amr::{parse_penman, AmrGraph, ConceptNode, GraphBuilder, NodeId, ParseError};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleOrigin {
    Induced,
    Concept,
    Verbalization,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub fragment: AmrGraph,
    pub translation: Vec<String>,
    pub count: u64,
    pub origin: RuleOrigin,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("rule file line {line}: expected 'FRAGMENT ||| TRANSLATION ||| COUNT', got {found} fields")]
    MalformedLine { line: usize, found: usize },
    #[error("rule file line {line}: empty translation")]
    EmptyTranslation { line: usize },
    #[error("rule file line {line}: bad count '{text}'")]
    BadCount { line: usize, text: String },
    #[error("rule file line {line}: negative count {count}")]
    NegativeCount { line: usize, count: i64 },
    #[error("rule file line {line}: fragment does not parse: {source}")]
    FragmentParse { line: usize, source: ParseError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Rules indexed by fragment root concept, with at most `top_n` translations
/// retained per distinct fragment (descending count, ties broken by
/// lexicographic translation).
#[derive(Debug, Clone)]
pub struct RuleBank {
    rules: Vec<Arc<Rule>>,
    by_root: BTreeMap<String, Vec<usize>>,
    top_n: usize,
}

impl RuleBank {
    pub fn empty(top_n: usize) -> Self {
        RuleBank { rules: Vec::new(), by_root: BTreeMap::new(), top_n }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn top_n(&self) -> usize {
        self.top_n
    }

    pub fn rules(&self) -> &[Arc<Rule>] {
        &self.rules
    }

    pub fn rules_with_root(&self, concept: &str) -> &[usize] {
        self.by_root.get(concept).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Parse rule-file text: one `FRAGMENT ||| TRANSLATION ||| COUNT` per line,
    /// blank lines and `#` comments ignored. Duplicate (fragment, translation)
    /// pairs merge by summing counts.
    pub fn parse(text: &str, top_n: usize) -> Result<Self, RuleError> {
        // canonical fragment key -> (first-seen fragment, translation -> count)
        let mut groups: BTreeMap<String, (AmrGraph, BTreeMap<Vec<String>, u64>)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split("|||").collect();
            if fields.len() != 3 {
                return Err(RuleError::MalformedLine { line, found: fields.len() });
            }
            let fragment = parse_penman(fields[0])
                .map_err(|source| RuleError::FragmentParse { line, source })?;
            let translation: Vec<String> =
                fields[1].split_whitespace().map(String::from).collect();
            if translation.is_empty() {
                return Err(RuleError::EmptyTranslation { line });
            }
            let count_text = fields[2].trim();
            let count: i64 = count_text
                .parse()
                .map_err(|_| RuleError::BadCount { line, text: count_text.to_string() })?;
            if count < 0 {
                return Err(RuleError::NegativeCount { line, count });
            }
            let key = canonical_fragment_key(&fragment);
            let entry = groups.entry(key).or_insert_with(|| (fragment, BTreeMap::new()));
            *entry.1.entry(translation).or_insert(0) += count as u64;
        }

        let mut rules = Vec::new();
        let mut by_root: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (_, (fragment, translations)) in groups {
            let mut ranked: Vec<(Vec<String>, u64)> = translations.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            ranked.truncate(top_n);
            for (translation, count) in ranked {
                let idx = rules.len();
                by_root
                    .entry(fragment.node(fragment.root).concept.clone())
                    .or_default()
                    .push(idx);
                rules.push(Arc::new(Rule {
                    fragment: fragment.clone(),
                    translation,
                    count,
                    origin: RuleOrigin::Induced,
                }));
            }
        }
        Ok(RuleBank { rules, by_root, top_n })
    }

    pub fn load(path: &Path, top_n: usize) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, top_n)
    }
}

/// Structural identity key for a fragment: concept tree unfolded with sorted
/// edges, tagged with node and edge counts so re-entrant fragments do not
/// collide with tree fragments that duplicate a subtree.
pub fn canonical_fragment_key(g: &AmrGraph) -> String {
    fn node_key(g: &AmrGraph, id: NodeId, on_stack: &mut Vec<NodeId>) -> String {
        let n = g.node(id);
        if n.is_constant {
            return format!("!{}", n.concept);
        }
        if on_stack.contains(&id) {
            return "^".to_string();
        }
        on_stack.push(id);
        let mut kids: Vec<String> = g
            .out_edges(id)
            .map(|e| format!("{} {}", e.relation, node_key(g, e.target, on_stack)))
            .collect();
        on_stack.pop();
        kids.sort();
        if kids.is_empty() {
            format!("({})", n.concept)
        } else {
            format!("({} {})", n.concept, kids.join(" "))
        }
    }
    let mut stack = Vec::new();
    format!("{}#{}n{}e", node_key(g, g.root, &mut stack), g.nodes.len(), g.edges.len())
}

/// Strip a trailing `-NN` sense suffix: `want-01` becomes `want`.
pub fn strip_sense(concept: &str) -> &str {
    if let Some(i) = concept.rfind('-') {
        let suffix = &concept[i + 1..];
        if !suffix.is_empty() && suffix.chars().all(|c| c.is_ascii_digit()) {
            return &concept[..i];
        }
    }
    concept
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u')
}

/// Consonant-vowel-consonant ending calls for final-consonant doubling
/// (stop -> stopped). Final w/x/y never double.
fn doubles_final(lemma: &str) -> bool {
    let cs: Vec<char> = lemma.chars().collect();
    if cs.len() < 3 {
        return false;
    }
    let (a, b, c) = (cs[cs.len() - 3], cs[cs.len() - 2], cs[cs.len() - 1]);
    !is_vowel(a) && is_vowel(b) && !is_vowel(c) && !matches!(c, 'w' | 'x' | 'y')
}

fn ends_in_sibilant(lemma: &str) -> bool {
    lemma.ends_with('s')
        || lemma.ends_with('x')
        || lemma.ends_with('z')
        || lemma.ends_with("ch")
        || lemma.ends_with("sh")
}

fn consonant_y(lemma: &str) -> bool {
    let cs: Vec<char> = lemma.chars().collect();
    cs.len() >= 2 && cs[cs.len() - 1] == 'y' && !is_vowel(cs[cs.len() - 2])
}

/// Rule-based English forms: lemma, -s, -ed, -ing. Small closed rule set, no
/// lexicon; irregulars come out regular (go -> goed) and that is acceptable
/// because the language model decides which variant is used.
pub fn morphological_variants(lemma: &str) -> Vec<String> {
    if lemma.is_empty() || !lemma.chars().all(|c| c.is_ascii_lowercase()) {
        return vec![lemma.to_string()];
    }
    let s_form = if consonant_y(lemma) {
        format!("{}ies", &lemma[..lemma.len() - 1])
    } else if ends_in_sibilant(lemma) || lemma.ends_with('o') {
        format!("{lemma}es")
    } else {
        format!("{lemma}s")
    };
    let ed_form = if lemma.ends_with('e') {
        format!("{lemma}d")
    } else if consonant_y(lemma) {
        format!("{}ied", &lemma[..lemma.len() - 1])
    } else if doubles_final(lemma) {
        format!("{}{}ed", lemma, lemma.chars().last().unwrap())
    } else {
        format!("{lemma}ed")
    };
    let ing_form = if lemma.ends_with("ee") || lemma.ends_with("oe") || lemma.ends_with("ye") {
        format!("{lemma}ing")
    } else if let Some(stem) = lemma.strip_suffix('e') {
        format!("{stem}ing")
    } else if doubles_final(lemma) {
        format!("{}{}ing", lemma, lemma.chars().last().unwrap())
    } else {
        format!("{lemma}ing")
    };
    let mut out = vec![lemma.to_string(), s_form, ed_form, ing_form];
    let mut seen = HashSet::new();
    out.retain(|w| seen.insert(w.clone()));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbalizationEntry {
    pub token: String,
    pub concept: String,
    pub args: Vec<(String, String)>,
}

impl VerbalizationEntry {
    /// Fragment shape: `(v0 / concept :ROLE1 (v1 / arg1) ...)`.
    pub fn fragment(&self) -> AmrGraph {
        let mut b = GraphBuilder::new();
        let root = b.concept("v0", &self.concept);
        for (i, (role, concept)) in self.args.iter().enumerate() {
            let child = b.concept(&format!("v{}", i + 1), concept);
            b.edge(root, role, child);
        }
        b.build(root)
    }
}

/// Parse `VERBALIZE <token> TO <concept> [:ROLE <concept> ...]` lines.
/// Returns the entries plus a count of non-empty, non-comment lines that did
/// not parse (the public lists carry other directives too).
pub fn parse_verbalizations(text: &str) -> (Vec<VerbalizationEntry>, usize) {
    let mut entries = Vec::new();
    let mut skipped = 0usize;
    'line: for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 || toks[0] != "VERBALIZE" || toks[2] != "TO" {
            skipped += 1;
            continue;
        }
        let token = toks[1].to_string();
        let concept = toks[3].to_string();
        let mut args = Vec::new();
        let mut i = 4;
        while i < toks.len() {
            if !toks[i].starts_with(':') || i + 1 >= toks.len() {
                skipped += 1;
                continue 'line;
            }
            args.push((toks[i].to_string(), toks[i + 1].to_string()));
            i += 2;
        }
        entries.push(VerbalizationEntry { token, concept, args });
    }
    (entries, skipped)
}

fn fragment_variable(concept: &str) -> String {
    concept
        .chars()
        .find(|c| c.is_ascii_lowercase())
        .map(|c| c.to_string())
        .unwrap_or_else(|| "x".to_string())
}

fn strip_quotes(lexeme: &str) -> &str {
    lexeme.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(lexeme)
}

/// Fallback rules for one input graph: per distinct concept, morphological
/// variants (or the bare lexeme for constants); skip-list concepts get exactly
/// one empty-translation rule so coverage is preserved; verbalization rules
/// whose fragments match the graph are appended.
pub fn generate_concept_rules(
    graph: &AmrGraph,
    skip_list: &BTreeSet<String>,
    verbalizations: &[VerbalizationEntry],
) -> Vec<Rule> {
    let mut rules = Vec::new();
    let mut seen: HashSet<(bool, &str)> = HashSet::new();
    for n in &graph.nodes {
        if !seen.insert((n.is_constant, n.concept.as_str())) {
            continue;
        }
        if n.is_constant {
            let mut b = GraphBuilder::new();
            let root = b.constant(&n.concept);
            let mut translation: Vec<String> =
                strip_quotes(&n.concept).split_whitespace().map(String::from).collect();
            if translation.is_empty() {
                translation = vec![n.concept.clone()];
            }
            rules.push(Rule {
                fragment: b.build(root),
                translation,
                count: 0,
                origin: RuleOrigin::Concept,
            });
            continue;
        }
        let single = |translation: Vec<String>| {
            let mut b = GraphBuilder::new();
            let root = b.concept(&fragment_variable(&n.concept), &n.concept);
            Rule { fragment: b.build(root), translation, count: 0, origin: RuleOrigin::Concept }
        };
        if skip_list.contains(&n.concept) {
            rules.push(single(Vec::new()));
            continue;
        }
        for variant in morphological_variants(strip_sense(&n.concept)) {
            rules.push(single(vec![variant]));
        }
    }
    for entry in verbalizations {
        let fragment = entry.fragment();
        if !match_fragment(graph, &fragment).is_empty() {
            rules.push(Rule {
                fragment,
                translation: vec![entry.token.clone()],
                count: 0,
                origin: RuleOrigin::Verbalization,
            });
        }
    }
    rules
}

fn label_eq(a: &ConceptNode, b: &ConceptNode) -> bool {
    a.is_constant == b.is_constant && a.concept == b.concept
}

/// Every injective mapping of the fragment into the graph that preserves
/// concept labels and edges (relation label and direction). The fragment root
/// may land on any input node with a matching label. Results are sorted
/// lexicographically by mapped input NodeIds (indexed by fragment NodeId).
pub fn match_fragment(graph: &AmrGraph, fragment: &AmrGraph) -> Vec<Vec<NodeId>> {
    let frag_order = fragment.bfs_order(fragment.root);
    debug_assert_eq!(frag_order.len(), fragment.nodes.len(), "fragment must be connected");
    let graph_edges: HashSet<(NodeId, &str, NodeId)> =
        graph.edges.iter().map(|e| (e.source, e.relation.as_str(), e.target)).collect();

    let mut results: Vec<Vec<NodeId>> = Vec::new();
    let mut mapping = vec![usize::MAX; fragment.nodes.len()];
    let mut used = vec![false; graph.nodes.len()];

    #[allow(clippy::too_many_arguments)]
    fn place(
        pos: usize,
        frag_order: &[NodeId],
        graph: &AmrGraph,
        fragment: &AmrGraph,
        graph_edges: &HashSet<(NodeId, &str, NodeId)>,
        mapping: &mut Vec<NodeId>,
        used: &mut Vec<bool>,
        results: &mut Vec<Vec<NodeId>>,
    ) {
        if pos == frag_order.len() {
            results.push(mapping.clone());
            return;
        }
        let f = frag_order[pos];
        'cand: for g in 0..graph.nodes.len() {
            if used[g] || !label_eq(fragment.node(f), graph.node(g)) {
                continue;
            }
            // all fragment edges between f and already-placed nodes (or f itself)
            // must exist in the graph
            for e in &fragment.edges {
                let touches_f = e.source == f || e.target == f;
                if !touches_f {
                    continue;
                }
                let resolve = |x: NodeId| if x == f { Some(g) } else if mapping[x] != usize::MAX { Some(mapping[x]) } else { None };
                let (Some(src), Some(tgt)) = (resolve(e.source), resolve(e.target)) else {
                    continue;
                };
                if !graph_edges.contains(&(src, e.relation.as_str(), tgt)) {
                    continue 'cand;
                }
            }
            mapping[f] = g;
            used[g] = true;
            place(pos + 1, frag_order, graph, fragment, graph_edges, mapping, used, results);
            mapping[f] = usize::MAX;
            used[g] = false;
        }
    }

    place(0, &frag_order, graph, fragment, &graph_edges, &mut mapping, &mut used, &mut results);
    results.sort();
    results
}

/// One concrete placement of a rule in an input graph.
#[derive(Debug, Clone)]
pub struct MatchedRule {
    pub rule: Arc<Rule>,
    /// mapping[fragment NodeId] = input NodeId
    pub mapping: Vec<NodeId>,
    /// covered input NodeIds, ascending
    pub covered: Vec<NodeId>,
    /// covered input NodeIds in the fragment's breadth-first order
    pub order: Vec<NodeId>,
}

impl MatchedRule {
    pub fn new(rule: Arc<Rule>, mapping: Vec<NodeId>) -> Self {
        let mut covered = mapping.clone();
        covered.sort_unstable();
        let order: Vec<NodeId> =
            rule.fragment.bfs_order(rule.fragment.root).iter().map(|&f| mapping[f]).collect();
        MatchedRule { rule, mapping, covered, order }
    }

    /// Input node the fragment root maps to.
    pub fn root_node(&self) -> NodeId {
        self.mapping[self.rule.fragment.root]
    }

    pub fn first(&self) -> NodeId {
        self.order[0]
    }

    pub fn last(&self) -> NodeId {
        *self.order.last().unwrap()
    }

    /// Successor of `c` in the fragment's breadth-first order.
    pub fn next_after(&self, c: NodeId) -> Option<NodeId> {
        self.order.iter().position(|&x| x == c).and_then(|i| self.order.get(i + 1)).copied()
    }

    pub fn translation(&self) -> &[String] {
        &self.rule.translation
    }

    pub fn overlaps(&self, other: &MatchedRule) -> bool {
        // both covered lists are sorted
        let (mut i, mut j) = (0, 0);
        while i < self.covered.len() && j < other.covered.len() {
            match self.covered[i].cmp(&other.covered[j]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
            }
        }
        false
    }
}

/// All placements of bank rules whose fragment root concept occurs in the
/// graph. Deterministic order: root concept, then bank order, then mapping.
pub fn induced_candidates(graph: &AmrGraph, bank: &RuleBank) -> Vec<MatchedRule> {
    let present: BTreeSet<&str> = graph.nodes.iter().map(|n| n.concept.as_str()).collect();
    let mut out = Vec::new();
    for concept in present {
        for &idx in bank.rules_with_root(concept) {
            let rule = &bank.rules()[idx];
            for mapping in match_fragment(graph, &rule.fragment) {
                out.push(MatchedRule::new(Arc::clone(rule), mapping));
            }
        }
    }
    out
}

/// All placements of the per-graph fallback rules (concept, skip-list and
/// verbalization rules).
pub fn concept_candidates(
    graph: &AmrGraph,
    skip_list: &BTreeSet<String>,
    verbalizations: &[VerbalizationEntry],
) -> Vec<MatchedRule> {
    let mut out = Vec::new();
    for rule in generate_concept_rules(graph, skip_list, verbalizations) {
        let rule = Arc::new(rule);
        for mapping in match_fragment(graph, &rule.fragment) {
            out.push(MatchedRule::new(Arc::clone(&rule), mapping));
        }
    }
    out
}

/// Induced candidates followed by fallback candidates, de-duplicated: two
/// placements with the same covered order and the same translation behave
/// identically downstream, so only the first (induced wins) is kept.
pub fn candidates(
    graph: &AmrGraph,
    bank: &RuleBank,
    skip_list: &BTreeSet<String>,
    verbalizations: &[VerbalizationEntry],
) -> Vec<MatchedRule> {
    let mut out = induced_candidates(graph, bank);
    out.extend(concept_candidates(graph, skip_list, verbalizations));
    let mut seen: HashSet<(Vec<NodeId>, Vec<String>)> = HashSet::new();
    out.retain(|m| seen.insert((m.order.clone(), m.rule.translation.clone())));
    out
}

/// The default skip list: frame concepts that carry structure, not words.
pub fn default_skip_list() -> BTreeSet<String> {
    ["have-rel-role-91", "have-org-role-91", "multi-sentence", "amr-unknown"]
        .into_iter()
        .map(String::from)
        .collect()
}
