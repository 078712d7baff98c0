//! Penman-notation AMR graphs.
//!
//! An AMR is a rooted, directed, labeled graph. Instance nodes carry a variable and a
//! concept label, e.g. `(w / want-01)`. Attribute values (`-`, numbers, quoted strings)
//! become constant nodes. A bare variable token repeating a defined variable adds a
//! re-entrant edge to the existing node instead of a new node.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use thiserror::Error;

pub type NodeId = usize;

/// One node of an AMR graph. Constants have an empty `variable` and keep their
/// lexeme (including quotes, if any) in `concept`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptNode {
    pub id: NodeId,
    pub variable: String,
    pub concept: String,
    pub is_constant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub source: NodeId,
    pub relation: String,
    pub target: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmrGraph {
    pub nodes: Vec<ConceptNode>,
    pub edges: Vec<Edge>,
    pub root: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    EmptyInput,
    UnbalancedParen(String),
    Expected { expected: &'static str, found: String },
    VariableRedefined { variable: String, first_concept: String, second_concept: String },
    UndefinedVariable { variable: String },
    UnterminatedString,
    TrailingInput(String),
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::EmptyInput => write!(f, "empty input"),
            ParseErrorKind::UnbalancedParen(d) => write!(f, "unbalanced parentheses: {d}"),
            ParseErrorKind::Expected { expected, found } => {
                write!(f, "expected {expected}, found {found}")
            }
            ParseErrorKind::VariableRedefined { variable, first_concept, second_concept } => {
                write!(
                    f,
                    "variable '{variable}' redefined: first as '{first_concept}', then as '{second_concept}'"
                )
            }
            ParseErrorKind::UndefinedVariable { variable } => {
                write!(f, "reference to undefined variable '{variable}'")
            }
            ParseErrorKind::UnterminatedString => write!(f, "unterminated string literal"),
            ParseErrorKind::TrailingInput(t) => write!(f, "trailing input after graph: {t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at line {line}, column {col}: {kind}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub col: usize,
}

/// Bare tokens that are always attribute constants, never variable references.
const SYMBOL_CONSTANTS: [&str; 5] = ["-", "+", "imperative", "expressive", "interrogative"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    LParen,
    RParen,
    Slash,
    Role(String),
    Symbol(String),
    Quoted(String), // lexeme including the surrounding quotes
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn err(kind: ParseErrorKind, line: usize, col: usize) -> ParseError {
    ParseError { kind, line, col }
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut toks = Vec::new();
    let mut line = 1usize;
    let mut col = 1usize;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '#' => {
                // comment to end of line
                while let Some(&c2) = chars.peek() {
                    if c2 == '\n' {
                        break;
                    }
                    chars.next();
                    col += 1;
                }
            }
            '(' | ')' | '/' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    _ => Tok::Slash,
                };
                toks.push(Spanned { tok, line, col });
                chars.next();
                col += 1;
            }
            '"' => {
                let (sl, sc) = (line, col);
                chars.next();
                col += 1;
                let mut s = String::from('"');
                loop {
                    match chars.next() {
                        None => return Err(err(ParseErrorKind::UnterminatedString, sl, sc)),
                        Some('\n') => return Err(err(ParseErrorKind::UnterminatedString, sl, sc)),
                        Some('"') => {
                            col += 1;
                            s.push('"');
                            break;
                        }
                        Some(c2) => {
                            col += 1;
                            s.push(c2);
                        }
                    }
                }
                toks.push(Spanned { tok: Tok::Quoted(s), line: sl, col: sc });
            }
            _ => {
                let (sl, sc) = (line, col);
                let mut s = String::new();
                while let Some(&c2) = chars.peek() {
                    if c2.is_whitespace() || matches!(c2, '(' | ')' | '/' | '"') {
                        break;
                    }
                    s.push(c2);
                    chars.next();
                    col += 1;
                }
                let tok = if let Some(rest) = s.strip_prefix(':') {
                    Tok::Role(format!(":{rest}"))
                } else {
                    Tok::Symbol(s)
                };
                toks.push(Spanned { tok, line: sl, col: sc });
            }
        }
    }
    Ok(toks)
}

/// True for tokens shaped like AMR variables (`b`, `b2`, `ii`): all lowercase
/// ASCII letters and digits, starting with a letter.
fn variable_shaped(s: &str) -> bool {
    let mut cs = s.chars();
    match cs.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    nodes: Vec<ConceptNode>,
    edges: Vec<Edge>,
    var_ids: HashMap<String, NodeId>,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eof_err(&self, expected: &'static str) -> ParseError {
        let (line, col) = self
            .toks
            .last()
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1));
        err(
            ParseErrorKind::UnbalancedParen(format!("input ended while expecting {expected}")),
            line,
            col,
        )
    }

    /// Collect every `( var / concept` definition up front so that backward and
    /// forward references resolve to the same node. Redefinition is an error.
    fn scan_definitions(&mut self) -> Result<(), ParseError> {
        let mut concepts: HashMap<String, String> = HashMap::new();
        for i in 0..self.toks.len() {
            let (a, b, c) = (self.toks.get(i), self.toks.get(i + 1), self.toks.get(i + 2));
            let (Some(a), Some(b), Some(c)) = (a, b, c) else { continue };
            if a.tok != Tok::LParen || c.tok != Tok::Slash {
                continue;
            }
            let Tok::Symbol(var) = &b.tok else { continue };
            let concept = match self.toks.get(i + 3).map(|s| &s.tok) {
                Some(Tok::Symbol(c)) => c.clone(),
                _ => String::new(), // the main parse reports the real error with position
            };
            if let Some(first) = concepts.get(var) {
                return Err(err(
                    ParseErrorKind::VariableRedefined {
                        variable: var.clone(),
                        first_concept: first.clone(),
                        second_concept: concept,
                    },
                    b.line,
                    b.col,
                ));
            }
            concepts.insert(var.clone(), concept);
            let id = self.nodes.len();
            self.nodes.push(ConceptNode {
                id,
                variable: var.clone(),
                concept: String::new(), // filled in by parse_node
                is_constant: false,
            });
            self.var_ids.insert(var.clone(), id);
        }
        Ok(())
    }

    fn parse_node(&mut self) -> Result<NodeId, ParseError> {
        let open = self.next().ok_or_else(|| self.eof_err("'('"))?;
        if open.tok != Tok::LParen {
            return Err(err(
                ParseErrorKind::Expected { expected: "'('", found: format!("{:?}", open.tok) },
                open.line,
                open.col,
            ));
        }
        let var_tok = self.next().ok_or_else(|| self.eof_err("variable"))?;
        let var = match &var_tok.tok {
            Tok::Symbol(v) => v.clone(),
            other => {
                return Err(err(
                    ParseErrorKind::Expected { expected: "variable", found: format!("{other:?}") },
                    var_tok.line,
                    var_tok.col,
                ))
            }
        };
        let slash = self.next().ok_or_else(|| self.eof_err("'/'"))?;
        if slash.tok != Tok::Slash {
            return Err(err(
                ParseErrorKind::Expected { expected: "'/'", found: format!("{:?}", slash.tok) },
                slash.line,
                slash.col,
            ));
        }
        let concept_tok = self.next().ok_or_else(|| self.eof_err("concept"))?;
        let concept = match &concept_tok.tok {
            Tok::Symbol(c) => c.clone(),
            other => {
                return Err(err(
                    ParseErrorKind::Expected { expected: "concept", found: format!("{other:?}") },
                    concept_tok.line,
                    concept_tok.col,
                ))
            }
        };
        let id = self.var_ids[&var]; // pre-created by scan_definitions
        self.nodes[id].concept = concept;

        loop {
            let t = self.next().ok_or_else(|| self.eof_err("')' or role"))?;
            match t.tok {
                Tok::RParen => return Ok(id),
                Tok::Role(rel) => {
                    let target = self.parse_target()?;
                    self.edges.push(Edge { source: id, relation: rel, target });
                }
                other => {
                    return Err(err(
                        ParseErrorKind::Expected {
                            expected: "')' or role",
                            found: format!("{other:?}"),
                        },
                        t.line,
                        t.col,
                    ))
                }
            }
        }
    }

    fn parse_target(&mut self) -> Result<NodeId, ParseError> {
        let t = self.peek().cloned().ok_or_else(|| self.eof_err("role target"))?;
        match t.tok {
            Tok::LParen => self.parse_node(),
            Tok::Quoted(lex) => {
                self.pos += 1;
                Ok(self.new_constant(lex))
            }
            Tok::Symbol(s) => {
                self.pos += 1;
                if let Some(&id) = self.var_ids.get(&s) {
                    return Ok(id); // re-entrant reference
                }
                if SYMBOL_CONSTANTS.contains(&s.as_str()) || !variable_shaped(&s) {
                    return Ok(self.new_constant(s));
                }
                Err(err(ParseErrorKind::UndefinedVariable { variable: s }, t.line, t.col))
            }
            other => Err(err(
                ParseErrorKind::Expected { expected: "role target", found: format!("{other:?}") },
                t.line,
                t.col,
            )),
        }
    }

    fn new_constant(&mut self, lexeme: String) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(ConceptNode {
            id,
            variable: String::new(),
            concept: lexeme,
            is_constant: true,
        });
        id
    }
}

/// Parse a single penman expression. Whitespace and `#` comments around and inside
/// the expression are tolerated.
pub fn parse_penman(text: &str) -> Result<AmrGraph, ParseError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(err(ParseErrorKind::EmptyInput, 1, 1));
    }
    let mut p = Parser { toks, pos: 0, nodes: Vec::new(), edges: Vec::new(), var_ids: HashMap::new() };
    p.scan_definitions()?;
    let root = p.parse_node()?;
    if let Some(extra) = p.peek() {
        let kind = match &extra.tok {
            Tok::RParen => ParseErrorKind::UnbalancedParen("extra ')'".to_string()),
            other => ParseErrorKind::TrailingInput(format!("{other:?}")),
        };
        return Err(err(kind, extra.line, extra.col));
    }
    Ok(AmrGraph { nodes: p.nodes, edges: p.edges, root })
}

impl AmrGraph {
    pub fn node(&self, id: NodeId) -> &ConceptNode {
        &self.nodes[id]
    }

    pub fn node_by_variable(&self, var: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| !n.is_constant && n.variable == var).map(|n| n.id)
    }

    pub fn out_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.source == id)
    }

    /// Nodes reachable from `start` along directed edges, visited breadth-first.
    /// Edges are expanded in stored (textual) order; re-visits are skipped.
    pub fn bfs_order(&self, start: NodeId) -> Vec<NodeId> {
        let mut order = Vec::new();
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for e in self.out_edges(u) {
                if !seen[e.target] {
                    seen[e.target] = true;
                    queue.push_back(e.target);
                }
            }
        }
        order
    }

    /// Shortest-path length between two nodes, ignoring edge direction.
    /// `None` if they are not connected.
    pub fn undirected_distance(&self, a: NodeId, b: NodeId) -> Option<usize> {
        if a == b {
            return Some(0);
        }
        let mut adj: Vec<Vec<NodeId>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.source].push(e.target);
            adj[e.target].push(e.source);
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[a] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(a);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    if v == b {
                        return Some(dist[v]);
                    }
                    queue.push_back(v);
                }
            }
        }
        None
    }

    /// Serialize back to penman. The first occurrence of each instance node expands
    /// in place; later occurrences print just the variable.
    pub fn to_penman(&self) -> String {
        let mut out = String::new();
        let mut seen = vec![false; self.nodes.len()];
        self.write_node(self.root, &mut seen, &mut out);
        out
    }

    fn write_node(&self, id: NodeId, seen: &mut [bool], out: &mut String) {
        let n = &self.nodes[id];
        if n.is_constant {
            out.push_str(&n.concept);
            return;
        }
        if seen[id] {
            out.push_str(&n.variable);
            return;
        }
        seen[id] = true;
        out.push('(');
        out.push_str(&n.variable);
        out.push_str(" / ");
        out.push_str(&n.concept);
        for e in self.out_edges(id) {
            out.push(' ');
            out.push_str(&e.relation);
            out.push(' ');
            self.write_node(e.target, seen, out);
        }
        out.push(')');
    }
}

/// Build small graphs programmatically (rule fragments, tests).
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<ConceptNode>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn concept(&mut self, variable: &str, concept: &str) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(ConceptNode {
            id,
            variable: variable.to_string(),
            concept: concept.to_string(),
            is_constant: false,
        });
        id
    }

    pub fn constant(&mut self, lexeme: &str) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(ConceptNode {
            id,
            variable: String::new(),
            concept: lexeme.to_string(),
            is_constant: true,
        });
        id
    }

    pub fn edge(&mut self, source: NodeId, relation: &str, target: NodeId) {
        self.edges.push(Edge { source, relation: relation.to_string(), target });
    }

    pub fn build(self, root: NodeId) -> AmrGraph {
        AmrGraph { nodes: self.nodes, edges: self.edges, root }
    }
}

/// One block of an AMR-bank file: `# ::key value` metadata lines followed by a
/// penman expression, blocks separated by blank lines.
#[derive(Debug, Clone)]
pub struct AmrBlock {
    pub metadata: Vec<(String, String)>,
    pub graph_text: String,
    pub first_line: usize,
}

impl AmrBlock {
    /// The reference sentence from a `# ::snt` line, if present.
    pub fn sentence(&self) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == "snt").map(|(_, v)| v.as_str())
    }
}

/// Split an AMR-bank file into blocks. Blocks with no graph text (file headers,
/// comment runs) are dropped.
pub fn read_amr_bank(text: &str) -> Vec<AmrBlock> {
    let mut blocks = Vec::new();
    let mut metadata: Vec<(String, String)> = Vec::new();
    let mut graph_text = String::new();
    let mut first_line = 0usize;
    let mut flush = |metadata: &mut Vec<(String, String)>, graph_text: &mut String, first_line: usize| {
        if !graph_text.trim().is_empty() {
            blocks.push(AmrBlock {
                metadata: std::mem::take(metadata),
                graph_text: std::mem::take(graph_text),
                first_line,
            });
        } else {
            metadata.clear();
            graph_text.clear();
        }
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            flush(&mut metadata, &mut graph_text, first_line);
            continue;
        }
        if metadata.is_empty() && graph_text.is_empty() {
            first_line = lineno;
        }
        if let Some(rest) = line.trim_start().strip_prefix("# ::") {
            let (key, value) = match rest.split_once(char::is_whitespace) {
                Some((k, v)) => (k.to_string(), v.trim().to_string()),
                None => (rest.trim().to_string(), String::new()),
            };
            metadata.push((key, value));
        } else if line.trim_start().starts_with('#') {
            // plain comment, ignore
        } else {
            graph_text.push_str(line);
            graph_text.push('\n');
        }
    }
    flush(&mut metadata, &mut graph_text, first_line);
    blocks
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const BOY_WANTS_GO: &str = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-01 :ARG0 b))";
    const BELIEVE: &str =
        "(w / want-01 :ARG0 (b / boy) :ARG1 (b2 / believe-01 :ARG0 (g / girl) :ARG1 b))";

    #[test]
    fn parses_reentrant_graph() {
        let g = parse_penman(BOY_WANTS_GO).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges.len(), 3);
        let w = g.node_by_variable("w").unwrap();
        let b = g.node_by_variable("b").unwrap();
        assert_eq!(g.root, w);
        assert_eq!(g.node(w).concept, "want-01");
        // b is the target of both the ARG0 of w and the ARG0 of g
        let b_in = g.edges.iter().filter(|e| e.target == b).count();
        assert_eq!(b_in, 2);
    }

    #[test]
    fn parses_constants() {
        let g = parse_penman(
            "(s / say-01 :polarity - :ARG0 (p / person :name (n / name :op1 \"Obama\")) :quant 3)",
        )
        .unwrap();
        let consts: Vec<&str> = g
            .nodes
            .iter()
            .filter(|n| n.is_constant)
            .map(|n| n.concept.as_str())
            .collect();
        assert_eq!(consts, vec!["-", "\"Obama\"", "3"]);
    }

    #[test]
    fn forward_reference_resolves() {
        let g = parse_penman("(w / want-01 :ARG1 g :ARG0 (g / go-01))").unwrap();
        assert_eq!(g.nodes.len(), 2);
        assert_eq!(g.edges.len(), 2);
    }

    #[test]
    fn error_unbalanced() {
        let e = parse_penman("(w / want-01 :ARG0 (b / boy)").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnbalancedParen(_)), "{e}");
        let e = parse_penman("(w / want-01))").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UnbalancedParen(_)), "{e}");
    }

    #[test]
    fn error_redefined() {
        let e = parse_penman("(w / want-01 :ARG0 (w / boy))").unwrap_err();
        match e.kind {
            ParseErrorKind::VariableRedefined { variable, first_concept, second_concept } => {
                assert_eq!(variable, "w");
                assert_eq!(first_concept, "want-01");
                assert_eq!(second_concept, "boy");
            }
            other => panic!("wrong kind: {other:?}"),
        }
    }

    #[test]
    fn error_undefined_variable() {
        let e = parse_penman("(w / want-01 :ARG0 b)").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::UndefinedVariable { .. }), "{e}");
        assert_eq!((e.line, e.col), (1, 20));
    }

    #[test]
    fn error_empty() {
        let e = parse_penman("   \n# only a comment\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::EmptyInput));
    }

    #[test]
    fn bfs_follows_edge_order() {
        let g = parse_penman(BOY_WANTS_GO).unwrap();
        let order: Vec<&str> =
            g.bfs_order(g.root).iter().map(|&id| g.node(id).concept.as_str()).collect();
        assert_eq!(order, vec!["want-01", "boy", "go-01"]);

        let frag = parse_penman("(w / want-01 :ARG1 (g / go-01))").unwrap();
        let order: Vec<&str> =
            frag.bfs_order(frag.root).iter().map(|&id| frag.node(id).concept.as_str()).collect();
        assert_eq!(order, vec!["want-01", "go-01"]);
    }

    #[test]
    fn bfs_reaches_all_nodes() {
        for text in [BOY_WANTS_GO, BELIEVE, "(b / boy)"] {
            let g = parse_penman(text).unwrap();
            assert_eq!(g.bfs_order(g.root).len(), g.nodes.len());
        }
    }

    #[test]
    fn undirected_distances() {
        let g = parse_penman(BELIEVE).unwrap();
        let w = g.node_by_variable("w").unwrap();
        let b = g.node_by_variable("b").unwrap();
        let b2 = g.node_by_variable("b2").unwrap();
        let girl = g.node_by_variable("g").unwrap();
        assert_eq!(g.undirected_distance(w, girl), Some(2));
        assert_eq!(g.undirected_distance(girl, w), Some(2));
        assert_eq!(g.undirected_distance(w, b), Some(1));
        assert_eq!(g.undirected_distance(b2, b), Some(1)); // via the re-entrant ARG1
        assert_eq!(g.undirected_distance(w, w), Some(0));
    }

    fn canon(g: &AmrGraph) -> (BTreeSet<String>, BTreeSet<String>) {
        let nodes = g
            .nodes
            .iter()
            .map(|n| format!("{}|{}|{}", n.variable, n.concept, n.is_constant))
            .collect();
        let key = |id: NodeId| {
            let n = g.node(id);
            if n.is_constant {
                format!("const:{}", n.concept)
            } else {
                format!("var:{}", n.variable)
            }
        };
        let edges =
            g.edges.iter().map(|e| format!("{} {} {}", key(e.source), e.relation, key(e.target))).collect();
        (nodes, edges)
    }

    #[test]
    fn penman_round_trip() {
        for text in [
            BOY_WANTS_GO,
            BELIEVE,
            "(b / boy)",
            "(s / say-01 :polarity - :ARG0 (p / person :name (n / name :op1 \"Barack Obama\")) :quant 3 :mode interrogative)",
        ] {
            let g1 = parse_penman(text).unwrap();
            let g2 = parse_penman(&g1.to_penman()).unwrap();
            assert_eq!(canon(&g1), canon(&g2), "round trip changed {text}");
        }
    }

    #[test]
    fn reads_amr_bank_blocks() {
        let text = "# AMR corpus header\n\n# ::id x1 \n# ::snt The boy wants to go\n(w / want-01 :ARG0 (b / boy)\n   :ARG1 (g / go-01 :ARG0 b))\n\n# ::snt A girl.\n(g / girl)\n";
        let blocks = read_amr_bank(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].sentence(), Some("The boy wants to go"));
        assert_eq!(blocks[1].sentence(), Some("A girl."));
        let g = parse_penman(&blocks[0].graph_text).unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(blocks[1].first_line, 8);
    }
}
