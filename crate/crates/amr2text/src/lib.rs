//! AMR-to-text generation.
//!
//! The pipeline turns an abstract meaning representation (a rooted, directed,
//! labeled graph in penman notation) into a sentence:
//!
//! 1. [`amr`] parses penman text into a graph.
//! 2. [`rulebank`] matches graph-to-string rules against the input, so every
//!    concept is covered by at least one candidate rule.
//! 3. [`agtsp`] arranges the matched rules as an asymmetric generalized TSP:
//!    one group per input concept, one node per (concept, rule) pair, and a
//!    transition-cost matrix that prices rule-to-rule adjacency.
//! 4. [`transition`] supplies those prices with a binary maxent classifier over
//!    a language-model score, a word count, and a graph-distance feature.
//! 5. [`lm`] is the n-gram language model behind the classifier's main feature.
//! 6. [`generator`] solves the tour, decodes it back into words, and scores
//!    output with corpus BLEU.
//! 7. [`cli`] wires everything into `train-lm`, `train-transitions`,
//!    `generate`, and `evaluate` subcommands.

pub mod agtsp;
pub mod amr;
pub mod cli;
pub mod generator;
pub mod lm;
pub mod rulebank;
pub mod transition;
