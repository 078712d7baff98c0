//! Backoff n-gram language model with interpolated absolute discounting.
//!
//! Probabilities are natural base-10 logs throughout, matching the ARPA file
//! format. Sentences are padded with `<s>` markers on the left and closed with
//! `</s>`; tokens never seen in training score through `<unk>`, whose unigram
//! probability comes from the discount mass, so every score is finite.

use std::collections::HashMap;
use std::fmt::Write as _;
use thiserror::Error;

pub const BEGIN: &str = "<s>";
pub const END: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Fixed absolute-discount constant.
pub const DISCOUNT: f64 = 0.75;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1, got {0}")]
    BadOrder(usize),
    #[error("ARPA format error at line {line}: {msg}")]
    Arpa { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

type TokenId = u32;

#[derive(Debug, Clone, Copy, Default)]
struct Entry {
    log_prob: f64,
    /// log10 backoff weight applied when a longer n-gram with this entry as
    /// context is missing. 0.0 means "back off with weight 1".
    log_bow: f64,
}

#[derive(Debug, Clone)]
pub struct NgramLm {
    order: usize,
    vocab: HashMap<String, TokenId>,
    words: Vec<String>,
    /// tables[m - 1] maps an m-gram (as token ids) to its entry.
    tables: Vec<HashMap<Vec<TokenId>, Entry>>,
}

impl NgramLm {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn ngram_count(&self, order: usize) -> usize {
        self.tables[order - 1].len()
    }

    /// All tokens the model can predict: everything except the begin marker.
    pub fn predictable_tokens(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(|s| s.as_str()).filter(|s| *s != BEGIN)
    }

    fn id_of(&self, token: &str) -> TokenId {
        *self.vocab.get(token).unwrap_or(&self.vocab[UNK])
    }

    /// log10 p(token | history), backing off through shorter histories.
    fn cond_log10_ids(&self, history: &[TokenId], token: TokenId) -> f64 {
        let start = history.len().saturating_sub(self.order - 1);
        self.backoff(&history[start..], token)
    }

    fn backoff(&self, h: &[TokenId], token: TokenId) -> f64 {
        let mut key = Vec::with_capacity(h.len() + 1);
        key.extend_from_slice(h);
        key.push(token);
        if let Some(e) = self.tables[h.len()].get(&key) {
            return e.log_prob;
        }
        if h.is_empty() {
            // every vocab token has a unigram row; anything else scores as <unk>
            return self.tables[0][&vec![self.vocab[UNK]]].log_prob;
        }
        let bow = self.tables[h.len() - 1].get(h).map(|e| e.log_bow).unwrap_or(0.0);
        bow + self.backoff(&h[1..], token)
    }

    /// log10 p(token | history tokens). Unknown tokens (in either position)
    /// are mapped to `<unk>`.
    pub fn cond_log10(&self, history: &[&str], token: &str) -> f64 {
        let h: Vec<TokenId> = history.iter().map(|t| self.id_of(t)).collect();
        self.cond_log10_ids(&h, self.id_of(token))
    }

    /// Sum of log10 conditionals for each token of `continuation`, with
    /// history seeded from a begin marker followed by `context`'s tail. An
    /// empty context therefore means sentence start.
    pub fn score_continuation(&self, context: &[&str], continuation: &[&str]) -> f64 {
        let mut history: Vec<TokenId> = vec![self.vocab[BEGIN]];
        history.extend(context.iter().map(|t| self.id_of(t)));
        let mut total = 0.0;
        for t in continuation {
            let id = self.id_of(t);
            total += self.cond_log10_ids(&history, id);
            history.push(id);
        }
        total
    }

    /// log10 probability of a complete sentence, including the end marker.
    pub fn score_sentence(&self, tokens: &[&str]) -> f64 {
        let mut all = tokens.to_vec();
        all.push(END);
        self.score_continuation(&[], &all)
    }
}

/// Train from tokenized sentences. Counts n-grams of every order over
/// begin-padded sentences, then computes interpolated absolute-discounted
/// probabilities bottom-up. Deterministic: the same corpus yields the same
/// model, and `write_arpa` emits sorted entries.
pub fn train(sentences: &[Vec<String>], order: usize) -> Result<NgramLm, LmError> {
    if order < 1 {
        return Err(LmError::BadOrder(order));
    }
    if sentences.is_empty() || sentences.iter().all(|s| s.is_empty()) {
        return Err(LmError::EmptyCorpus);
    }

    let mut vocab: HashMap<String, TokenId> = HashMap::new();
    let mut words: Vec<String> = Vec::new();
    let intern = |w: &str, vocab: &mut HashMap<String, TokenId>, words: &mut Vec<String>| {
        if let Some(&id) = vocab.get(w) {
            return id;
        }
        let id = words.len() as TokenId;
        vocab.insert(w.to_string(), id);
        words.push(w.to_string());
        id
    };
    let begin = intern(BEGIN, &mut vocab, &mut words);
    let end = intern(END, &mut vocab, &mut words);
    let _unk = intern(UNK, &mut vocab, &mut words);

    // Count m-grams for every order over sentences padded with one begin
    // marker and one end marker. N-grams whose last token is the begin marker
    // are skipped: <s> is context only, never predicted.
    let mut counts: Vec<HashMap<Vec<TokenId>, u64>> = vec![HashMap::new(); order];
    for sent in sentences {
        if sent.is_empty() {
            continue;
        }
        let mut ids: Vec<TokenId> = vec![begin];
        for w in sent {
            ids.push(intern(w, &mut vocab, &mut words));
        }
        ids.push(end);
        for m in 1..=order {
            for win in ids.windows(m) {
                if *win.last().unwrap() == begin {
                    continue;
                }
                *counts[m - 1].entry(win.to_vec()).or_insert(0) += 1;
            }
        }
    }

    // Context statistics per order: total continuation count and the number of
    // distinct continuations.
    let mut ctx_total: Vec<HashMap<Vec<TokenId>, u64>> = vec![HashMap::new(); order];
    let mut ctx_types: Vec<HashMap<Vec<TokenId>, u64>> = vec![HashMap::new(); order];
    for m in 2..=order {
        for (gram, &c) in &counts[m - 1] {
            let ctx = gram[..m - 1].to_vec();
            *ctx_total[m - 1].entry(ctx.clone()).or_insert(0) += c;
            *ctx_types[m - 1].entry(ctx).or_insert(0) += 1;
        }
    }

    let mut tables: Vec<HashMap<Vec<TokenId>, Entry>> = vec![HashMap::new(); order];

    // Unigrams: discount toward a uniform distribution over the predictable
    // vocabulary (observed types plus <unk>, minus <s>).
    let total_tokens: u64 = counts[0].values().sum();
    let unigram_types = counts[0].len() as f64;
    let predictable = words.iter().filter(|w| w.as_str() != BEGIN).count() as f64;
    let uniform = 1.0 / predictable;
    let gamma1 = DISCOUNT * unigram_types / total_tokens as f64;
    for (id, w) in words.iter().enumerate() {
        let id = id as TokenId;
        if w == BEGIN {
            // never predicted; present in ARPA so it can carry a backoff weight
            tables[0].insert(vec![id], Entry { log_prob: -99.0, log_bow: 0.0 });
            continue;
        }
        let c = counts[0].get(&vec![id]).copied().unwrap_or(0) as f64;
        let p = ((c - DISCOUNT).max(0.0) + gamma1 * total_tokens as f64 * uniform)
            / total_tokens as f64;
        tables[0].insert(vec![id], Entry { log_prob: p.log10(), log_bow: 0.0 });
    }

    // Higher orders, bottom-up. Every sub-gram of an observed gram is observed,
    // so the lower-order probability is a direct table lookup.
    for m in 2..=order {
        let grams: Vec<(Vec<TokenId>, u64)> =
            counts[m - 1].iter().map(|(g, &c)| (g.clone(), c)).collect();
        for (gram, c) in grams {
            let ctx = &gram[..m - 1];
            let total = ctx_total[m - 1][ctx] as f64;
            let types = ctx_types[m - 1][ctx] as f64;
            let gamma = DISCOUNT * types / total;
            let lower = tables[m - 2][&gram[1..].to_vec()].log_prob;
            let p = (c as f64 - DISCOUNT).max(0.0) / total + gamma * 10f64.powf(lower);
            tables[m - 1].insert(gram, Entry { log_prob: p.log10(), log_bow: 0.0 });
        }
        // Backoff weights live on the (m-1)-gram contexts.
        for (ctx, &total) in &ctx_total[m - 1] {
            let types = ctx_types[m - 1][ctx] as f64;
            let gamma = DISCOUNT * types / total as f64;
            if let Some(e) = tables[m - 2].get_mut(ctx) {
                e.log_bow = gamma.log10();
            }
        }
    }

    Ok(NgramLm { order, vocab, words, tables })
}

fn gram_to_string(lm: &NgramLm, gram: &[TokenId]) -> String {
    gram.iter().map(|&id| lm.words[id as usize].as_str()).collect::<Vec<_>>().join(" ")
}

/// Serialize in the ARPA backoff format, entries sorted per order. Scores keep
/// seven decimals, enough to round-trip well under 1e-4.
pub fn write_arpa(lm: &NgramLm) -> String {
    let mut out = String::from("\\data\\\n");
    for m in 1..=lm.order {
        let _ = writeln!(out, "ngram {}={}", m, lm.tables[m - 1].len());
    }
    for m in 1..=lm.order {
        let _ = writeln!(out, "\n\\{m}-grams:");
        let mut rows: Vec<(String, Entry)> = lm.tables[m - 1]
            .iter()
            .map(|(g, e)| (gram_to_string(lm, g), *e))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        for (gram, e) in rows {
            if m < lm.order && e.log_bow != 0.0 {
                let _ = writeln!(out, "{:.7}\t{}\t{:.7}", e.log_prob, gram, e.log_bow);
            } else {
                let _ = writeln!(out, "{:.7}\t{}", e.log_prob, gram);
            }
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

/// Parse an ARPA file produced by [`write_arpa`] or compatible tools.
pub fn read_arpa(text: &str) -> Result<NgramLm, LmError> {
    let mut lines = text.lines().enumerate().peekable();
    let arpa_err = |line: usize, msg: &str| LmError::Arpa { line: line + 1, msg: msg.to_string() };

    // header
    let mut declared: Vec<usize> = Vec::new();
    let mut found_data = false;
    for (i, line) in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() {
            if found_data && !declared.is_empty() {
                break;
            }
            continue;
        }
        if line == "\\data\\" {
            found_data = true;
            continue;
        }
        if !found_data {
            continue; // leading junk tolerated
        }
        let rest = line
            .strip_prefix("ngram ")
            .ok_or_else(|| arpa_err(i, "expected 'ngram N=count' line"))?;
        let (n, count) =
            rest.split_once('=').ok_or_else(|| arpa_err(i, "expected 'ngram N=count' line"))?;
        let n: usize = n.trim().parse().map_err(|_| arpa_err(i, "bad n-gram order"))?;
        let count: usize = count.trim().parse().map_err(|_| arpa_err(i, "bad n-gram count"))?;
        if n != declared.len() + 1 {
            return Err(arpa_err(i, "n-gram orders must be consecutive from 1"));
        }
        declared.push(count);
    }
    if !found_data || declared.is_empty() {
        return Err(arpa_err(0, "missing \\data\\ header"));
    }

    let order = declared.len();
    let mut vocab: HashMap<String, TokenId> = HashMap::new();
    let mut words: Vec<String> = Vec::new();
    let mut tables: Vec<HashMap<Vec<TokenId>, Entry>> = vec![HashMap::new(); order];

    let mut current: Option<usize> = None;
    let mut last_line = 0usize;
    for (i, raw) in lines {
        last_line = i;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            current = Some(usize::MAX);
            break;
        }
        if let Some(rest) = line.strip_prefix('\\') {
            let m: usize = rest
                .strip_suffix("-grams:")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| arpa_err(i, "unrecognized section header"))?;
            if m < 1 || m > order {
                return Err(arpa_err(i, "section order out of range"));
            }
            current = Some(m);
            continue;
        }
        let m = match current {
            Some(m) if m != usize::MAX => m,
            _ => return Err(arpa_err(i, "entry outside any n-gram section")),
        };
        let mut fields = line.split('\t');
        let (prob, gram, bow) = match (fields.next(), fields.next(), fields.next()) {
            (Some(p), Some(g), b) => (p, g, b),
            _ => {
                // fall back to whitespace splitting
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() < m + 1 {
                    return Err(arpa_err(i, "too few fields for this order"));
                }
                let bow = if parts.len() == m + 2 { Some(parts[m + 1]) } else { None };
                let joined = parts[1..=m].join(" ");
                let prob: f64 =
                    parts[0].parse().map_err(|_| arpa_err(i, "bad probability"))?;
                let bow: f64 = match bow {
                    Some(b) => b.parse().map_err(|_| arpa_err(i, "bad backoff weight"))?,
                    None => 0.0,
                };
                insert_gram(&mut vocab, &mut words, &mut tables[m - 1], &joined, prob, bow, m)
                    .map_err(|msg| arpa_err(i, &msg))?;
                continue;
            }
        };
        let prob: f64 = prob.trim().parse().map_err(|_| arpa_err(i, "bad probability"))?;
        let bow: f64 = match bow {
            Some(b) => b.trim().parse().map_err(|_| arpa_err(i, "bad backoff weight"))?,
            None => 0.0,
        };
        insert_gram(&mut vocab, &mut words, &mut tables[m - 1], gram, prob, bow, m)
            .map_err(|msg| arpa_err(i, &msg))?;
    }
    if current != Some(usize::MAX) {
        return Err(arpa_err(last_line, "missing \\end\\ marker"));
    }
    for m in 1..=order {
        if tables[m - 1].len() != declared[m - 1] {
            return Err(arpa_err(
                last_line,
                &format!(
                    "ngram {} declares {} entries but {} were read",
                    m,
                    declared[m - 1],
                    tables[m - 1].len()
                ),
            ));
        }
    }
    for special in [BEGIN, END, UNK] {
        if !vocab.contains_key(special) {
            let id = words.len() as TokenId;
            vocab.insert(special.to_string(), id);
            words.push(special.to_string());
            if special != BEGIN {
                return Err(arpa_err(last_line, &format!("missing unigram for {special}")));
            }
            tables[0].insert(vec![id], Entry { log_prob: -99.0, log_bow: 0.0 });
        }
    }
    Ok(NgramLm { order, vocab, words, tables })
}

fn insert_gram(
    vocab: &mut HashMap<String, TokenId>,
    words: &mut Vec<String>,
    table: &mut HashMap<Vec<TokenId>, Entry>,
    gram: &str,
    log_prob: f64,
    log_bow: f64,
    m: usize,
) -> Result<(), String> {
    let ids: Vec<TokenId> = gram
        .split_whitespace()
        .map(|w| {
            if let Some(&id) = vocab.get(w) {
                id
            } else {
                let id = words.len() as TokenId;
                vocab.insert(w.to_string(), id);
                words.push(w.to_string());
                id
            }
        })
        .collect();
    if ids.len() != m {
        return Err(format!("gram '{gram}' has {} tokens, expected {m}", ids.len()));
    }
    table.insert(ids, Entry { log_prob, log_bow });
    Ok(())
}
