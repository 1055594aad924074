//! Add-k smoothed n-gram reference backend.
//!
//! Corpus files hold one whitespace-tokenized sequence per line. Each line is
//! padded with `order - 1` [`BOS`] symbols and terminated with an end-of-sequence
//! token, and every token in it is counted against its preceding `order - 1`
//! symbols:
//!
//! ```text
//! P(w | h) = (count(h, w) + k) / (count(h) + k * |V|)
//! ```
//!
//! The vocabulary `V` is every word seen in the corpus plus the end-of-sequence
//! token. When scoring, an example is rendered with [`render_example`] and the
//! reply prefix is appended after it, so training lines should follow the same
//! layout (see [`NGramModel::training_line`]).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scorer, TokenDistribution};
use crate::data::{Example, TokenId};
use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const MESSAGE_TAG: &str = "<msg>";
pub const REPLY_TAG: &str = "<reply>";

const FORMAT: &str = "autoreply-ngram/1";

/// Renders an example as the symbol sequence a reply is conditioned on: each
/// context block as `<role>` followed by its words, then the message after
/// [`MESSAGE_TAG`], then [`REPLY_TAG`]. Text is lowercased.
pub fn render_example(ex: &Example) -> Vec<String> {
    let mut out = Vec::new();
    for block in &ex.context {
        out.push(format!("<{}>", block.role.to_lowercase()));
        out.extend(words(&block.text));
    }
    out.push(MESSAGE_TAG.to_string());
    out.extend(words(&ex.message));
    out.push(REPLY_TAG.to_string());
    out
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct HistoryCounts {
    total: u64,
    next: BTreeMap<TokenId, u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    order: usize,
    k: f64,
    vocab: Vec<String>,
    eos: TokenId,
    counts: Vec<CountRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CountRow {
    history: Vec<String>,
    next: Vec<(TokenId, u64)>,
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    k: f64,
    vocab: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
    counts: HashMap<Vec<String>, HistoryCounts>,
    version: String,
}

impl NGramModel {
    pub fn from_corpus_text(text: &str, order: usize, k: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if k.is_nan() || k <= 0.0 {
            return Err(Error::Config(format!("smoothing k must be positive, got {k}")));
        }
        let lines: Vec<Vec<String>> = text
            .lines()
            .map(|l| words(l).collect::<Vec<_>>())
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(Error::Invalid("empty corpus".into()));
        }
        let mut vocab: Vec<String> = lines.iter().flatten().cloned().collect();
        vocab.sort();
        vocab.dedup();
        vocab.retain(|w| w != EOS && w != BOS);
        vocab.push(EOS.to_string());
        let index: HashMap<String, TokenId> = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let eos = index[EOS];

        let mut counts: HashMap<Vec<String>, HistoryCounts> = HashMap::new();
        for line in &lines {
            let mut seq = vec![BOS.to_string(); order - 1];
            seq.extend(line.iter().cloned());
            seq.push(EOS.to_string());
            for i in (order - 1)..seq.len() {
                let history = seq[i + 1 - order..i].to_vec();
                let tok = index[&seq[i]];
                let slot = counts.entry(history).or_default();
                slot.total += 1;
                *slot.next.entry(tok).or_insert(0) += 1;
            }
        }
        Ok(Self::assemble(order, k, vocab, eos, counts))
    }

    pub fn train(corpus: &Path, order: usize, k: f64) -> Result<Self> {
        let text = fs::read_to_string(corpus).map_err(|e| Error::io(corpus, e))?;
        Self::from_corpus_text(&text, order, k)
    }

    fn assemble(
        order: usize,
        k: f64,
        vocab: Vec<String>,
        eos: TokenId,
        counts: HashMap<Vec<String>, HistoryCounts>,
    ) -> Self {
        let index = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        let mut model = Self {
            order,
            k,
            vocab,
            index,
            eos,
            counts,
            version: String::new(),
        };
        let digest = crate::manifest::sha256_hex(model.to_file_string().as_bytes());
        model.version = format!("ngram:{}", &digest[..16]);
        model
    }

    /// Corpus line for an example followed by a reply, in the layout used when
    /// scoring.
    pub fn training_line(ex: &Example, reply: &str) -> String {
        let mut parts = render_example(ex);
        parts.extend(words(reply));
        parts.join(" ")
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Add-k conditional distribution for an explicit history of symbols. Only
    /// the last `order - 1` symbols are used; shorter histories are BOS-padded.
    pub fn distribution_for_history(&self, history: &[String]) -> TokenDistribution {
        let need = self.order - 1;
        let mut h: Vec<String> = Vec::with_capacity(need);
        if history.len() < need {
            h.extend(std::iter::repeat_n(BOS.to_string(), need - history.len()));
            h.extend(history.iter().cloned());
        } else {
            h.extend(history[history.len() - need..].iter().cloned());
        }
        let v = self.vocab.len() as f64;
        let counts = self.counts.get(&h);
        let total = counts.map_or(0, |c| c.total) as f64;
        let denom = total + self.k * v;
        let probs = (0..self.vocab.len() as TokenId).map(|t| {
            let c = counts.and_then(|c| c.next.get(&t)).copied().unwrap_or(0) as f64;
            (t, (c + self.k) / denom)
        });
        TokenDistribution::from_probs(probs).expect("add-k estimate is a distribution")
    }

    pub fn to_file_string(&self) -> String {
        let mut rows: Vec<CountRow> = self
            .counts
            .iter()
            .map(|(h, c)| CountRow {
                history: h.clone(),
                next: c.next.iter().map(|(t, n)| (*t, *n)).collect(),
            })
            .collect();
        rows.sort_by(|a, b| a.history.cmp(&b.history));
        let file = ModelFile {
            format: FORMAT.into(),
            order: self.order,
            k: self.k,
            vocab: self.vocab.clone(),
            eos: self.eos,
            counts: rows,
        };
        serde_json::to_string(&file).expect("model serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != FORMAT {
            return Err(Error::Invalid(format!("unsupported model format {:?}", file.format)));
        }
        if file.order == 0 || file.vocab.get(file.eos as usize).map(String::as_str) != Some(EOS) {
            return Err(Error::Invalid("corrupt n-gram header".into()));
        }
        let counts = file
            .counts
            .into_iter()
            .map(|row| {
                let next: BTreeMap<TokenId, u64> = row.next.into_iter().collect();
                let total = next.values().sum();
                (row.history, HistoryCounts { total, next })
            })
            .collect();
        Ok(Self::assemble(file.order, file.k, file.vocab, file.eos, counts))
    }
}

impl Scorer for NGramModel {
    fn version(&self) -> String {
        self.version.clone()
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn eos_token(&self) -> Option<TokenId> {
        Some(self.eos)
    }

    fn next_token_logprobs(&self, ex: &Example, prefix: &[TokenId]) -> Result<TokenDistribution> {
        let mut history = render_example(ex);
        for &t in prefix {
            let w = self.vocab.get(t as usize).ok_or(Error::UnknownToken(t))?;
            history.push(w.clone());
        }
        Ok(self.distribution_for_history(&history))
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        words(text)
            .map(|w| self.index.get(&w).copied().ok_or(Error::UnknownWord(w)))
            .collect()
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| {
                self.vocab
                    .get(t as usize)
                    .map(String::as_str)
                    .ok_or(Error::UnknownToken(t))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}
