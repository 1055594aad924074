//! Deterministic table-driven backend used for fixtures and oracle tests.
//!
//! Fixture file layout:
//!
//! ```json
//! {
//!   "version": "f1",
//!   "vocab": ["u", "v", "w", "<eos>"],
//!   "eos": 3,
//!   "tables": {
//!     "B1": { "": {"0": 0.6, "1": 0.3, "2": 0.05, "3": 0.05} },
//!     "*":  { "*": {"0": 0.25, "1": 0.25, "2": 0.25, "3": 0.25} }
//!   }
//! }
//! ```
//!
//! Outer keys are example ids, inner keys are reply prefixes written as
//! space-separated token ids (`""` is the empty prefix). `"*"` matches any example
//! or any prefix. Lookup order: exact example and prefix, exact example with any
//! prefix, any example with exact prefix, then any/any. Every table must cover the
//! whole vocabulary.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scorer, TokenDistribution};
use crate::data::{Example, TokenId};
use crate::error::{Error, Result};

const ANY: &str = "*";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularFixture {
    pub version: String,
    pub vocab: Vec<String>,
    #[serde(default)]
    pub eos: Option<TokenId>,
    pub tables: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum PrefixKey {
    Any,
    Exact(Vec<TokenId>),
}

#[derive(Debug, Clone)]
pub struct TabularScorer {
    version: String,
    vocab: Vec<String>,
    eos: Option<TokenId>,
    tables: HashMap<String, HashMap<PrefixKey, TokenDistribution>>,
}

impl TabularScorer {
    pub fn new(version: &str, vocab: &[&str], eos: Option<TokenId>) -> Self {
        Self {
            version: version.into(),
            vocab: vocab.iter().map(|s| s.to_string()).collect(),
            eos,
            tables: HashMap::new(),
        }
    }

    /// Table for one exact prefix. `example` may be `"*"`.
    pub fn set(&mut self, example: &str, prefix: &[TokenId], probs: &[(TokenId, f64)]) -> Result<()> {
        self.insert(example, PrefixKey::Exact(prefix.to_vec()), probs)
    }

    /// Table used for every prefix without an exact entry.
    pub fn set_default(&mut self, example: &str, probs: &[(TokenId, f64)]) -> Result<()> {
        self.insert(example, PrefixKey::Any, probs)
    }

    fn insert(&mut self, example: &str, key: PrefixKey, probs: &[(TokenId, f64)]) -> Result<()> {
        let dist = TokenDistribution::from_probs(probs.iter().copied())?;
        if dist.entries().len() != self.vocab.len()
            || dist.entries().iter().any(|e| e.token as usize >= self.vocab.len())
        {
            return Err(Error::Distribution(format!(
                "table for {example:?} must cover all {} vocabulary tokens",
                self.vocab.len()
            )));
        }
        self.tables.entry(example.to_string()).or_default().insert(key, dist);
        Ok(())
    }

    pub fn from_fixture(fixture: &TabularFixture) -> Result<Self> {
        let vocab: Vec<&str> = fixture.vocab.iter().map(String::as_str).collect();
        if let Some(eos) = fixture.eos {
            if eos as usize >= vocab.len() {
                return Err(Error::UnknownToken(eos));
            }
        }
        let mut scorer = Self::new(&fixture.version, &vocab, fixture.eos);
        for (example, by_prefix) in &fixture.tables {
            for (prefix, table) in by_prefix {
                let probs = table
                    .iter()
                    .map(|(tok, p)| {
                        tok.parse::<TokenId>()
                            .map(|t| (t, *p))
                            .map_err(|_| Error::Invalid(format!("bad token id {tok:?}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let key = if prefix == ANY {
                    PrefixKey::Any
                } else {
                    PrefixKey::Exact(parse_prefix(prefix)?)
                };
                scorer.insert(example, key, &probs)?;
            }
        }
        Ok(scorer)
    }

    pub fn to_fixture(&self) -> TabularFixture {
        let mut tables: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>> = BTreeMap::new();
        for (example, by_prefix) in &self.tables {
            let slot = tables.entry(example.clone()).or_default();
            for (key, dist) in by_prefix {
                let name = match key {
                    PrefixKey::Any => ANY.to_string(),
                    PrefixKey::Exact(p) => p.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "),
                };
                let table = dist.entries().iter().map(|e| (e.token.to_string(), e.prob)).collect();
                slot.insert(name, table);
            }
        }
        TabularFixture {
            version: self.version.clone(),
            vocab: self.vocab.clone(),
            eos: self.eos,
            tables,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_fixture(&serde_json::from_str(&text)?)
    }

    fn lookup(&self, example: &str, prefix: &[TokenId]) -> Option<&TokenDistribution> {
        let exact = PrefixKey::Exact(prefix.to_vec());
        let in_table = |ex: &str, key: &PrefixKey| self.tables.get(ex).and_then(|t| t.get(key));
        in_table(example, &exact)
            .or_else(|| in_table(example, &PrefixKey::Any))
            .or_else(|| in_table(ANY, &exact))
            .or_else(|| in_table(ANY, &PrefixKey::Any))
    }
}

fn parse_prefix(s: &str) -> Result<Vec<TokenId>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<TokenId>()
                .map_err(|_| Error::Invalid(format!("bad prefix token {t:?}")))
        })
        .collect()
}

impl Scorer for TabularScorer {
    fn version(&self) -> String {
        format!("tabular:{}", self.version)
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }

    fn next_token_logprobs(&self, ex: &Example, prefix: &[TokenId]) -> Result<TokenDistribution> {
        if let Some(&bad) = prefix.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(Error::UnknownToken(bad));
        }
        self.lookup(&ex.id, prefix).cloned().ok_or_else(|| Error::MissingTable {
            example: ex.id.clone(),
            prefix: prefix.to_vec(),
        })
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace()
            .map(|w| {
                self.vocab
                    .iter()
                    .position(|v| v == w)
                    .map(|i| i as TokenId)
                    .ok_or_else(|| Error::UnknownWord(w.to_string()))
            })
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
