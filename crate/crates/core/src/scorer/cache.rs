//! Persistent score cache.
//!
//! Wraps any backend and memoizes next-token distributions and reply
//! log-probabilities keyed by (backend version, example, token prefix). Entries are
//! appended to a JSON-lines log; on open, entries written under a different
//! backend version are ignored.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{Scorer, TokenDistribution};
use crate::data::{Example, TokenId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    example: String,
    digest: String,
    prefix: Vec<TokenId>,
}

impl Key {
    fn new(ex: &Example, prefix: &[TokenId]) -> Self {
        Self {
            example: ex.id.clone(),
            digest: ex.digest(),
            prefix: prefix.to_vec(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Value {
    Dist { dist: TokenDistribution },
    Seq { logprob: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
struct LogLine {
    version: String,
    example: String,
    digest: String,
    prefix: Vec<TokenId>,
    #[serde(flatten)]
    value: Value,
}

pub struct CachedScorer<S> {
    inner: S,
    version: String,
    dists: RwLock<HashMap<Key, TokenDistribution>>,
    seqs: RwLock<HashMap<Key, f64>>,
    log: Option<(PathBuf, Mutex<File>)>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<S: Scorer> CachedScorer<S> {
    /// In-memory only.
    pub fn new(inner: S) -> Self {
        let version = inner.version();
        Self {
            inner,
            version,
            dists: RwLock::default(),
            seqs: RwLock::default(),
            log: None,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Loads matching entries from `path` (if it exists) and appends new ones to it.
    pub fn open(inner: S, path: &Path) -> Result<Self> {
        let mut cache = Self::new(inner);
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut dists = HashMap::new();
            let mut seqs = HashMap::new();
            for (idx, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogLine = serde_json::from_str(&line).map_err(|e| Error::Record {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    message: format!("corrupt cache entry: {e}"),
                })?;
                if entry.version != cache.version {
                    continue;
                }
                let key = Key {
                    example: entry.example,
                    digest: entry.digest,
                    prefix: entry.prefix,
                };
                match entry.value {
                    Value::Dist { dist } => {
                        dists.insert(key, dist);
                    }
                    Value::Seq { logprob } => {
                        seqs.insert(key, logprob);
                    }
                }
            }
            cache.dists = RwLock::new(dists);
            cache.seqs = RwLock::new(seqs);
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        cache.log = Some((path.to_path_buf(), Mutex::new(file)));
        Ok(cache)
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.dists.read().unwrap().len() + self.seqs.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, key: &Key, value: Value) -> Result<()> {
        let Some((path, file)) = &self.log else {
            return Ok(());
        };
        let line = LogLine {
            version: self.version.clone(),
            example: key.example.clone(),
            digest: key.digest.clone(),
            prefix: key.prefix.clone(),
            value,
        };
        let mut text = serde_json::to_string(&line)?;
        text.push('\n');
        let mut file = file.lock().unwrap();
        file.write_all(text.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(path, e))
    }

    fn store_dist(&self, key: Key, dist: &TokenDistribution) -> Result<()> {
        // Concurrent misses on the same key compute the same value; first insert wins.
        let fresh = {
            let mut map = self.dists.write().unwrap();
            if map.contains_key(&key) {
                false
            } else {
                map.insert(key.clone(), dist.clone());
                true
            }
        };
        if fresh {
            self.append(&key, Value::Dist { dist: dist.clone() })?;
        }
        Ok(())
    }

    fn store_seq(&self, key: Key, logprob: f64) -> Result<()> {
        let fresh = self.seqs.write().unwrap().insert(key.clone(), logprob).is_none();
        if fresh {
            self.append(&key, Value::Seq { logprob })?;
        }
        Ok(())
    }
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn version(&self) -> String {
        self.version.clone()
    }

    fn vocab_size(&self) -> usize {
        self.inner.vocab_size()
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.inner.eos_token()
    }

    fn next_token_logprobs(&self, ex: &Example, prefix: &[TokenId]) -> Result<TokenDistribution> {
        let key = Key::new(ex, prefix);
        if let Some(d) = self.dists.read().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(d.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let dist = self.inner.next_token_logprobs(ex, prefix)?;
        self.store_dist(key, &dist)?;
        Ok(dist)
    }

    fn next_token_logprobs_batch(&self, items: &[(&Example, &[TokenId])]) -> Result<Vec<TokenDistribution>> {
        let keys: Vec<Key> = items.iter().map(|(ex, p)| Key::new(ex, p)).collect();
        let mut out: Vec<Option<TokenDistribution>> = {
            let map = self.dists.read().unwrap();
            keys.iter().map(|k| map.get(k).cloned()).collect()
        };
        let missing: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
        self.hits
            .fetch_add((items.len() - missing.len()) as u64, Ordering::Relaxed);
        self.misses.fetch_add(missing.len() as u64, Ordering::Relaxed);
        if !missing.is_empty() {
            let batch: Vec<_> = missing.iter().map(|&i| items[i]).collect();
            let fresh = self.inner.next_token_logprobs_batch(&batch)?;
            for (&i, dist) in missing.iter().zip(fresh) {
                self.store_dist(keys[i].clone(), &dist)?;
                out[i] = Some(dist);
            }
        }
        Ok(out.into_iter().map(|d| d.expect("filled")).collect())
    }

    fn sequence_logprob(&self, ex: &Example, tokens: &[TokenId]) -> Result<f64> {
        let key = Key::new(ex, tokens);
        if let Some(&v) = self.seqs.read().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.sequence_logprob(ex, tokens)?;
        self.store_seq(key, v)?;
        Ok(v)
    }

    fn sequence_logprob_batch(&self, items: &[(&Example, &[TokenId])]) -> Result<Vec<f64>> {
        let keys: Vec<Key> = items.iter().map(|(ex, p)| Key::new(ex, p)).collect();
        let mut out: Vec<Option<f64>> = {
            let map = self.seqs.read().unwrap();
            keys.iter().map(|k| map.get(k).copied()).collect()
        };
        let missing: Vec<usize> = (0..items.len()).filter(|&i| out[i].is_none()).collect();
        self.hits
            .fetch_add((items.len() - missing.len()) as u64, Ordering::Relaxed);
        self.misses.fetch_add(missing.len() as u64, Ordering::Relaxed);
        if !missing.is_empty() {
            let batch: Vec<_> = missing.iter().map(|&i| items[i]).collect();
            let fresh = self.inner.sequence_logprob_batch(&batch)?;
            for (&i, v) in missing.iter().zip(fresh) {
                self.store_seq(keys[i].clone(), v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        self.inner.tokenize(text)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        self.inner.detokenize(tokens)
    }
}
