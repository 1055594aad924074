//! Browser demo: reply search on seeded random fixtures, nucleus sets, and
//! threshold metrics. Every export takes and returns JSON strings.
//!
//! The `*_json` functions hold the logic and are plain Rust so they can be
//! tested natively; the `#[wasm_bindgen]` wrappers only convert errors.

use autoreply::fixtures::{random_fixture, FixtureShape};
use autoreply::metrics::{precision_recall_f1, roc_auc, Confusion};
use autoreply::scorer::{Scorer, TokenDistribution};
use autoreply::search::{autoreply_search, brute_force_search, diff_records, SearchConfig};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Keeps the exhaustive cross-check responsive in a browser tab.
const MAX_ENUMERATED: usize = 200_000;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// The default search configuration, for pre-filling the form.
pub fn default_config_json() -> String {
    serde_json::to_string_pretty(&SearchConfig::default()).expect("config serializes")
}

#[derive(Serialize)]
struct SearchView {
    vocab: Vec<String>,
    bad: Vec<String>,
    good: Vec<String>,
    expanded_nodes: usize,
    oracle_checked: bool,
    oracle_differences: Vec<String>,
    records: Vec<RecordView>,
}

#[derive(Serialize)]
struct RecordView {
    reply: String,
    depth: usize,
    delta: Option<f64>,
    bad_support: Vec<String>,
    good_support: Vec<String>,
    bad_mean_logprob: f64,
}

/// Builds the random fixture for `seed` and runs the search on it. When the
/// sequence space is small enough (and `t_max <= 4`) the exhaustive oracle runs too.
pub fn search_fixture_json(seed: u64, vocab: usize, bad: usize, good: usize, config: &str) -> Result<String, String> {
    if !(2..=12).contains(&vocab) || !(1..=40).contains(&bad) || good > 40 {
        return Err("vocab must be 2..=12, bad 1..=40, good 0..=40".into());
    }
    let cfg: SearchConfig = serde_json::from_str(config).map_err(err)?;
    cfg.validate().map_err(err)?;
    let shape = FixtureShape {
        vocab,
        bad,
        good,
        depth: cfg.t_max.min(3),
        ..FixtureShape::default()
    };
    let f = random_fixture(seed, shape);
    let (b, g) = (f.bad_refs(), f.good_refs());
    let outcome = autoreply_search(&f.scorer, &b, &g, &cfg).map_err(err)?;
    let space: usize = (1..=cfg.t_max as u32).map(|d| vocab.saturating_pow(d)).sum();
    let (oracle_checked, oracle_differences) = if cfg.t_max <= 4 && space <= MAX_ENUMERATED {
        let brute = brute_force_search(&f.scorer, &b, &g, &cfg).map_err(err)?;
        (true, diff_records(&outcome.records, &brute, 1e-9))
    } else {
        (false, Vec::new())
    };
    let records = outcome
        .records
        .iter()
        .map(|r| RecordView {
            reply: r.reply.text.clone(),
            depth: r.depth,
            delta: r.delta,
            bad_support: r.bad_support.clone(),
            good_support: r.good_support.clone(),
            bad_mean_logprob: r.bad_logprobs.iter().sum::<f64>() / r.bad_logprobs.len().max(1) as f64,
        })
        .collect();
    let view = SearchView {
        vocab: (0..vocab as u32)
            .map(|t| f.scorer.detokenize(&[t]).unwrap_or_default())
            .collect(),
        bad: f.bad.iter().map(|e| e.id.clone()).collect(),
        good: f.good.iter().map(|e| e.id.clone()).collect(),
        expanded_nodes: outcome.expanded_nodes,
        oracle_checked,
        oracle_differences,
        records,
    };
    serde_json::to_string(&view).map_err(err)
}

/// Nucleus set of a weight vector (normalized first); token `i` is entry `i`.
pub fn nucleus_json(weights: &str, p: f64) -> Result<String, String> {
    let w: Vec<f64> = serde_json::from_str(weights).map_err(err)?;
    if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err("weights must be positive finite numbers".into());
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err("p must be in (0, 1]".into());
    }
    let total: f64 = w.iter().sum();
    let dist = TokenDistribution::from_probs(w.iter().enumerate().map(|(i, x)| (i as u32, x / total))).map_err(err)?;
    let set = dist.top_p(p);
    serde_json::to_string(&json!({
        "ranked": dist.ranked(),
        "tokens": set.tokens,
        "mass": set.mass,
    }))
    .map_err(err)
}

/// Flags every score strictly above `threshold` and reports precision, recall
/// and F1 of those flags, plus the threshold-free AUC of the scores.
pub fn evaluate_json(scores: &str, labels: &str, threshold: f64) -> Result<String, String> {
    let scores: Vec<f64> = serde_json::from_str(scores).map_err(err)?;
    let labels: Vec<bool> = serde_json::from_str(labels).map_err(err)?;
    let flagged: Vec<bool> = scores.iter().map(|s| *s > threshold).collect();
    let c = Confusion::from_predictions(&flagged, &labels).map_err(err)?;
    let (precision, recall, f1) = precision_recall_f1(&c);
    let auc = roc_auc(&scores, &labels).ok();
    serde_json::to_string(&json!({
        "confusion": c,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "auc": auc,
    }))
    .map_err(err)
}

#[wasm_bindgen(js_name = defaultConfig)]
pub fn default_config() -> String {
    default_config_json()
}

#[wasm_bindgen(js_name = searchFixture)]
pub fn search_fixture(seed: u32, vocab: usize, bad: usize, good: usize, config: &str) -> Result<String, JsError> {
    search_fixture_json(seed as u64, vocab, bad, good, config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn nucleus(weights: &str, p: f64) -> Result<String, JsError> {
    nucleus_json(weights, p).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn evaluate(scores: &str, labels: &str, threshold: f64) -> Result<String, JsError> {
    evaluate_json(scores, labels, threshold).map_err(|e| JsError::new(&e))
}
