//! Search hyperparameter selection by replaying trusted replies.

use serde::{Deserialize, Serialize};

use crate::data::{Example, Reply};
use crate::error::{Error, Result};
use crate::scorer::Scorer;
use crate::search::{autoreply_search, replay_chain, Aggregator, ChainOutcome, Criterion, SearchConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplySurvival {
    pub reply: String,
    pub survived: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pruned_at: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,
    /// All prefixes pass but the reply is shorter than `t_prune`, so it is never emitted.
    #[serde(default)]
    pub below_prune_depth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub config: SearchConfig,
    pub survivors: usize,
    /// Nodes the search expands under this config.
    pub space_estimate: usize,
    pub per_reply_trace: Vec<ReplySurvival>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub manifest: Option<String>,
    pub scorer_version: String,
    pub grid: Vec<SearchConfig>,
    pub results: Vec<TuneResult>,
    /// Index into `grid`.
    pub recommended_index: usize,
    pub recommended: SearchConfig,
}

pub fn simulate_reply_survival(
    scorer: &dyn Scorer,
    reply: &Reply,
    bad: &[&Example],
    good: &[&Example],
    cfg: &SearchConfig,
) -> Result<ReplySurvival> {
    let trace = replay_chain(scorer, bad, good, cfg, &reply.tokens)?;
    let (survived, pruned_at, criterion, below) = match trace.outcome {
        ChainOutcome::Survived => (true, None, None, false),
        ChainOutcome::Pruned { depth, criterion } => (false, Some(depth), Some(criterion), false),
        ChainOutcome::BelowPruneDepth => (false, None, None, true),
    };
    Ok(ReplySurvival {
        reply: reply.text.clone(),
        survived,
        pruned_at,
        criterion,
        below_prune_depth: below,
    })
}

pub fn evaluate_config(
    scorer: &dyn Scorer,
    trusted: &[Reply],
    bad: &[&Example],
    good: &[&Example],
    cfg: &SearchConfig,
) -> Result<TuneResult> {
    let per_reply_trace = trusted
        .iter()
        .map(|r| simulate_reply_survival(scorer, r, bad, good, cfg))
        .collect::<Result<Vec<_>>>()?;
    let space_estimate = autoreply_search(scorer, bad, good, cfg)?.expanded_nodes;
    Ok(TuneResult {
        config: cfg.clone(),
        survivors: per_reply_trace.iter().filter(|t| t.survived).count(),
        space_estimate,
        per_reply_trace,
    })
}

/// Most survivors wins; then the smaller space; then the earlier grid entry.
pub fn recommend(results: &[TuneResult]) -> Option<usize> {
    (0..results.len()).min_by(|&a, &b| {
        let (ra, rb) = (&results[a], &results[b]);
        rb.survivors
            .cmp(&ra.survivors)
            .then(ra.space_estimate.cmp(&rb.space_estimate))
            .then(a.cmp(&b))
    })
}

pub fn grid_tune(
    scorer: &dyn Scorer,
    trusted: &[Reply],
    bad: &[&Example],
    good: &[&Example],
    grid: &[SearchConfig],
) -> Result<(Vec<TuneResult>, usize)> {
    if grid.is_empty() {
        return Err(Error::Config("tuning grid is empty".into()));
    }
    let run = |cfg: &SearchConfig| evaluate_config(scorer, trusted, bad, good, cfg);
    #[cfg(feature = "parallel")]
    let results = {
        use rayon::prelude::*;
        grid.par_iter().map(run).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results = grid.iter().map(run).collect::<Result<Vec<_>>>()?;
    let best = recommend(&results).expect("grid is nonempty");
    Ok((results, best))
}

/// Cartesian grid over T, p, K, topn and t_delta around the default config:
/// T in {4, 6}, p in {0.8, 0.9}, K in {15, 19}, topn in {10, 15}, t_delta in {3.0, 3.63}.
pub fn default_grid() -> Vec<SearchConfig> {
    let base = SearchConfig::default();
    let mut grid = Vec::new();
    for t_max in [4, 6] {
        for p in [0.8, 0.9] {
            for k in [15, 19] {
                for topn in [10, 15] {
                    for t_delta in [3.0, 3.63] {
                        grid.push(SearchConfig {
                            p,
                            k,
                            topn,
                            t_max,
                            t_delta,
                            f_b: Aggregator::Mean,
                            f_g: Aggregator::Min,
                            ..base.clone()
                        });
                    }
                }
            }
        }
    }
    grid
}
