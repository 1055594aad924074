//! Contrastive reply search.
//!
//! Starting from the empty reply, each search node holds a prefix together with
//! the bad and good examples that still support it. A node is expanded by taking
//! every surviving bad example's nucleus (top-p) continuation set, counting how many
//! bad examples propose each token, and keeping the `topn` most proposed tokens.
//! A kept token `v` survives when at least `K` bad examples propose it and, from
//! depth `t_prune` on, when the contrastive score of `prefix + v`
//!
//! ```text
//! delta = f_b(log P(r | b) for b in B_v) - f_g(log P(r | g) for g in G_v)
//! ```
//!
//! exceeds `t_delta`. `B_v` and `G_v` are the bad and good examples whose nucleus
//! sets contain `v`; the child node continues with exactly those examples. Every
//! surviving reply of depth at least `t_prune` is emitted, including replies that
//! are later extended.
//!
//! [`brute_force_search`] enumerates every token sequence and replays the same
//! admission rules one depth at a time, scoring replies from scratch. It exists to
//! check [`autoreply_search`] on small instances.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Example, Reply, ReplyOrigin, TokenId};
use crate::error::{Error, Result};
use crate::manifest::InputHash;
use crate::scorer::{Scorer, TokenDistribution};

pub const BRUTE_FORCE_MAX_VOCAB: usize = 16;
pub const BRUTE_FORCE_MAX_DEPTH: usize = 4;

/// Summary statistic over a set of log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Aggregator {
    Mean,
    Min,
    Max,
    /// The n-th largest value (1-based), clamped to the smallest.
    NthLargest(usize),
    /// Mean of the n largest values.
    MeanTopN(usize),
}

impl Aggregator {
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        let descending = || {
            let mut v = values.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        };
        Some(match self {
            Aggregator::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregator::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Aggregator::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Aggregator::NthLargest(n) => {
                let v = descending();
                v[n.clamp(1, v.len()) - 1]
            }
            Aggregator::MeanTopN(n) => {
                let v = descending();
                let take = n.clamp(1, v.len());
                v[..take].iter().sum::<f64>() / take as f64
            }
        })
    }
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregator::Mean => write!(f, "mean"),
            Aggregator::Min => write!(f, "min"),
            Aggregator::Max => write!(f, "max"),
            Aggregator::NthLargest(n) => write!(f, "nth:{n}"),
            Aggregator::MeanTopN(n) => write!(f, "top-mean:{n}"),
        }
    }
}

impl FromStr for Aggregator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let arg = |rest: &str| -> Result<usize, String> {
            match rest.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(n),
                _ => Err(format!("aggregator {s:?} needs a positive count")),
            }
        };
        match s {
            "mean" => Ok(Aggregator::Mean),
            "min" => Ok(Aggregator::Min),
            "max" => Ok(Aggregator::Max),
            _ => {
                if let Some(rest) = s.strip_prefix("nth:") {
                    Ok(Aggregator::NthLargest(arg(rest)?))
                } else if let Some(rest) = s.strip_prefix("top-mean:") {
                    Ok(Aggregator::MeanTopN(arg(rest)?))
                } else {
                    Err(format!(
                        "unknown aggregator {s:?} (expected mean, min, max, nth:N or top-mean:N)"
                    ))
                }
            }
        }
    }
}

impl TryFrom<String> for Aggregator {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Aggregator> for String {
    fn from(a: Aggregator) -> String {
        a.to_string()
    }
}

/// What to score the good side against when no good example proposes a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyGoodPolicy {
    /// The branch passes the contrastive check unconditionally.
    Pass,
    /// Score the reply against every good example given to the search.
    ScoreAllGood,
}

impl FromStr for EmptyGoodPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pass" => Ok(Self::Pass),
            "score_all_good" | "score-all-good" => Ok(Self::ScoreAllGood),
            other => Err(format!("unknown empty-good policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Nucleus mass of the continuation sets.
    pub p: f64,
    /// Minimum number of bad examples that must propose a token.
    pub k: usize,
    /// Tokens expanded per node.
    pub topn: usize,
    /// Maximum reply length in tokens.
    pub t_max: usize,
    /// First depth at which the contrastive score prunes.
    pub t_prune: usize,
    pub t_delta: f64,
    pub f_b: Aggregator,
    pub f_g: Aggregator,
    pub empty_good_policy: EmptyGoodPolicy,
    /// Use `min(bad) - max(good)` instead of `f_b(bad) - f_g(good)`.
    pub strict_mode: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            p: 0.9,
            k: 19,
            topn: 15,
            t_max: 6,
            t_prune: 3,
            t_delta: 3.63,
            f_b: Aggregator::Mean,
            f_g: Aggregator::Min,
            empty_good_policy: EmptyGoodPolicy::ScoreAllGood,
            strict_mode: false,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.p > 0.0 && self.p <= 1.0) {
            return fail(format!("p must be in (0, 1], got {}", self.p));
        }
        if self.k < 1 {
            return fail("k must be at least 1".into());
        }
        if self.topn < 1 {
            return fail("topn must be at least 1".into());
        }
        if self.t_max < 1 {
            return fail("t_max must be at least 1".into());
        }
        if self.t_prune < 1 || self.t_prune > self.t_max {
            return fail(format!(
                "t_prune must be in [1, t_max = {}], got {}",
                self.t_max, self.t_prune
            ));
        }
        if !self.t_delta.is_finite() {
            return fail("t_delta must be finite".into());
        }
        Ok(())
    }

    /// Strict mode with threshold 0.
    pub fn strict(mut self) -> Self {
        self.strict_mode = true;
        self.t_delta = 0.0;
        self
    }

    /// Contrastive score under this configuration. `good` must be nonempty.
    pub fn score(&self, bad: &[f64], good: &[f64]) -> Result<f64> {
        if self.strict_mode {
            strict_contrastive_score(bad, good)
        } else {
            contrastive_score(bad, good, self.f_b, self.f_g)
        }
    }
}

/// `f_b(bad) - f_g(good)`.
pub fn contrastive_score(bad: &[f64], good: &[f64], f_b: Aggregator, f_g: Aggregator) -> Result<f64> {
    let sb = f_b
        .apply(bad)
        .ok_or_else(|| Error::Invalid("contrastive score needs bad-side log-probs".into()))?;
    let sg = f_g
        .apply(good)
        .ok_or_else(|| Error::Invalid("contrastive score needs good-side log-probs".into()))?;
    Ok(sb - sg)
}

/// `min(bad) - max(good)`: positive only when the reply separates the two sides.
pub fn strict_contrastive_score(bad: &[f64], good: &[f64]) -> Result<f64> {
    contrastive_score(bad, good, Aggregator::Min, Aggregator::Max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyRecord {
    pub reply: Reply,
    /// Ids of the bad examples proposing the reply's last token (in input order).
    pub bad_support: Vec<String>,
    /// Ids of the good examples proposing the reply's last token.
    pub good_support: Vec<String>,
    /// `log P(reply | b)` aligned with `bad_support`.
    pub bad_logprobs: Vec<f64>,
    /// Ids the good-side score was computed over: `good_support`, or every good
    /// example under [`EmptyGoodPolicy::ScoreAllGood`] when the support is empty.
    pub good_scored: Vec<String>,
    pub good_logprobs: Vec<f64>,
    /// `None` when the contrastive check was skipped under [`EmptyGoodPolicy::Pass`].
    pub delta: Option<f64>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Sorted by token sequence.
    pub records: Vec<ReplyRecord>,
    /// Nodes whose continuation sets were computed.
    pub expanded_nodes: usize,
}

/// The search output file: configuration, provenance and emitted replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub manifest: Option<String>,
    pub config: SearchConfig,
    pub dataset_hashes: Vec<InputHash>,
    pub scorer_version: String,
    pub bad_examples: usize,
    pub good_examples: usize,
    pub expanded_nodes: usize,
    pub records: Vec<ReplyRecord>,
}

struct Node {
    prefix: Vec<TokenId>,
    /// Indices into the bad slice, with `log P(prefix | b)` alongside.
    bad: Vec<(usize, f64)>,
    good: Vec<(usize, f64)>,
}

/// Token -> supporting example positions (indices into the node's member list),
/// in member order.
type Support = BTreeMap<TokenId, Vec<usize>>;

fn support_of(dists: &[TokenDistribution], p: f64) -> Support {
    let mut support = Support::new();
    for (member, dist) in dists.iter().enumerate() {
        for tok in dist.top_p(p).tokens {
            support.entry(tok).or_default().push(member);
        }
    }
    support
}

/// Tokens by support size descending, token id ascending.
fn ranked_tokens(support: &Support) -> Vec<TokenId> {
    let mut toks: Vec<TokenId> = support.keys().copied().collect();
    toks.sort_by(|a, b| support[b].len().cmp(&support[a].len()).then(a.cmp(b)));
    toks
}

fn ids(examples: &[&Example], idx: impl IntoIterator<Item = usize>) -> Vec<String> {
    idx.into_iter().map(|i| examples[i].id.clone()).collect()
}

pub fn autoreply_search(
    scorer: &dyn Scorer,
    bad: &[&Example],
    good: &[&Example],
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut expanded_nodes = 0;
    if bad.len() < cfg.k {
        log::warn!(
            "k = {} exceeds the {} bad examples; nothing can be emitted",
            cfg.k,
            bad.len()
        );
        return Ok(SearchOutcome {
            records,
            expanded_nodes,
        });
    }

    let mut frontier = vec![Node {
        prefix: Vec::new(),
        bad: (0..bad.len()).map(|i| (i, 0.0)).collect(),
        good: (0..good.len()).map(|i| (i, 0.0)).collect(),
    }];
    for depth in 0..cfg.t_max {
        let mut next = Vec::new();
        for node in &frontier {
            expanded_nodes += 1;
            next.extend(expand(scorer, bad, good, cfg, node, &mut records)?);
        }
        log::debug!(
            "depth {}: expanded {} nodes, {} children, {} replies so far",
            depth,
            frontier.len(),
            next.len(),
            records.len()
        );
        next.sort_by(|a, b| a.prefix.cmp(&b.prefix));
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    records.sort_by(|a, b| a.reply.tokens.cmp(&b.reply.tokens));
    Ok(SearchOutcome {
        records,
        expanded_nodes,
    })
}

fn expand(
    scorer: &dyn Scorer,
    bad: &[&Example],
    good: &[&Example],
    cfg: &SearchConfig,
    node: &Node,
    records: &mut Vec<ReplyRecord>,
) -> Result<Vec<Node>> {
    let items: Vec<(&Example, &[TokenId])> = node
        .bad
        .iter()
        .map(|&(i, _)| (bad[i], node.prefix.as_slice()))
        .chain(node.good.iter().map(|&(i, _)| (good[i], node.prefix.as_slice())))
        .collect();
    let mut dists = scorer.next_token_logprobs_batch(&items)?;
    let good_dists = dists.split_off(node.bad.len());
    let bad_dists = dists;

    let bad_support = support_of(&bad_dists, cfg.p);
    let good_support = support_of(&good_dists, cfg.p);
    let depth = node.prefix.len() + 1;
    let mut children = Vec::new();

    for tok in ranked_tokens(&bad_support).into_iter().take(cfg.topn) {
        let members = &bad_support[&tok];
        if members.len() < cfg.k {
            continue;
        }
        let mut prefix = node.prefix.clone();
        prefix.push(tok);

        let child_bad = members
            .iter()
            .map(|&m| {
                let (i, lp) = node.bad[m];
                Ok((i, lp + bad_dists[m].logprob(tok)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let child_good = good_support
            .get(&tok)
            .map(|ms| {
                ms.iter()
                    .map(|&m| {
                        let (i, lp) = node.good[m];
                        Ok((i, lp + good_dists[m].logprob(tok)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?
            .unwrap_or_default();

        let bad_lps: Vec<f64> = child_bad.iter().map(|&(_, lp)| lp).collect();
        let (good_scored, good_lps): (Vec<usize>, Vec<f64>) = if !child_good.is_empty() {
            child_good.iter().copied().unzip()
        } else {
            match cfg.empty_good_policy {
                EmptyGoodPolicy::Pass => (Vec::new(), Vec::new()),
                EmptyGoodPolicy::ScoreAllGood => {
                    let items: Vec<(&Example, &[TokenId])> = good.iter().map(|g| (*g, prefix.as_slice())).collect();
                    ((0..good.len()).collect(), scorer.sequence_logprob_batch(&items)?)
                }
            }
        };
        let delta = if good_lps.is_empty() {
            None
        } else {
            Some(cfg.score(&bad_lps, &good_lps)?)
        };

        if depth >= cfg.t_prune {
            if matches!(delta, Some(d) if d <= cfg.t_delta) {
                continue;
            }
            let text = scorer.detokenize(&prefix)?;
            records.push(ReplyRecord {
                reply: Reply::new(prefix.clone(), text, ReplyOrigin::Autoreply),
                bad_support: ids(bad, child_bad.iter().map(|&(i, _)| i)),
                good_support: ids(good, child_good.iter().map(|&(i, _)| i)),
                bad_logprobs: bad_lps,
                good_scored: ids(good, good_scored),
                good_logprobs: good_lps,
                delta,
                depth,
            });
        } else {
            log::trace!("prefix {prefix:?} delta {delta:?} (below prune depth)");
        }
        if depth < cfg.t_max {
            children.push(Node {
                prefix,
                bad: child_bad,
                good: child_good,
            });
        }
    }
    Ok(children)
}

/// The strict variant: `min(bad) - max(good) > t_delta`.
pub fn strict_search(
    scorer: &dyn Scorer,
    bad: &[&Example],
    good: &[&Example],
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    let cfg = SearchConfig {
        strict_mode: true,
        ..cfg.clone()
    };
    autoreply_search(scorer, bad, good, &cfg)
}

/// Which admission rule rejected a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Fewer than `K` surviving bad examples have the token in their nucleus set.
    Support,
    /// The token is not among the `topn` most proposed tokens at its node.
    Rank,
    /// Contrastive score at or below `t_delta`.
    Delta,
    /// Longer than `t_max`.
    MaxLength,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub depth: usize,
    pub token: TokenId,
    pub bad_support: Vec<String>,
    pub good_support: Vec<String>,
    /// 0-based rank of the token among proposed tokens, if proposed at all.
    pub rank: Option<usize>,
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainOutcome {
    /// Every prefix passes and the reply is long enough to be emitted.
    Survived,
    Pruned {
        depth: usize,
        criterion: Criterion,
    },
    /// Every prefix passes but the reply is shorter than `t_prune`.
    BelowPruneDepth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTrace {
    pub steps: Vec<ChainStep>,
    pub outcome: ChainOutcome,
    /// Present when the reply passed every checked depth.
    pub record: Option<ReplyRecord>,
}

/// Replays one reply's prefix chain through the search's admission rules without
/// expanding siblings. Reply log-probabilities are scored from scratch with
/// [`Scorer::sequence_logprob`].
pub fn replay_chain(
    scorer: &dyn Scorer,
    bad: &[&Example],
    good: &[&Example],
    cfg: &SearchConfig,
    tokens: &[TokenId],
) -> Result<ChainTrace> {
    cfg.validate()?;
    let mut bad_alive: Vec<usize> = (0..bad.len()).collect();
    let mut good_alive: Vec<usize> = (0..good.len()).collect();
    let mut steps = Vec::new();
    let mut last = None;

    for (at, &tok) in tokens.iter().enumerate() {
        let depth = at + 1;
        if depth > cfg.t_max {
            return Ok(ChainTrace {
                steps,
                outcome: ChainOutcome::Pruned {
                    depth,
                    criterion: Criterion::MaxLength,
                },
                record: None,
            });
        }
        let prefix = &tokens[..at];
        let reply = &tokens[..depth];

        let mut proposals: BTreeMap<TokenId, usize> = BTreeMap::new();
        let mut bad_next = Vec::new();
        for &i in &bad_alive {
            let set = scorer.next_token_logprobs(bad[i], prefix)?.top_p(cfg.p);
            for &t in &set.tokens {
                *proposals.entry(t).or_default() += 1;
            }
            if set.contains(tok) {
                bad_next.push(i);
            }
        }
        let mut good_next = Vec::new();
        for &i in &good_alive {
            if scorer.next_token_logprobs(good[i], prefix)?.top_p(cfg.p).contains(tok) {
                good_next.push(i);
            }
        }
        let mut order: Vec<(usize, TokenId)> = proposals.iter().map(|(&t, &n)| (n, t)).collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let rank = order.iter().position(|&(_, t)| t == tok);

        let score = |set: &[usize], side: &[&Example]| -> Result<Vec<f64>> {
            set.iter().map(|&i| scorer.sequence_logprob(side[i], reply)).collect()
        };
        let bad_lps = score(&bad_next, bad)?;
        let good_scored: Vec<usize> = if !good_next.is_empty() {
            good_next.clone()
        } else {
            match cfg.empty_good_policy {
                EmptyGoodPolicy::Pass => Vec::new(),
                EmptyGoodPolicy::ScoreAllGood => (0..good.len()).collect(),
            }
        };
        let good_lps = score(&good_scored, good)?;
        let delta = if bad_lps.is_empty() || good_lps.is_empty() {
            None
        } else {
            Some(cfg.score(&bad_lps, &good_lps)?)
        };
        steps.push(ChainStep {
            depth,
            token: tok,
            bad_support: ids(bad, bad_next.iter().copied()),
            good_support: ids(good, good_next.iter().copied()),
            rank,
            delta,
        });

        let failed = if bad_next.len() < cfg.k {
            Some(Criterion::Support)
        } else if rank.is_none_or(|r| r >= cfg.topn) {
            Some(Criterion::Rank)
        } else if depth >= cfg.t_prune && matches!(delta, Some(d) if d <= cfg.t_delta) {
            Some(Criterion::Delta)
        } else {
            None
        };
        if let Some(criterion) = failed {
            return Ok(ChainTrace {
                steps,
                outcome: ChainOutcome::Pruned { depth, criterion },
                record: None,
            });
        }
        last = Some(ReplyRecord {
            reply: Reply::new(reply.to_vec(), scorer.detokenize(reply)?, ReplyOrigin::Autoreply),
            bad_support: ids(bad, bad_next.iter().copied()),
            good_support: ids(good, good_next.iter().copied()),
            bad_logprobs: bad_lps,
            good_scored: ids(good, good_scored),
            good_logprobs: good_lps,
            delta,
            depth,
        });
        bad_alive = bad_next;
        good_alive = good_next;
    }

    let outcome = if tokens.len() >= cfg.t_prune {
        ChainOutcome::Survived
    } else {
        ChainOutcome::BelowPruneDepth
    };
    Ok(ChainTrace {
        steps,
        outcome,
        record: last,
    })
}

/// Exhaustive oracle for [`autoreply_search`]: every sequence of length at most
/// `t_max` over the full vocabulary is replayed with [`replay_chain`].
pub fn brute_force_search(
    scorer: &dyn Scorer,
    bad: &[&Example],
    good: &[&Example],
    cfg: &SearchConfig,
) -> Result<Vec<ReplyRecord>> {
    cfg.validate()?;
    let vocab = scorer.vocab_size();
    if vocab > BRUTE_FORCE_MAX_VOCAB || cfg.t_max > BRUTE_FORCE_MAX_DEPTH {
        return Err(Error::Config(format!(
            "brute force is limited to vocab <= {BRUTE_FORCE_MAX_VOCAB} and t_max <= \
             {BRUTE_FORCE_MAX_DEPTH} (got {vocab} and {})",
            cfg.t_max
        )));
    }
    let mut out = Vec::new();
    for len in 1..=cfg.t_max {
        let mut seq = vec![0 as TokenId; len];
        loop {
            let trace = replay_chain(scorer, bad, good, cfg, &seq)?;
            if trace.outcome == ChainOutcome::Survived {
                out.push(trace.record.expect("survivors carry a record"));
            }
            // Odometer increment over the vocabulary.
            let mut pos = len;
            loop {
                if pos == 0 {
                    break;
                }
                pos -= 1;
                seq[pos] += 1;
                if (seq[pos] as usize) < vocab {
                    break;
                }
                seq[pos] = 0;
                if pos == 0 {
                    pos = usize::MAX;
                    break;
                }
            }
            if pos == usize::MAX {
                break;
            }
        }
    }
    out.sort_by(|a, b| a.reply.tokens.cmp(&b.reply.tokens));
    Ok(out)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Differences between two record lists: token sequences and supports must match
/// exactly, log-probabilities and deltas within `tol`. Empty when they agree.
pub fn diff_records(left: &[ReplyRecord], right: &[ReplyRecord], tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < left.len() || j < right.len() {
        let order = match (left.get(i), right.get(j)) {
            (Some(a), Some(b)) => a.reply.tokens.cmp(&b.reply.tokens),
            (Some(_), None) => std::cmp::Ordering::Less,
            _ => std::cmp::Ordering::Greater,
        };
        match order {
            std::cmp::Ordering::Less => {
                out.push(format!("only left: {:?}", left[i].reply.tokens));
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(format!("only right: {:?}", right[j].reply.tokens));
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                let (a, b) = (&left[i], &right[j]);
                let toks = &a.reply.tokens;
                if a.bad_support != b.bad_support || a.good_support != b.good_support {
                    out.push(format!("{toks:?}: supports differ"));
                }
                if a.good_scored != b.good_scored {
                    out.push(format!("{toks:?}: good-side score sets differ"));
                }
                if !close(&a.bad_logprobs, &b.bad_logprobs, tol) || !close(&a.good_logprobs, &b.good_logprobs, tol) {
                    out.push(format!("{toks:?}: log-probabilities differ"));
                }
                let delta_ok = match (a.delta, b.delta) {
                    (Some(x), Some(y)) => (x - y).abs() <= tol,
                    (None, None) => true,
                    _ => false,
                };
                if !delta_ok {
                    out.push(format!("{toks:?}: delta {:?} vs {:?}", a.delta, b.delta));
                }
                i += 1;
                j += 1;
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::Label;
    use crate::scorer::TabularScorer;

    /// Three bad examples favouring `u`, one good example favouring `v`.
    pub(crate) fn fixture_f1() -> (TabularScorer, Vec<Example>, Vec<Example>) {
        let mut s = TabularScorer::new("f1", &["u", "v", "w", "<eos>"], Some(3));
        let bad: Vec<Example> = (1..=3)
            .map(|i| Example::new(format!("B{i}"), "bad", Label::Nonsense))
            .collect();
        let good = vec![Example::new("G1", "good", Label::Good)];
        for b in &bad {
            s.set_default(&b.id, &[(0, 0.6), (1, 0.3), (2, 0.05), (3, 0.05)])
                .unwrap();
        }
        s.set_default("G1", &[(0, 0.05), (1, 0.6), (2, 0.3), (3, 0.05)])
            .unwrap();
        (s, bad, good)
    }

    pub(crate) fn f1_config() -> SearchConfig {
        SearchConfig {
            p: 0.8,
            k: 3,
            topn: 10,
            t_max: 1,
            t_prune: 1,
            t_delta: 2.0,
            f_b: Aggregator::Mean,
            f_g: Aggregator::Min,
            empty_good_policy: EmptyGoodPolicy::ScoreAllGood,
            strict_mode: false,
        }
    }

    fn refs(v: &[Example]) -> Vec<&Example> {
        v.iter().collect()
    }

    #[test]
    fn aggregators() {
        let v = [-1.0, -4.0, -2.0, -3.0];
        assert_eq!(Aggregator::Mean.apply(&v), Some(-2.5));
        assert_eq!(Aggregator::Min.apply(&v), Some(-4.0));
        assert_eq!(Aggregator::Max.apply(&v), Some(-1.0));
        assert_eq!(Aggregator::NthLargest(2).apply(&v), Some(-2.0));
        assert_eq!(Aggregator::NthLargest(9).apply(&v), Some(-4.0));
        assert_eq!(Aggregator::MeanTopN(2).apply(&v), Some(-1.5));
        assert_eq!(Aggregator::Mean.apply(&[]), None);
        for s in ["mean", "min", "max", "nth:3", "top-mean:5"] {
            assert_eq!(s.parse::<Aggregator>().unwrap().to_string(), s);
        }
        assert!("nth:0".parse::<Aggregator>().is_err());
        assert!("median".parse::<Aggregator>().is_err());
    }

    #[test]
    fn contrastive_score_examples() {
        let d = contrastive_score(&[-1.0, -3.0], &[-6.0, -8.0], Aggregator::Mean, Aggregator::Min).unwrap();
        assert_eq!(d, 6.0);
        let same = [-2.5, -7.25, -1.0];
        assert_eq!(
            contrastive_score(&same, &same, Aggregator::Mean, Aggregator::Mean).unwrap(),
            0.0
        );
        assert_eq!(strict_contrastive_score(&same, &same).unwrap(), -6.25);
        assert!(contrastive_score(&[], &[-1.0], Aggregator::Mean, Aggregator::Min).is_err());
    }

    #[test]
    fn default_is_the_reference_configuration() {
        let c = SearchConfig::default();
        assert_eq!((c.t_max, c.p, c.k, c.topn, c.t_prune), (6, 0.9, 19, 15, 3));
        assert_eq!(c.t_delta, 3.63);
        assert_eq!((c.f_b, c.f_g), (Aggregator::Mean, Aggregator::Min));
        assert_eq!(c.empty_good_policy, EmptyGoodPolicy::ScoreAllGood);
        assert!(!c.strict_mode);
        c.validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let bad = |f: fn(&mut SearchConfig)| {
            let mut c = SearchConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.p = 0.0));
        assert!(bad(|c| c.p = 1.5));
        assert!(bad(|c| c.k = 0));
        assert!(bad(|c| c.topn = 0));
        assert!(bad(|c| c.t_max = 0));
        assert!(bad(|c| c.t_prune = 7));
        assert!(bad(|c| c.t_prune = 0));
    }

    #[test]
    fn fixture_f1_search() {
        let (s, bad, good) = fixture_f1();
        let out = autoreply_search(&s, &refs(&bad), &refs(&good), &f1_config()).unwrap();
        assert_eq!(out.records.len(), 1);
        let r = &out.records[0];
        assert_eq!(r.reply.text, "u");
        assert_eq!(r.bad_support, vec!["B1", "B2", "B3"]);
        assert!(r.good_support.is_empty());
        assert_eq!(r.good_scored, vec!["G1"]);
        let expected = 0.6f64.ln() - 0.05f64.ln();
        assert!((r.delta.unwrap() - expected).abs() < 1e-12);
        assert!((expected - 2.485).abs() < 1e-3);

        let oracle = brute_force_search(&s, &refs(&bad), &refs(&good), &f1_config()).unwrap();
        assert_eq!(oracle, out.records);

        let strict = strict_search(&s, &refs(&bad), &refs(&good), &f1_config().strict()).unwrap();
        assert_eq!(strict.records.len(), 1);
        assert_eq!(strict.records[0].reply.tokens, vec![0]);
        assert!((strict.records[0].delta.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn f1_topn_one_keeps_lowest_id_on_tied_support() {
        // u and v are both proposed by all three bad examples; u has the lower id.
        let (s, bad, good) = fixture_f1();
        let cfg = SearchConfig { topn: 1, ..f1_config() };
        let a = autoreply_search(&s, &refs(&bad), &refs(&good), &cfg).unwrap();
        let b = brute_force_search(&s, &refs(&bad), &refs(&good), &cfg).unwrap();
        assert_eq!(a.records, b);
        assert_eq!(b.iter().map(|r| r.reply.text.as_str()).collect::<Vec<_>>(), ["u"]);
    }

    #[test]
    fn f1_replay_traces() {
        let (s, bad, good) = fixture_f1();
        let cfg = f1_config();
        let u = replay_chain(&s, &refs(&bad), &refs(&good), &cfg, &[0]).unwrap();
        assert_eq!(u.outcome, ChainOutcome::Survived);
        let v = replay_chain(&s, &refs(&bad), &refs(&good), &cfg, &[1]).unwrap();
        assert_eq!(
            v.outcome,
            ChainOutcome::Pruned {
                depth: 1,
                criterion: Criterion::Delta
            }
        );
        assert!((v.steps[0].delta.unwrap() - (0.3f64.ln() - 0.6f64.ln())).abs() < 1e-12);
        let w = replay_chain(&s, &refs(&bad), &refs(&good), &cfg, &[2]).unwrap();
        assert_eq!(
            w.outcome,
            ChainOutcome::Pruned {
                depth: 1,
                criterion: Criterion::Support
            }
        );
        let long = replay_chain(&s, &refs(&bad), &refs(&good), &cfg, &[0, 0]).unwrap();
        assert!(matches!(
            long.outcome,
            ChainOutcome::Pruned {
                criterion: Criterion::MaxLength,
                ..
            }
        ));
    }

    #[test]
    fn k_above_bad_count_is_empty() {
        let (s, bad, good) = fixture_f1();
        let cfg = SearchConfig { k: 4, ..f1_config() };
        let out = autoreply_search(&s, &refs(&bad), &refs(&good), &cfg).unwrap();
        assert!(out.records.is_empty());
        assert!(brute_force_search(&s, &refs(&bad), &refs(&good), &cfg)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn strict_identical_sides_emit_nothing() {
        let mut s = TabularScorer::new("same", &["a", "b"], None);
        s.set_default("*", &[(0, 0.7), (1, 0.3)]).unwrap();
        let bad = vec![Example::new("b", "x", Label::Nonsense)];
        let good = vec![Example::new("g", "y", Label::Good)];
        let cfg = SearchConfig {
            k: 1,
            t_max: 2,
            t_prune: 1,
            p: 1.0,
            ..SearchConfig::default()
        }
        .strict();
        let out = autoreply_search(&s, &refs(&bad), &refs(&good), &cfg).unwrap();
        assert!(out.records.is_empty());
    }

    #[test]
    fn pass_policy_skips_contrast() {
        let (s, bad, good) = fixture_f1();
        let cfg = SearchConfig {
            empty_good_policy: EmptyGoodPolicy::Pass,
            t_delta: 100.0,
            ..f1_config()
        };
        let out = autoreply_search(&s, &refs(&bad), &refs(&good), &cfg).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].delta, None);
        assert_eq!(
            brute_force_search(&s, &refs(&bad), &refs(&good), &cfg).unwrap(),
            out.records
        );
    }

    #[test]
    fn brute_force_bounds_enforced() {
        let (s, bad, good) = fixture_f1();
        let cfg = SearchConfig {
            t_max: 5,
            ..f1_config()
        };
        assert!(brute_force_search(&s, &refs(&bad), &refs(&good), &cfg).is_err());
        let t0 = SearchConfig {
            t_max: 0,
            ..f1_config()
        };
        assert!(brute_force_search(&s, &refs(&bad), &refs(&good), &t0).is_err());
    }
}
