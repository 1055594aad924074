//! The incremental language-model contract used for generation and scoring.
//!
//! A [`Scorer`] maps an example plus a reply prefix to the full next-token
//! distribution. Everything else (nucleus sets, reply log-probabilities, sampling)
//! is derived from that single primitive, so every backend behaves consistently.

mod cache;
mod ngram;
#[cfg(feature = "remote")]
mod remote;
mod tabular;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Example, Reply, ReplyOrigin, TokenId};
use crate::error::{Error, Result};

pub use cache::CachedScorer;
pub use ngram::{render_example, NGramModel, BOS, MESSAGE_TAG, REPLY_TAG};
#[cfg(feature = "remote")]
pub use remote::{wire, RemoteScorer};
pub use tabular::{TabularFixture, TabularScorer};

/// Allowed deviation of a distribution's total mass from 1.
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Slack used when comparing cumulative nucleus mass against `p`, so that
/// `0.5 + 0.3` covers `p = 0.8` despite binary rounding.
pub const TOP_P_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenProb {
    pub token: TokenId,
    pub prob: f64,
    pub logprob: f64,
}

/// Next-token distribution, entries sorted by token id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    entries: Vec<TokenProb>,
}

impl TokenDistribution {
    pub fn from_probs(pairs: impl IntoIterator<Item = (TokenId, f64)>) -> Result<Self> {
        let entries = pairs
            .into_iter()
            .map(|(token, prob)| TokenProb {
                token,
                prob,
                logprob: prob.ln(),
            })
            .collect();
        Self::from_entries(entries)
    }

    /// Natural-log probabilities, as returned by the remote protocol.
    pub fn from_logprobs(pairs: impl IntoIterator<Item = (TokenId, f64)>) -> Result<Self> {
        let entries = pairs
            .into_iter()
            .map(|(token, logprob)| TokenProb {
                token,
                prob: logprob.exp(),
                logprob,
            })
            .collect();
        Self::from_entries(entries)
    }

    fn from_entries(mut entries: Vec<TokenProb>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Distribution("empty support".into()));
        }
        entries.sort_by_key(|e| e.token);
        let mut total = 0.0;
        for (i, e) in entries.iter().enumerate() {
            if !(e.prob > 0.0 && e.prob <= 1.0 + MASS_TOLERANCE) {
                return Err(Error::Distribution(format!(
                    "probability {} for token {} outside (0, 1]",
                    e.prob, e.token
                )));
            }
            if i > 0 && entries[i - 1].token == e.token {
                return Err(Error::Distribution(format!("token {} repeated", e.token)));
            }
            total += e.prob;
        }
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Distribution(format!("mass sums to {total}")));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[TokenProb] {
        &self.entries
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }

    pub fn get(&self, token: TokenId) -> Option<&TokenProb> {
        self.entries
            .binary_search_by_key(&token, |e| e.token)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn logprob(&self, token: TokenId) -> Result<f64> {
        self.get(token).map(|e| e.logprob).ok_or(Error::UnknownToken(token))
    }

    /// Entries ordered by probability descending, token id ascending.
    pub fn ranked(&self) -> Vec<TokenProb> {
        let mut ranked = self.entries.clone();
        ranked.sort_by(|a, b| b.prob.total_cmp(&a.prob).then(a.token.cmp(&b.token)));
        ranked
    }

    /// The smallest set of tokens whose cumulative probability reaches `p`.
    pub fn top_p(&self, p: f64) -> TopPSet {
        let mut tokens = Vec::new();
        let mut probs = Vec::new();
        let mut mass = 0.0;
        for e in self.ranked() {
            tokens.push(e.token);
            probs.push(e.prob);
            mass += e.prob;
            if mass >= p - TOP_P_SLACK {
                break;
            }
        }
        TopPSet { tokens, probs, mass }
    }
}

/// A nucleus set. `tokens` are in rank order (probability desc, id asc).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopPSet {
    pub tokens: Vec<TokenId>,
    pub probs: Vec<f64>,
    pub mass: f64,
}

impl TopPSet {
    pub fn contains(&self, token: TokenId) -> bool {
        self.tokens.contains(&token)
    }

    /// Minimality: mass covers `p`, and dropping the last (least probable)
    /// member would not.
    pub fn is_minimal_for(&self, p: f64, dist: &TokenDistribution) -> bool {
        let full = self.tokens.len() == dist.entries().len();
        let covers = self.mass >= p - TOP_P_SLACK || full;
        let without_last = self.mass - self.probs.last().copied().unwrap_or(0.0);
        covers && without_last < p - TOP_P_SLACK
    }
}

/// Incremental language model.
///
/// Implementations must be deterministic: equal inputs give bit-identical outputs
/// for a fixed [`Scorer::version`].
pub trait Scorer: Send + Sync {
    /// Backend version tag; cached values are only reused under the same tag.
    fn version(&self) -> String;

    fn vocab_size(&self) -> usize;

    fn eos_token(&self) -> Option<TokenId>;

    fn next_token_logprobs(&self, ex: &Example, prefix: &[TokenId]) -> Result<TokenDistribution>;

    /// Batched form; results align with `items`.
    fn next_token_logprobs_batch(&self, items: &[(&Example, &[TokenId])]) -> Result<Vec<TokenDistribution>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            items
                .par_iter()
                .map(|(ex, prefix)| self.next_token_logprobs(ex, prefix))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            items
                .iter()
                .map(|(ex, prefix)| self.next_token_logprobs(ex, prefix))
                .collect()
        }
    }

    /// Sum over positions of `log P(token_t | example, tokens_<t)`. No
    /// end-of-sequence term is added; partial replies are scored as-is.
    fn sequence_logprob(&self, ex: &Example, tokens: &[TokenId]) -> Result<f64> {
        let mut total = 0.0;
        for t in 0..tokens.len() {
            total += self.next_token_logprobs(ex, &tokens[..t])?.logprob(tokens[t])?;
        }
        Ok(total)
    }

    fn sequence_logprob_batch(&self, items: &[(&Example, &[TokenId])]) -> Result<Vec<f64>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            items
                .par_iter()
                .map(|(ex, tokens)| self.sequence_logprob(ex, tokens))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            items
                .iter()
                .map(|(ex, tokens)| self.sequence_logprob(ex, tokens))
                .collect()
        }
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>>;

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String>;
}

macro_rules! forward_scorer {
    ($($ty:ty),*) => {$(
        impl<T: Scorer + ?Sized> Scorer for $ty {
            fn version(&self) -> String {
                (**self).version()
            }
            fn vocab_size(&self) -> usize {
                (**self).vocab_size()
            }
            fn eos_token(&self) -> Option<TokenId> {
                (**self).eos_token()
            }
            fn next_token_logprobs(&self, ex: &Example, prefix: &[TokenId]) -> Result<TokenDistribution> {
                (**self).next_token_logprobs(ex, prefix)
            }
            fn next_token_logprobs_batch(
                &self,
                items: &[(&Example, &[TokenId])],
            ) -> Result<Vec<TokenDistribution>> {
                (**self).next_token_logprobs_batch(items)
            }
            fn sequence_logprob(&self, ex: &Example, tokens: &[TokenId]) -> Result<f64> {
                (**self).sequence_logprob(ex, tokens)
            }
            fn sequence_logprob_batch(&self, items: &[(&Example, &[TokenId])]) -> Result<Vec<f64>> {
                (**self).sequence_logprob_batch(items)
            }
            fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
                (**self).tokenize(text)
            }
            fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
                (**self).detokenize(tokens)
            }
        }
    )*};
}

forward_scorer!(Box<T>, std::sync::Arc<T>, &T);

pub fn top_p_set(scorer: &dyn Scorer, ex: &Example, prefix: &[TokenId], p: f64) -> Result<TopPSet> {
    check_p(p)?;
    Ok(scorer.next_token_logprobs(ex, prefix)?.top_p(p))
}

pub fn sequence_logprob(scorer: &dyn Scorer, ex: &Example, reply: &Reply) -> Result<f64> {
    if reply.is_empty() {
        return Err(Error::Invalid("cannot score an empty reply".into()));
    }
    scorer.sequence_logprob(ex, &reply.tokens)
}

/// Builds a reply from text using the scorer's tokenizer.
pub fn reply_from_text(scorer: &dyn Scorer, text: &str, origin: ReplyOrigin) -> Result<Reply> {
    let tokens = scorer.tokenize(text)?;
    if tokens.is_empty() {
        return Err(Error::Invalid(format!("reply {text:?} tokenizes to nothing")));
    }
    Ok(Reply::new(tokens, text, origin))
}

fn check_p(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("top-p must be in (0, 1], got {p}")))
    }
}

/// Draws `n` replies by nucleus sampling, renormalizing within the nucleus at
/// each step. Draws stop at `max_len` tokens or a sampled end-of-sequence token;
/// draws that end immediately are dropped and duplicates are removed keeping the
/// first occurrence.
pub fn sample_replies(
    scorer: &dyn Scorer,
    ex: &Example,
    n: usize,
    p: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Reply>> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    check_p(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eos = scorer.eos_token();
    let mut out: Vec<Reply> = Vec::new();
    for _ in 0..n {
        let mut tokens = Vec::new();
        while tokens.len() < max_len {
            let nucleus = scorer.next_token_logprobs(ex, &tokens)?.top_p(p);
            let mut u = rng.random::<f64>() * nucleus.mass;
            let mut pick = *nucleus.tokens.last().expect("nucleus is nonempty");
            for (tok, prob) in nucleus.tokens.iter().zip(&nucleus.probs) {
                if u < *prob {
                    pick = *tok;
                    break;
                }
                u -= prob;
            }
            if Some(pick) == eos {
                break;
            }
            tokens.push(pick);
        }
        if tokens.is_empty() || out.iter().any(|r| r.tokens == tokens) {
            continue;
        }
        let text = scorer.detokenize(&tokens)?;
        out.push(Reply::new(tokens, text, ReplyOrigin::LmGenerated));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Label;
    use proptest::prelude::*;

    fn abc() -> TabularScorer {
        let mut s = TabularScorer::new("abc", &["a", "b", "c"], None);
        s.set_default("*", &[(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
        s
    }

    fn ex() -> Example {
        Example::new("e", "m", Label::Good)
    }

    #[test]
    fn table_lookup_is_exact() {
        let d = abc().next_token_logprobs(&ex(), &[]).unwrap();
        let pairs: Vec<_> = d.entries().iter().map(|e| (e.token, e.prob)).collect();
        assert_eq!(pairs, vec![(0, 0.5), (1, 0.3), (2, 0.2)]);
    }

    #[test]
    fn top_p_examples() {
        let s = abc();
        assert_eq!(top_p_set(&s, &ex(), &[], 0.8).unwrap().tokens, vec![0, 1]);
        assert_eq!(top_p_set(&s, &ex(), &[], 1.0).unwrap().tokens, vec![0, 1, 2]);
        assert!(top_p_set(&s, &ex(), &[], 0.0).is_err());

        let tie = TokenDistribution::from_probs([(0, 0.4), (1, 0.4), (2, 0.2)]).unwrap();
        assert_eq!(tie.top_p(0.4).tokens, vec![0]);
        let tie_rev = TokenDistribution::from_probs([(5, 0.4), (3, 0.4), (2, 0.2)]).unwrap();
        assert_eq!(tie_rev.top_p(0.4).tokens, vec![3]);
    }

    #[test]
    fn distribution_validation() {
        assert!(TokenDistribution::from_probs([(0, 0.5), (1, 0.4)]).is_err());
        assert!(TokenDistribution::from_probs([(0, 0.5), (0, 0.5)]).is_err());
        assert!(TokenDistribution::from_probs([(0, 1.0), (1, 0.0)]).is_err());
        assert!(TokenDistribution::from_probs([(0, 0.5), (1, 0.5 + 5e-7)]).is_ok());
    }

    #[test]
    fn sequence_logprob_sums_table_entries() {
        let mut s = TabularScorer::new("two", &["a", "b"], None);
        s.set("e", &[], &[(0, 0.25), (1, 0.75)]).unwrap();
        s.set("e", &[1], &[(0, 0.4), (1, 0.6)]).unwrap();
        let e = ex();
        let one = Reply::new(vec![1], "b", ReplyOrigin::Handcrafted);
        assert_eq!(sequence_logprob(&s, &e, &one).unwrap(), 0.75f64.ln());
        let two = Reply::new(vec![1, 0], "b a", ReplyOrigin::Handcrafted);
        let expected = 0.75f64.ln() + 0.4f64.ln();
        assert!((sequence_logprob(&s, &e, &two).unwrap() - expected).abs() < 1e-15);
        let empty = Reply::new(vec![], "", ReplyOrigin::Handcrafted);
        assert!(sequence_logprob(&s, &e, &empty).is_err());
    }

    #[test]
    fn degenerate_sampler_dedupes_to_one() {
        let mut s = TabularScorer::new("det", &["x", "y", "<eos>"], Some(2));
        s.set_default("*", &[(0, 1.0 - 1e-9), (1, 5e-10), (2, 5e-10)]).unwrap();
        let replies = sample_replies(&s, &ex(), 20, 0.9, 4, 7).unwrap();
        assert_eq!(replies.len(), 1);
        assert_eq!(replies[0].tokens, vec![0, 0, 0, 0]);
        assert_eq!(replies[0].text, "x x x x");
    }

    #[test]
    fn sampling_is_seeded() {
        let mut s = TabularScorer::new("mix", &["x", "y", "z", "<eos>"], Some(3));
        s.set_default("*", &[(0, 0.3), (1, 0.3), (2, 0.2), (3, 0.2)]).unwrap();
        let a = sample_replies(&s, &ex(), 20, 0.9, 5, 11).unwrap();
        let b = sample_replies(&s, &ex(), 20, 0.9, 5, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 1);
        let c = sample_replies(&s, &ex(), 20, 0.9, 5, 12).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|r| !r.tokens.contains(&3) && r.len() <= 5));
    }

    fn arb_dist() -> impl Strategy<Value = TokenDistribution> {
        prop::collection::vec(1u32..20, 1..10).prop_map(|w| {
            let total: u32 = w.iter().sum();
            TokenDistribution::from_probs(
                w.iter()
                    .enumerate()
                    .map(|(i, &x)| (i as TokenId, x as f64 / total as f64)),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn top_p_minimal(d in arb_dist(), p in 0.01f64..=1.0) {
            let set = d.top_p(p);
            prop_assert!(set.is_minimal_for(p, &d));
            prop_assert!((d.total_mass() - 1.0).abs() <= MASS_TOLERANCE);
        }

        #[test]
        fn chain_rule(split in 0usize..4, seq in prop::collection::vec(0u32..3, 4)) {
            let mut s = TabularScorer::new("chain", &["a", "b", "c"], None);
            s.set_default("*", &[(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
            s.set("*", &[0], &[(0, 0.1), (1, 0.1), (2, 0.8)]).unwrap();
            let e = ex();
            let full = s.sequence_logprob(&e, &seq).unwrap();
            let mut acc = s.sequence_logprob(&e, &seq[..split]).unwrap();
            for t in split..seq.len() {
                acc += s.next_token_logprobs(&e, &seq[..t]).unwrap().logprob(seq[t]).unwrap();
            }
            prop_assert!((full - acc).abs() < 1e-12);
        }
    }
}
