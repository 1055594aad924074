//! Seeded random tabular fixtures for property tests and the demo.
//!
//! Bad and good examples each share a side template, so their nucleus sets
//! overlap enough for the search to find something, while per-example noise keeps
//! supports and scores varied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Example, Label, TokenId};
use crate::scorer::TabularScorer;
use crate::search::{Aggregator, EmptyGoodPolicy, SearchConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureShape {
    pub vocab: usize,
    pub bad: usize,
    pub good: usize,
    /// Longest prefix with its own table is `depth - 1`; longer prefixes use a
    /// per-example fallback table.
    pub depth: usize,
    /// Weight of the shared side template, in `[0, 1]`.
    pub sharing: f64,
}

impl Default for FixtureShape {
    fn default() -> Self {
        Self {
            vocab: 6,
            bad: 5,
            good: 4,
            depth: 3,
            sharing: 0.6,
        }
    }
}

pub struct RandomFixture {
    pub scorer: TabularScorer,
    pub bad: Vec<Example>,
    pub good: Vec<Example>,
}

impl RandomFixture {
    pub fn bad_refs(&self) -> Vec<&Example> {
        self.bad.iter().collect()
    }

    pub fn good_refs(&self) -> Vec<&Example> {
        self.good.iter().collect()
    }
}

fn peaked(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(3) + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

fn mix(a: &[f64], b: &[f64], wa: f64) -> Vec<(TokenId, f64)> {
    let mixed: Vec<f64> = a.iter().zip(b).map(|(x, y)| wa * x + (1.0 - wa) * y).collect();
    let total: f64 = mixed.iter().sum();
    mixed
        .into_iter()
        .enumerate()
        .map(|(t, p)| (t as TokenId, p / total))
        .collect()
}

fn all_prefixes(vocab: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    let mut layer = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &layer {
            for t in 0..vocab as TokenId {
                let mut q = p.clone();
                q.push(t);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

pub fn random_fixture(seed: u64, shape: FixtureShape) -> RandomFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = (0..shape.vocab).map(|i| format!("t{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut scorer = TabularScorer::new(&format!("random-{seed}"), &names, None);
    let prefixes = all_prefixes(shape.vocab, shape.depth.saturating_sub(1));

    let bad: Vec<Example> = (0..shape.bad)
        .map(|i| Example::new(format!("b{i}"), format!("bad {i}"), Label::Nonsense))
        .collect();
    let good: Vec<Example> = (0..shape.good)
        .map(|i| Example::new(format!("g{i}"), format!("good {i}"), Label::Good))
        .collect();

    for side in [&bad, &good] {
        let templates: Vec<Vec<f64>> = prefixes.iter().map(|_| peaked(&mut rng, shape.vocab)).collect();
        for ex in side {
            for (prefix, template) in prefixes.iter().zip(&templates) {
                let own = peaked(&mut rng, shape.vocab);
                scorer
                    .set(&ex.id, prefix, &mix(template, &own, shape.sharing))
                    .expect("generated tables are valid");
            }
            let own = peaked(&mut rng, shape.vocab);
            let flat = vec![1.0 / shape.vocab as f64; shape.vocab];
            scorer
                .set_default(&ex.id, &mix(&own, &flat, 0.5))
                .expect("generated tables are valid");
        }
    }
    RandomFixture { scorer, bad, good }
}

/// A valid random configuration with `t_max <= max_depth`.
pub fn random_config(seed: u64, vocab: usize, bad: usize, max_depth: usize) -> SearchConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_max = rng.random_range(1..=max_depth.max(1));
    let aggs = [Aggregator::Mean, Aggregator::Min, Aggregator::Max];
    SearchConfig {
        p: rng.random_range(0.5..0.95),
        k: rng.random_range(1..=bad.max(1)),
        topn: rng.random_range(1..=vocab.max(1)),
        t_max,
        t_prune: rng.random_range(1..=t_max),
        t_delta: rng.random_range(-2.0..2.0),
        f_b: aggs[rng.random_range(0..aggs.len())],
        f_g: aggs[rng.random_range(0..aggs.len())],
        empty_good_policy: if rng.random_bool(0.5) {
            EmptyGoodPolicy::ScoreAllGood
        } else {
            EmptyGoodPolicy::Pass
        },
        strict_mode: rng.random_bool(0.2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::Scorer;

    #[test]
    fn fixtures_are_reproducible_and_complete() {
        let shape = FixtureShape::default();
        let a = random_fixture(7, shape);
        let b = random_fixture(7, shape);
        assert_eq!(a.scorer.to_fixture(), b.scorer.to_fixture());
        // Lookups beyond the explicit depth fall back instead of failing.
        let d = a.scorer.next_token_logprobs(&a.bad[0], &[0, 1, 2, 3]).unwrap();
        assert_eq!(d.entries().len(), shape.vocab);
        assert_ne!(a.scorer.to_fixture(), random_fixture(8, shape).scorer.to_fixture());
    }

    #[test]
    fn configs_validate() {
        for seed in 0..200 {
            random_config(seed, 6, 5, 3).validate().unwrap();
        }
    }
}
