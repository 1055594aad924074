use std::collections::BTreeSet;

use autoreply::data::{Reply, ReplyOrigin, TokenId};
use autoreply::fixtures::{random_config, random_fixture, FixtureShape, RandomFixture};
use autoreply::scorer::CachedScorer;
use autoreply::search::{autoreply_search, brute_force_search, diff_records, replay_chain, ReplyRecord, SearchConfig};
use autoreply::tuning::simulate_reply_survival;

fn shape(seed: u64) -> FixtureShape {
    FixtureShape {
        vocab: 3 + (seed % 6) as usize,
        bad: 3 + (seed % 4) as usize,
        good: 2 + (seed % 3) as usize,
        depth: 3,
        sharing: 0.7,
    }
}

fn run(f: &RandomFixture, cfg: &SearchConfig) -> Vec<ReplyRecord> {
    autoreply_search(&f.scorer, &f.bad_refs(), &f.good_refs(), cfg)
        .unwrap()
        .records
}

fn emitted(f: &RandomFixture, cfg: &SearchConfig) -> BTreeSet<Vec<TokenId>> {
    run(f, cfg).into_iter().map(|r| r.reply.tokens).collect()
}

#[test]
fn matches_brute_force_on_random_fixtures() {
    let mut nonempty = 0;
    for seed in 0..40 {
        let s = shape(seed);
        let f = random_fixture(seed, s);
        let cfg = random_config(1000 + seed, s.vocab, s.bad, 3);
        let fast = run(&f, &cfg);
        let brute = brute_force_search(&f.scorer, &f.bad_refs(), &f.good_refs(), &cfg).unwrap();
        let diff = diff_records(&fast, &brute, 1e-9);
        assert!(diff.is_empty(), "seed {seed}, {cfg:?}: {diff:?}");
        nonempty += usize::from(!fast.is_empty());
    }
    // The generator must exercise more than the empty case.
    assert!(nonempty >= 10, "only {nonempty} fixtures emitted anything");
}

#[test]
fn emitted_sets_shrink_as_configs_tighten() {
    for seed in 0..10 {
        let s = shape(seed);
        let f = random_fixture(seed, s);
        let mut base = random_config(2000 + seed, s.vocab, s.bad, 3);
        base.k = 1;
        base.topn = s.vocab;
        let at = |cfg: &SearchConfig| emitted(&f, cfg);

        let mut prev = at(&base);
        for k in 2..=s.bad {
            let cur = at(&SearchConfig { k, ..base.clone() });
            assert!(cur.is_subset(&prev), "seed {seed}: K = {k}");
            prev = cur;
        }
        let mut prev = at(&base);
        for step in 1..=8 {
            let t_delta = base.t_delta + 0.5 * step as f64;
            let cur = at(&SearchConfig {
                t_delta,
                ..base.clone()
            });
            assert!(cur.is_subset(&prev), "seed {seed}: t_delta = {t_delta}");
            prev = cur;
        }
        let mut prev = at(&base);
        for topn in (1..s.vocab).rev() {
            let cur = at(&SearchConfig { topn, ..base.clone() });
            assert!(cur.is_subset(&prev), "seed {seed}: topn = {topn}");
            prev = cur;
        }
    }
}

#[test]
fn replay_reproduces_recorded_supports() {
    for seed in 0..15 {
        let s = shape(seed);
        let f = random_fixture(seed, s);
        let cfg = random_config(3000 + seed, s.vocab, s.bad, 3);
        let records = run(&f, &cfg);
        for rec in &records {
            let trace = replay_chain(&f.scorer, &f.bad_refs(), &f.good_refs(), &cfg, &rec.reply.tokens).unwrap();
            let last = trace.steps.last().unwrap();
            assert_eq!(last.bad_support, rec.bad_support);
            assert_eq!(last.good_support, rec.good_support);
            // Every emitted prefix carries the support of its own depth.
            for step in &trace.steps {
                if let Some(p) = records
                    .iter()
                    .find(|r| r.reply.tokens == rec.reply.tokens[..step.depth])
                {
                    assert_eq!(p.bad_support, step.bad_support);
                }
            }
            // Supports only shrink along a chain.
            for w in trace.steps.windows(2) {
                assert!(w[1].bad_support.iter().all(|id| w[0].bad_support.contains(id)));
            }
        }
    }
}

#[test]
fn output_is_deterministic_across_thread_counts() {
    let s = shape(5);
    let f = random_fixture(5, s);
    let cfg = SearchConfig {
        k: 2,
        topn: s.vocab,
        t_max: 3,
        t_prune: 1,
        t_delta: -1.0,
        ..SearchConfig::default()
    };
    let baseline = run(&f, &cfg);
    for threads in [1, 2, 4] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        assert_eq!(pool.install(|| run(&f, &cfg)), baseline);
    }
}

#[test]
fn cache_does_not_change_results() {
    let s = shape(3);
    let f = random_fixture(3, s);
    let cfg = random_config(42, s.vocab, s.bad, 3);
    let cached = CachedScorer::new(&f.scorer);
    let a = autoreply_search(&cached, &f.bad_refs(), &f.good_refs(), &cfg).unwrap();
    let b = autoreply_search(&cached, &f.bad_refs(), &f.good_refs(), &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records, run(&f, &cfg));
    assert!(cached.hits() > 0);
}

#[test]
fn survivors_appear_in_search_output() {
    for seed in 0..10 {
        let s = shape(seed);
        let f = random_fixture(seed, s);
        let mut cfg = random_config(4000 + seed, s.vocab, s.bad, 3);
        cfg.topn = s.vocab;
        let output = emitted(&f, &cfg);
        let brute = brute_force_search(&f.scorer, &f.bad_refs(), &f.good_refs(), &cfg).unwrap();
        for rec in brute {
            let reply = Reply::new(rec.reply.tokens.clone(), "", ReplyOrigin::Handcrafted);
            let sim = simulate_reply_survival(&f.scorer, &reply, &f.bad_refs(), &f.good_refs(), &cfg).unwrap();
            assert!(sim.survived);
            assert!(output.contains(&reply.tokens));
        }
    }
}
