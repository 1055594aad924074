#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use autoreply::data::{Dataset, Example, Label, Split};
use autoreply::manifest::write_json;
use autoreply::scorer::{NGramModel, TabularScorer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn autoreply(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autoreply"))
        .current_dir(dir)
        .env_remove("RUST_LOG")
        .env_remove("AUTOREPLY_SCORER_URL")
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = autoreply(dir, args);
    assert!(
        out.status.success(),
        "autoreply {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Vocabulary {u, v, w, EOS}; three bad examples proposing mostly `u`, one good
/// example proposing mostly `v`.
pub fn f1_parts() -> (TabularScorer, Vec<Example>) {
    let mut s = TabularScorer::new("f1", &["u", "v", "w", "<eos>"], Some(3));
    let mut examples = Vec::new();
    for i in 1..=3 {
        let id = format!("B{i}");
        s.set_default(&id, &[(0, 0.6), (1, 0.3), (2, 0.05), (3, 0.05)]).unwrap();
        examples.push(Example::new(id, format!("bad message {i}"), Label::Nonsense));
    }
    s.set_default("G1", &[(0, 0.05), (1, 0.6), (2, 0.3), (3, 0.05)])
        .unwrap();
    examples.push(Example::new("G1", "good message", Label::Good));
    (s, examples)
}

/// Writes `f1.tables.json` and `f1.train.jsonl` into `dir`.
pub fn write_f1(dir: &Path) {
    let (s, examples) = f1_parts();
    write_json(&dir.join("f1.tables.json"), &s.to_fixture()).unwrap();
    Dataset::new(Split::Train, examples)
        .write(&dir.join("f1.train.jsonl"))
        .unwrap();
}

pub const MARKER: &str = "zork";
pub const BAD_FOLLOW_UP: &str = "huh what";
pub const GOOD_FOLLOW_UPS: [&str; 3] = ["ok", "sure", "great"];
const FILLER: [&str; 4] = ["a", "b", "c", "d"];

pub struct Synthetic {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
    /// One line per training example: the example followed by its follow-up.
    pub corpus: String,
}

fn message(rng: &mut ChaCha8Rng, last: &str) -> String {
    let n = rng.random_range(1..=3);
    let mut words: Vec<&str> = (0..n).map(|_| FILLER[rng.random_range(0..FILLER.len())]).collect();
    words.push(last);
    words.join(" ")
}

/// Bad messages end with the marker and are followed by a fixed confused reply;
/// good messages end with a filler word (cycling through all of them) and are
/// followed by an acknowledgement.
pub fn synthetic(seed: u64, bad: usize, good: usize) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let split = |tag: &str, rng: &mut ChaCha8Rng| -> Vec<Example> {
        let mut out = Vec::new();
        for i in 0..bad {
            out.push(Example::new(
                format!("{tag}-b{i}"),
                message(rng, MARKER),
                Label::Nonsense,
            ));
        }
        for i in 0..good {
            let last = FILLER[i % FILLER.len()];
            out.push(Example::new(format!("{tag}-g{i}"), message(rng, last), Label::Good));
        }
        out
    };
    let train = split("train", &mut rng);
    let validation = split("valid", &mut rng);
    let test = split("test", &mut rng);
    let mut corpus = String::new();
    for ex in &train {
        let reply = if ex.label.is_nonsense() {
            BAD_FOLLOW_UP
        } else {
            GOOD_FOLLOW_UPS[rng.random_range(0..GOOD_FOLLOW_UPS.len())]
        };
        corpus.push_str(&NGramModel::training_line(ex, reply));
        corpus.push('\n');
    }
    Synthetic {
        train,
        validation,
        test,
        corpus,
    }
}

/// Raw (non-canonical) split files plus the corpus, as a user would supply them.
pub fn write_synthetic(dir: &Path, s: &Synthetic) {
    let raw = |examples: &[Example]| -> String {
        examples
            .iter()
            .map(|e| {
                format!(
                    "{{\"message\":{:?},\"label\":\"{}\",\"id\":{:?}}}\n",
                    e.message,
                    if e.label.is_nonsense() { "nonsense" } else { "good" },
                    e.id
                )
            })
            .collect()
    };
    std::fs::write(dir.join("raw.train.jsonl"), raw(&s.train)).unwrap();
    std::fs::write(dir.join("raw.valid.jsonl"), raw(&s.validation)).unwrap();
    std::fs::write(dir.join("raw.test.jsonl"), raw(&s.test)).unwrap();
    std::fs::write(dir.join("corpus.txt"), &s.corpus).unwrap();
}

pub const SYNTH_SEARCH: [&str; 12] = [
    "--p",
    "0.9",
    "--k",
    "10",
    "--topn",
    "5",
    "--t-max",
    "2",
    "--t-prune",
    "1",
    "--t-delta",
    "1.0",
];

/// ingest -> train-ngram -> search -> fit-evaluate, all paths relative to `dir`.
pub fn run_pipeline(dir: &Path, workers: &str) {
    for (split, raw, out) in [
        ("train", "raw.train.jsonl", "train.jsonl"),
        ("validation", "raw.valid.jsonl", "valid.jsonl"),
        ("test", "raw.test.jsonl", "test.jsonl"),
    ] {
        ok(dir, &["ingest", "--input", raw, "--split", split, "--output", out]);
    }
    ok(
        dir,
        &[
            "train-ngram",
            "--corpus",
            "corpus.txt",
            "--order",
            "3",
            "--k",
            "0.1",
            "--output",
            "model.json",
        ],
    );
    let mut args = vec![
        "search",
        "--scorer",
        "ngram:model.json",
        "--workers",
        workers,
        "--train",
        "train.jsonl",
        "--output",
        "search.json",
        "--replies-out",
        "replies.jsonl",
        "--oracle",
    ];
    args.extend_from_slice(&SYNTH_SEARCH);
    ok(dir, &args);
    ok(
        dir,
        &[
            "fit-evaluate",
            "--mode",
            "autoreply",
            "--scorer",
            "ngram:model.json",
            "--workers",
            workers,
            "--train",
            "train.jsonl",
            "--validation",
            "valid.jsonl",
            "--test",
            "test.jsonl",
            "--records",
            "search.json",
            "--output-dir",
            "eval",
        ],
    );
    ok(
        dir,
        &[
            "fit-evaluate",
            "--mode",
            "lm-generated",
            "--scorer",
            "ngram:model.json",
            "--workers",
            workers,
            "--seed",
            "11",
            "--samples-per-example",
            "5",
            "--max-len",
            "3",
            "--train",
            "train.jsonl",
            "--validation",
            "valid.jsonl",
            "--test",
            "test.jsonl",
            "--output-dir",
            "lm",
        ],
    );
}

/// Every pipeline output except manifests, which carry timestamps.
pub const PIPELINE_OUTPUTS: [&str; 15] = [
    "train.jsonl",
    "valid.jsonl",
    "test.jsonl",
    "model.json",
    "search.json",
    "replies.jsonl",
    "eval/classifiers.json",
    "eval/ensemble.json",
    "eval/test.preds.jsonl",
    "eval/report.json",
    "eval/report.txt",
    "lm/classifiers.json",
    "lm/ensemble.json",
    "lm/test.preds.jsonl",
    "lm/report.json",
];
