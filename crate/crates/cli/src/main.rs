//! `autoreply` command-line entry point.

mod backend;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use autoreply::search::{Aggregator, EmptyGoodPolicy, SearchConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Contrastive reply search and reply-classifier ensembles for nonsense detection.
#[derive(Debug, Parser)]
#[command(name = "autoreply", version)]
pub struct Cli {
    /// Scoring backend: `tabular:<file>`, `ngram:<file>`, `remote` (base URL from
    /// AUTOREPLY_SCORER_URL) or `remote:<url>`.
    #[arg(long, global = true)]
    pub scorer: Option<String>,

    /// Vocabulary size of a remote model (needed only by `--oracle`).
    #[arg(long, global = true, default_value_t = 0)]
    pub vocab_size: usize,

    /// End-of-sequence token id of a remote model.
    #[arg(long, global = true)]
    pub eos_token: Option<u32>,

    /// Persistent score cache (JSON lines, shared across runs).
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,

    /// Scoring threads; defaults to the logical core count.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Seed for stochastic steps; commands that sample refuse to run without it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a dataset file and write its canonical form.
    Ingest(IngestArgs),
    /// Train an add-k n-gram scorer on a whitespace-tokenized corpus.
    TrainNgram(TrainNgramArgs),
    /// Search for discriminative follow-up replies.
    Search(SearchArgs),
    /// Build reply classifiers, tune on validation and evaluate on test.
    FitEvaluate(FitEvaluateArgs),
    /// Choose search hyperparameters by replaying trusted replies.
    Tune(TuneArgs),
    /// Re-run the command recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Canonical dataset output.
    #[arg(long)]
    pub output: PathBuf,
    /// Keep only bad examples of this category (good examples are kept).
    #[arg(long)]
    pub category: Option<String>,
    /// Validation report (JSON); also printed to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainNgramArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 0.1)]
    pub k: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmptyGood {
    Pass,
    ScoreAllGood,
}

impl From<EmptyGood> for EmptyGoodPolicy {
    fn from(e: EmptyGood) -> Self {
        match e {
            EmptyGood::Pass => EmptyGoodPolicy::Pass,
            EmptyGood::ScoreAllGood => EmptyGoodPolicy::ScoreAllGood,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    #[arg(long, default_value_t = SearchConfig::default().p)]
    pub p: f64,
    #[arg(long, default_value_t = SearchConfig::default().k)]
    pub k: usize,
    #[arg(long, default_value_t = SearchConfig::default().topn)]
    pub topn: usize,
    #[arg(long, default_value_t = SearchConfig::default().t_max)]
    pub t_max: usize,
    #[arg(long, default_value_t = SearchConfig::default().t_prune)]
    pub t_prune: usize,
    #[arg(long, default_value_t = SearchConfig::default().t_delta, allow_negative_numbers = true)]
    pub t_delta: f64,
    /// mean, min, max, nth:N or top-mean:N
    #[arg(long, default_value_t = SearchConfig::default().f_b)]
    pub f_b: Aggregator,
    #[arg(long, default_value_t = SearchConfig::default().f_g)]
    pub f_g: Aggregator,
    #[arg(long, value_enum, default_value_t = EmptyGood::ScoreAllGood)]
    pub empty_good: EmptyGood,
    /// Use min(bad) - max(good) with threshold 0 unless --t-delta is given.
    #[arg(long)]
    pub strict: bool,
}

impl ConfigArgs {
    pub fn to_config(&self, t_delta_given: bool) -> SearchConfig {
        let cfg = SearchConfig {
            p: self.p,
            k: self.k,
            topn: self.topn,
            t_max: self.t_max,
            t_prune: self.t_prune,
            t_delta: self.t_delta,
            f_b: self.f_b,
            f_g: self.f_g,
            empty_good_policy: self.empty_good.into(),
            strict_mode: false,
        };
        match (self.strict, t_delta_given) {
            (false, _) => cfg,
            (true, false) => cfg.strict(),
            (true, true) => SearchConfig {
                strict_mode: true,
                ..cfg
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Training split (bad and good examples).
    #[arg(long)]
    pub train: PathBuf,
    /// Restrict bad examples to one category.
    #[arg(long)]
    pub category: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Also run the exhaustive oracle and fail on any difference.
    #[arg(long)]
    pub oracle: bool,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    /// Search run output (JSON).
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Emitted replies in reply-list format.
    #[arg(long)]
    pub replies_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Autoreply,
    Handcrafted,
    LmGenerated,
    SingleReply,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Phase {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Args)]
pub struct FitEvaluateArgs {
    #[arg(long, value_enum, default_value_t = Mode::Autoreply)]
    pub mode: Mode,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Search run whose replies become classifiers (autoreply, single-reply).
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Reply list (handcrafted, single-reply): JSON lines, or one reply per line in a
    /// `.txt` file. Defaults to the packaged hand-crafted list.
    #[arg(long)]
    pub replies: Option<PathBuf>,
    /// Minimum training-bad count c; several values give one ensemble each.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub c_min: Vec<usize>,
    /// Fix N_R instead of tuning it on validation.
    #[arg(long)]
    pub n_required: Option<usize>,
    /// Drop -5.0 from the hand-crafted threshold grid.
    #[arg(long)]
    pub drop_grid_start: bool,
    /// Replies sampled per training bad example (lm-generated).
    #[arg(long, default_value_t = 20)]
    pub samples_per_example: usize,
    /// Nucleus mass for sampling (lm-generated).
    #[arg(long, default_value_t = 0.9)]
    pub sample_p: f64,
    /// Longest sampled or loaded reply.
    #[arg(long, default_value_t = 6)]
    pub max_len: usize,
    /// Split used to fit thresholds.
    #[arg(long, value_enum, default_value_t = Phase::Train)]
    pub fit_split: Phase,
    /// Split used to choose subsets and N_R.
    #[arg(long, value_enum, default_value_t = Phase::Validation)]
    pub tune_split: Phase,
    /// Compare two prediction files with the paired bootstrap instead of fitting.
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pub compare: Option<Vec<PathBuf>>,
    /// Bootstrap metric: f1, precision, recall or auc.
    #[arg(long, default_value = "f1")]
    pub metric: String,
    #[arg(long, default_value_t = autoreply::metrics::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    /// Output directory for bundles, reports and predictions.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub category: Option<String>,
    /// Trusted replies (JSON lines or `.txt`); defaults to the packaged hand-crafted list.
    #[arg(long)]
    pub trusted: Option<PathBuf>,
    /// JSON array of search configurations; defaults to the built-in grid.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Skip trusted replies the scorer cannot tokenize instead of failing.
    #[arg(long)]
    pub skip_untokenizable: bool,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    /// Manifest written by an earlier run.
    #[arg(long = "from")]
    pub from: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    match commands::run_argv(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !commands::already_reported(&e) {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
