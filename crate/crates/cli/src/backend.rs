use anyhow::{bail, Context};
use autoreply::scorer::{CachedScorer, NGramModel, RemoteScorer, Scorer, TabularScorer};

use crate::Cli;

pub const URL_ENV: &str = "AUTOREPLY_SCORER_URL";

/// Opens the backend named by `--scorer`, wrapped in the score cache when
/// `--cache` is given.
pub fn open(cli: &Cli) -> anyhow::Result<Box<dyn Scorer>> {
    let Some(spec) = cli.scorer.as_deref() else {
        bail!(autoreply::Error::Config(
            "this command needs --scorer (tabular:<file>, ngram:<file> or remote[:<url>])".into()
        ));
    };
    let inner: Box<dyn Scorer> = if let Some(path) = spec.strip_prefix("tabular:") {
        Box::new(TabularScorer::load(path.as_ref()).with_context(|| format!("loading {path}"))?)
    } else if let Some(path) = spec.strip_prefix("ngram:") {
        Box::new(NGramModel::load(path.as_ref()).with_context(|| format!("loading {path}"))?)
    } else if spec == "remote" || spec.starts_with("remote:") {
        let url = match spec.strip_prefix("remote:") {
            Some(url) => url.to_string(),
            None => std::env::var(URL_ENV)
                .map_err(|_| autoreply::Error::Config(format!("--scorer remote needs {URL_ENV} to be set")))?,
        };
        Box::new(RemoteScorer::connect(&url, cli.vocab_size, cli.eos_token)?)
    } else {
        bail!(autoreply::Error::Config(format!("unknown scorer {spec:?}")));
    };
    Ok(match &cli.cache {
        Some(path) => Box::new(CachedScorer::open(inner, path)?),
        None => inner,
    })
}
