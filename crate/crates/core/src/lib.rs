//! Contrastive follow-up reply search for detecting nonsensical dialogue messages.
//!
//! A message is suspicious when a language model, conditioned on it, assigns high
//! probability to replies such as "what are you talking about". This crate finds
//! such replies automatically with a pruned breadth-first search over the model's
//! token space, turns each reply into a log-probability threshold classifier and
//! combines the classifiers into voting ensembles.
//!
//! Module map:
//!
//! * [`data`] annotated examples, datasets and reply lists.
//! * [`scorer`] the incremental language-model contract and its backends.
//! * [`search`] the contrastive reply search and its brute-force oracle.
//! * [`classify`] reply threshold classifiers, ensembles and baseline pipelines.
//! * [`metrics`] precision/recall/F1, rank AUC and the paired bootstrap test.
//! * [`tuning`] search hyperparameter selection by replaying trusted replies.
//! * [`fixtures`] seeded random tabular fixtures for tests and demos.
//! * [`manifest`] run manifests and content hashes for reproducible runs.

pub mod classify;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod handcrafted;
pub mod manifest;
pub mod metrics;
pub mod scorer;
pub mod search;
pub mod tuning;

pub use error::{Error, Result};
