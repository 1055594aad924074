//! Reply threshold classifiers and voting ensembles.
//!
//! A reply `r` becomes a classifier through a log-probability threshold `t_r`: an
//! example `x` is predicted nonsense iff `log P(r | x) > t_r`. Thresholds are fit on
//! the train split only; ensemble sizes and `N_R` are chosen on the validation
//! split; the test split is only ever evaluated.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example, Reply, Split, TokenId};
use crate::error::{Error, Result};
use crate::manifest::InputHash;
use crate::metrics::{precision_recall_f1, Confusion, EvalReport, Prediction};
use crate::scorer::{sample_replies, Scorer};
use crate::search::ReplyRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Maximum log-prob over the reply's good support.
    MaxOverGoodSupport,
    /// Maximum log-prob over every training good example.
    MaxOverAllGood,
    /// Best training F1 over a threshold grid.
    GridBestTrainF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplyClassifier {
    pub reply: Reply,
    /// `t_r`: predict nonsense when the reply's log-prob strictly exceeds it.
    pub threshold: f64,
    /// `c`: training bad examples scoring above the threshold.
    pub train_bad_above: usize,
    /// `N`: training bad examples.
    pub train_bad_total: usize,
    pub fit_mode: FitMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_f1: Option<f64>,
}

impl ReplyClassifier {
    pub fn train_recall(&self) -> f64 {
        if self.train_bad_total == 0 {
            0.0
        } else {
            self.train_bad_above as f64 / self.train_bad_total as f64
        }
    }

    pub fn predicts_nonsense(&self, logprob: f64) -> bool {
        logprob > self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<ReplyClassifier>,
    n_required: usize,
}

impl Ensemble {
    pub fn new(members: Vec<ReplyClassifier>, n_required: usize) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Invalid("an ensemble needs at least one member".into()));
        }
        if n_required < 1 || n_required > members.len() {
            return Err(Error::Invalid(format!(
                "n_required must be in [1, {}], got {n_required}",
                members.len()
            )));
        }
        Ok(Self { members, n_required })
    }

    pub fn members(&self) -> &[ReplyClassifier] {
        &self.members
    }

    pub fn n_required(&self) -> usize {
        self.n_required
    }

    pub fn replies(&self) -> Vec<Reply> {
        self.members.iter().map(|m| m.reply.clone()).collect()
    }
}

/// `log P(reply | example)` for every (reply, example) pair of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// Row per reply, column per example.
    pub rows: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn compute(scorer: &dyn Scorer, replies: &[Reply], examples: &[Example]) -> Result<Self> {
        let items: Vec<(&Example, &[TokenId])> = replies
            .iter()
            .flat_map(|r| examples.iter().map(move |e| (e, r.tokens.as_slice())))
            .collect();
        let flat = scorer.sequence_logprob_batch(&items)?;
        let rows = if examples.is_empty() {
            vec![Vec::new(); replies.len()]
        } else {
            flat.chunks(examples.len()).map(<[f64]>::to_vec).collect()
        };
        Ok(Self { rows })
    }

    /// Votes per example from the classifiers whose rows are `members`.
    pub fn votes(&self, classifiers: &[ReplyClassifier]) -> Vec<usize> {
        let width = self.rows.first().map_or(0, Vec::len);
        let mut votes = vec![0; width];
        for (clf, row) in classifiers.iter().zip(&self.rows) {
            for (v, &lp) in votes.iter_mut().zip(row) {
                if clf.predicts_nonsense(lp) {
                    *v += 1;
                }
            }
        }
        votes
    }
}

fn require_split(d: &Dataset, expected: Split, what: &str) -> Result<()> {
    if d.split != expected {
        return Err(Error::Phase(format!(
            "{what} must use the {expected} split, got {}",
            d.split
        )));
    }
    Ok(())
}

fn count_above(lps: &[f64], threshold: f64) -> usize {
    lps.iter().filter(|&&lp| lp > threshold).count()
}

fn fit_max_over(reply: &Reply, designated_good: &[f64], train_bad: &[f64], mode: FitMode) -> Result<ReplyClassifier> {
    let threshold = designated_good
        .iter()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::Invalid("threshold fit needs at least one good example".into()))?;
    Ok(ReplyClassifier {
        reply: reply.clone(),
        threshold,
        train_bad_above: count_above(train_bad, threshold),
        train_bad_total: train_bad.len(),
        fit_mode: mode,
        train_f1: None,
    })
}

/// `t_r` = max reply log-prob over the good support (ids) within the training
/// split, or over every training good example when the support is absent or
/// empty.
pub fn fit_reply_threshold(
    scorer: &dyn Scorer,
    reply: &Reply,
    train: &Dataset,
    good_support: Option<&[String]>,
) -> Result<ReplyClassifier> {
    require_split(train, Split::Train, "threshold fitting")?;
    let row = ScoreMatrix::compute(scorer, std::slice::from_ref(reply), train.examples())?
        .rows
        .remove(0);
    fit_from_row(reply, &row, train, good_support)
}

fn fit_from_row(
    reply: &Reply,
    row: &[f64],
    train: &Dataset,
    good_support: Option<&[String]>,
) -> Result<ReplyClassifier> {
    let support: Option<HashSet<&str>> = good_support
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(String::as_str).collect());
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for (ex, &lp) in train.examples().iter().zip(row) {
        if ex.label.is_nonsense() {
            bad.push(lp);
        } else if support.as_ref().is_none_or(|s| s.contains(ex.id.as_str())) {
            good.push(lp);
        }
    }
    let mode = if support.is_some() {
        FitMode::MaxOverGoodSupport
    } else {
        FitMode::MaxOverAllGood
    };
    if support.is_some() && good.is_empty() {
        return Err(Error::Invalid(format!(
            "good support of {:?} matches no training example",
            reply.text
        )));
    }
    fit_max_over(reply, &good, &bad, mode)
}

/// Candidate thresholds `-5.0, -5.5, ..., -30.0`; `include_start = false` drops
/// `-5.0`.
pub fn threshold_grid(include_start: bool) -> Vec<f64> {
    let start = if include_start { 0 } else { 1 };
    (start..=50).map(|i| -5.0 - 0.5 * i as f64).collect()
}

/// Picks the grid threshold with the best training F1; ties go to the more
/// negative (higher recall) threshold.
pub fn fit_handcrafted_threshold(
    scorer: &dyn Scorer,
    reply: &Reply,
    train: &Dataset,
    grid: &[f64],
) -> Result<ReplyClassifier> {
    require_split(train, Split::Train, "threshold fitting")?;
    let row = ScoreMatrix::compute(scorer, std::slice::from_ref(reply), train.examples())?
        .rows
        .remove(0);
    fit_grid_from_row(reply, &row, &train.gold(), grid)
}

fn fit_grid_from_row(reply: &Reply, row: &[f64], gold: &[bool], grid: &[f64]) -> Result<ReplyClassifier> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let predicted: Vec<bool> = row.iter().map(|&lp| lp > t).collect();
        let f1 = precision_recall_f1(&Confusion::from_predictions(&predicted, gold)?).2;
        let better = match best {
            None => true,
            Some((bt, bf)) => f1 > bf || (f1 == bf && t < bt),
        };
        if better {
            best = Some((t, f1));
        }
    }
    let (threshold, f1) = best.expect("grid is nonempty");
    let bad: Vec<f64> = row.iter().zip(gold).filter(|(_, &g)| g).map(|(&lp, _)| lp).collect();
    Ok(ReplyClassifier {
        reply: reply.clone(),
        threshold,
        train_bad_above: count_above(&bad, threshold),
        train_bad_total: bad.len(),
        fit_mode: FitMode::GridBestTrainF1,
        train_f1: Some(f1),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinglePrediction {
    pub nonsense: bool,
    pub logprob: f64,
}

pub fn predict_single(scorer: &dyn Scorer, clf: &ReplyClassifier, ex: &Example) -> Result<SinglePrediction> {
    let logprob = scorer.sequence_logprob(ex, &clf.reply.tokens)?;
    Ok(SinglePrediction {
        nonsense: clf.predicts_nonsense(logprob),
        logprob,
    })
}

/// Keeps classifiers with `c >= c_min`, ordered by `c` descending then reply tokens.
pub fn select_by_recall(classifiers: &[ReplyClassifier], c_min: usize) -> Vec<ReplyClassifier> {
    let mut kept: Vec<ReplyClassifier> = classifiers
        .iter()
        .filter(|c| c.train_bad_above >= c_min)
        .cloned()
        .collect();
    kept.sort_by(|a, b| {
        b.train_bad_above
            .cmp(&a.train_bad_above)
            .then_with(|| a.reply.tokens.cmp(&b.reply.tokens))
    });
    kept
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub nonsense: bool,
    pub votes: usize,
}

pub fn ensemble_predict(scorer: &dyn Scorer, e: &Ensemble, ex: &Example) -> Result<EnsemblePrediction> {
    let matrix = ScoreMatrix::compute(scorer, &e.replies(), std::slice::from_ref(ex))?;
    let votes = matrix.votes(&e.members)[0];
    Ok(EnsemblePrediction {
        nonsense: votes >= e.n_required,
        votes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_required: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NRequiredTuning {
    pub n_required: usize,
    pub sweep: Vec<SweepRow>,
}

fn sweep_votes(votes: &[usize], gold: &[bool], members: usize) -> Result<NRequiredTuning> {
    let mut sweep = Vec::with_capacity(members);
    let mut best = (1, f64::NEG_INFINITY);
    for n in 1..=members {
        let predicted: Vec<bool> = votes.iter().map(|&v| v >= n).collect();
        let (precision, recall, f1) = precision_recall_f1(&Confusion::from_predictions(&predicted, gold)?);
        if f1 > best.1 {
            best = (n, f1);
        }
        sweep.push(SweepRow {
            n_required: n,
            precision,
            recall,
            f1,
        });
    }
    Ok(NRequiredTuning {
        n_required: best.0,
        sweep,
    })
}

/// Chooses `N_R` in `1..=|members|` by validation F1; ties go to the smaller value.
pub fn tune_n_required(
    scorer: &dyn Scorer,
    members: &[ReplyClassifier],
    validation: &Dataset,
) -> Result<NRequiredTuning> {
    require_split(validation, Split::Validation, "N_R tuning")?;
    if validation.is_empty() {
        return Err(Error::Invalid("validation split is empty".into()));
    }
    if members.is_empty() {
        return Err(Error::Invalid("cannot tune an empty ensemble".into()));
    }
    let replies: Vec<Reply> = members.iter().map(|m| m.reply.clone()).collect();
    let matrix = ScoreMatrix::compute(scorer, &replies, validation.examples())?;
    sweep_votes(&matrix.votes(members), &validation.gold(), members.len())
}

/// Per-example predictions of an ensemble, ranked by vote count.
pub fn evaluate_ensemble(scorer: &dyn Scorer, e: &Ensemble, data: &Dataset) -> Result<EvalReport> {
    let matrix = ScoreMatrix::compute(scorer, &e.replies(), data.examples())?;
    let votes = matrix.votes(&e.members);
    let predictions = data
        .examples()
        .iter()
        .zip(votes)
        .map(|(ex, v)| Prediction {
            id: ex.id.clone(),
            nonsense: v >= e.n_required,
            score: v as f64,
        })
        .collect();
    EvalReport::new(predictions, &data.gold(), "votes")
}

/// Per-example predictions of one classifier, ranked by reply log-prob.
pub fn evaluate_single(scorer: &dyn Scorer, clf: &ReplyClassifier, data: &Dataset) -> Result<EvalReport> {
    let row = ScoreMatrix::compute(scorer, std::slice::from_ref(&clf.reply), data.examples())?
        .rows
        .remove(0);
    let predictions = data
        .examples()
        .iter()
        .zip(row)
        .map(|(ex, lp)| Prediction {
            id: ex.id.clone(),
            nonsense: clf.predicts_nonsense(lp),
            score: lp,
        })
        .collect();
    EvalReport::new(predictions, &data.gold(), "logprob")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub size: usize,
    pub n_required: usize,
    pub validation_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub ensemble: Ensemble,
    /// Every fitted classifier before subset selection.
    pub classifiers: Vec<ReplyClassifier>,
    pub n_required_sweep: Vec<SweepRow>,
    /// Prefix-subset search (hand-crafted pipeline only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subsets: Vec<SubsetRow>,
}

/// Fits each reply on a grid, ranks by training F1, and picks the top-m prefix
/// with the best validation F1 (each with its own tuned `N_R`; ties favour the
/// smaller subset).
pub fn handcrafted_pipeline(
    scorer: &dyn Scorer,
    replies: &[Reply],
    train: &Dataset,
    validation: &Dataset,
    grid: &[f64],
) -> Result<PipelineResult> {
    require_split(train, Split::Train, "threshold fitting")?;
    require_split(validation, Split::Validation, "subset selection")?;
    if replies.is_empty() {
        return Err(Error::Invalid("no hand-crafted replies given".into()));
    }
    let train_scores = ScoreMatrix::compute(scorer, replies, train.examples())?;
    let gold = train.gold();
    let mut fitted = replies
        .iter()
        .zip(&train_scores.rows)
        .map(|(r, row)| fit_grid_from_row(r, row, &gold, grid))
        .collect::<Result<Vec<_>>>()?;
    fitted.sort_by(|a, b| b.train_f1.unwrap_or(0.0).total_cmp(&a.train_f1.unwrap_or(0.0)));

    let ranked: Vec<Reply> = fitted.iter().map(|c| c.reply.clone()).collect();
    let valid_scores = ScoreMatrix::compute(scorer, &ranked, validation.examples())?;
    let valid_gold = validation.gold();
    let mut subsets = Vec::new();
    let mut best: Option<(usize, NRequiredTuning, f64)> = None;
    for size in 1..=fitted.len() {
        let sub = ScoreMatrix {
            rows: valid_scores.rows[..size].to_vec(),
        };
        let tuning = sweep_votes(&sub.votes(&fitted[..size]), &valid_gold, size)?;
        let f1 = tuning.sweep[tuning.n_required - 1].f1;
        subsets.push(SubsetRow {
            size,
            n_required: tuning.n_required,
            validation_f1: f1,
        });
        if best.as_ref().is_none_or(|b| f1 > b.2) {
            best = Some((size, tuning, f1));
        }
    }
    let (size, tuning, _) = best.expect("at least one subset");
    Ok(PipelineResult {
        ensemble: Ensemble::new(fitted[..size].to_vec(), tuning.n_required)?,
        classifiers: fitted,
        n_required_sweep: tuning.sweep,
        subsets,
    })
}

/// Max-over-good classifiers for searched replies, using each record's good support.
pub fn classifiers_from_records(
    scorer: &dyn Scorer,
    records: &[ReplyRecord],
    train: &Dataset,
) -> Result<Vec<ReplyClassifier>> {
    require_split(train, Split::Train, "threshold fitting")?;
    let replies: Vec<Reply> = records.iter().map(|r| r.reply.clone()).collect();
    let matrix = ScoreMatrix::compute(scorer, &replies, train.examples())?;
    records
        .iter()
        .zip(&matrix.rows)
        .map(|(rec, row)| fit_from_row(&rec.reply, row, train, Some(&rec.good_support)))
        .collect()
}

/// Keeps classifiers with `c >= c_min` and tunes `N_R` on validation.
pub fn ensemble_from_classifiers(
    scorer: &dyn Scorer,
    classifiers: Vec<ReplyClassifier>,
    validation: &Dataset,
    c_min: usize,
) -> Result<PipelineResult> {
    let selected = select_by_recall(&classifiers, c_min);
    if selected.is_empty() {
        return Err(Error::Invalid(format!(
            "no classifier reaches c >= {c_min} ({} candidates)",
            classifiers.len()
        )));
    }
    let tuning = tune_n_required(scorer, &selected, validation)?;
    Ok(PipelineResult {
        ensemble: Ensemble::new(selected, tuning.n_required)?,
        classifiers,
        n_required_sweep: tuning.sweep,
        subsets: Vec::new(),
    })
}

/// Searched replies -> classifiers -> recall filter -> tuned ensemble.
pub fn autoreply_pipeline(
    scorer: &dyn Scorer,
    records: &[ReplyRecord],
    train: &Dataset,
    validation: &Dataset,
    c_min: usize,
) -> Result<PipelineResult> {
    let classifiers = classifiers_from_records(scorer, records, train)?;
    ensemble_from_classifiers(scorer, classifiers, validation, c_min)
}

/// Samples `n_per_example` replies after every training bad example, dedupes them
/// globally and fits each against all training good examples. Bad example `i` is
/// sampled with seed `seed + i`.
pub fn lm_generated_pipeline(
    scorer: &dyn Scorer,
    train: &Dataset,
    n_per_example: usize,
    p: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<ReplyClassifier>> {
    require_split(train, Split::Train, "threshold fitting")?;
    let mut replies: Vec<Reply> = Vec::new();
    let mut seen: HashSet<Vec<TokenId>> = HashSet::new();
    for (i, ex) in train.bad().into_iter().enumerate() {
        for r in sample_replies(scorer, ex, n_per_example, p, max_len, seed.wrapping_add(i as u64))? {
            if seen.insert(r.tokens.clone()) {
                replies.push(r);
            }
        }
    }
    let matrix = ScoreMatrix::compute(scorer, &replies, train.examples())?;
    replies
        .iter()
        .zip(&matrix.rows)
        .map(|(r, row)| fit_from_row(r, row, train, None))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleReplyRow {
    pub reply: String,
    pub threshold: f64,
    pub validation: EvalReport,
    pub test: EvalReport,
}

/// Each classifier on its own, sorted by validation F1 (descending).
pub fn single_reply_table(
    scorer: &dyn Scorer,
    classifiers: &[ReplyClassifier],
    validation: &Dataset,
    test: &Dataset,
) -> Result<Vec<SingleReplyRow>> {
    require_split(validation, Split::Validation, "single-reply ranking")?;
    let mut rows = classifiers
        .iter()
        .map(|clf| {
            Ok(SingleReplyRow {
                reply: clf.reply.text.clone(),
                threshold: clf.threshold,
                validation: evaluate_single(scorer, clf, validation)?,
                test: evaluate_single(scorer, clf, test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| b.validation.f1.total_cmp(&a.validation.f1));
    Ok(rows)
}

/// Classifier bundle file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBundle {
    pub manifest: Option<String>,
    pub scorer_version: String,
    pub dataset_hashes: Vec<InputHash>,
    pub classifiers: Vec<ReplyClassifier>,
}

/// Ensemble file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleFile {
    pub manifest: Option<String>,
    pub scorer_version: String,
    pub dataset_hashes: Vec<InputHash>,
    pub n_required: usize,
    pub members: Vec<ReplyClassifier>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, ReplyOrigin};
    use crate::scorer::TabularScorer;

    fn reply(tokens: Vec<TokenId>) -> Reply {
        Reply::new(tokens, "r", ReplyOrigin::Autoreply)
    }

    fn clf(c: usize, tokens: Vec<TokenId>) -> ReplyClassifier {
        ReplyClassifier {
            reply: reply(tokens),
            threshold: -1.0,
            train_bad_above: c,
            train_bad_total: 10,
            fit_mode: FitMode::MaxOverAllGood,
            train_f1: None,
        }
    }

    /// Per-example log-probs for a single-token reply `0` come straight from the table.
    fn scorer_with(lps: &[(&str, f64)]) -> TabularScorer {
        let mut s = TabularScorer::new("cls", &["r", "other"], None);
        for (id, lp) in lps {
            let p = lp.exp();
            s.set_default(id, &[(0, p), (1, 1.0 - p)]).unwrap();
        }
        s
    }

    #[test]
    fn max_over_good_threshold() {
        let s = scorer_with(&[("g1", -5.0), ("g2", -3.0), ("g3", -9.0), ("b1", -1.0), ("b2", -4.0)]);
        let train = Dataset::new(
            Split::Train,
            vec![
                Example::new("g1", "m", Label::Good),
                Example::new("g2", "m", Label::Good),
                Example::new("g3", "m", Label::Good),
                Example::new("b1", "m", Label::Nonsense),
                Example::new("b2", "m", Label::Nonsense),
            ],
        );
        let c = fit_reply_threshold(&s, &reply(vec![0]), &train, None).unwrap();
        assert!((c.threshold - -3.0).abs() < 1e-12);
        assert_eq!((c.train_bad_above, c.train_bad_total), (1, 2));
        assert_eq!(c.fit_mode, FitMode::MaxOverAllGood);

        let only = vec!["g3".to_string()];
        let c = fit_reply_threshold(&s, &reply(vec![0]), &train, Some(&only)).unwrap();
        assert!((c.threshold - -9.0).abs() < 1e-12);
        assert_eq!(c.train_bad_above, 2);
        assert_eq!(c.fit_mode, FitMode::MaxOverGoodSupport);

        let empty: Vec<String> = Vec::new();
        let c = fit_reply_threshold(&s, &reply(vec![0]), &train, Some(&empty)).unwrap();
        assert_eq!(c.fit_mode, FitMode::MaxOverAllGood);

        let test = Dataset::new(Split::Test, train.examples().to_vec());
        assert!(matches!(
            fit_reply_threshold(&s, &reply(vec![0]), &test, None),
            Err(Error::Phase(_))
        ));
    }

    #[test]
    fn predict_is_strict() {
        let mut c = clf(1, vec![0]);
        c.threshold = -3.0;
        assert!(c.predicts_nonsense(-2.0));
        assert!(!c.predicts_nonsense(-3.0));
    }

    #[test]
    fn threshold_grid_endpoints() {
        let g = threshold_grid(true);
        assert_eq!(g.len(), 51);
        assert_eq!((g[0], g[1], g[50]), (-5.0, -5.5, -30.0));
        let g = threshold_grid(false);
        assert_eq!((g.len(), g[0]), (50, -5.5));
    }

    #[test]
    fn grid_fit_prefers_recall_on_ties() {
        // One bad at -4, goods far below the grid: every grid threshold gives F1 = 1.
        let s = scorer_with(&[("b", -4.0), ("g1", -31.5), ("g2", -40.0)]);
        let train = Dataset::new(
            Split::Train,
            vec![
                Example::new("b", "m", Label::Nonsense),
                Example::new("g1", "m", Label::Good),
                Example::new("g2", "m", Label::Good),
            ],
        );
        let c = fit_handcrafted_threshold(&s, &reply(vec![0]), &train, &threshold_grid(true)).unwrap();
        assert_eq!(c.threshold, -30.0);
        assert_eq!(c.train_f1, Some(1.0));
        assert_eq!((c.train_bad_above, c.train_bad_total), (1, 1));
        assert!(fit_handcrafted_threshold(&s, &reply(vec![0]), &train, &[]).is_err());
    }

    #[test]
    fn recall_selection() {
        let all = vec![clf(3, vec![2]), clf(7, vec![1]), clf(9, vec![0]), clf(7, vec![0, 1])];
        assert_eq!(select_by_recall(&all, 0).len(), 4);
        let kept = select_by_recall(&all, 5);
        let cs: Vec<_> = kept
            .iter()
            .map(|c| (c.train_bad_above, c.reply.tokens.clone()))
            .collect();
        assert_eq!(cs, vec![(9, vec![0]), (7, vec![0, 1]), (7, vec![1])]);
    }

    #[test]
    fn ensemble_construction_and_votes() {
        assert!(Ensemble::new(Vec::new(), 1).is_err());
        assert!(Ensemble::new(vec![clf(1, vec![0])], 2).is_err());
        assert!(Ensemble::new(vec![clf(1, vec![0])], 0).is_err());

        // Members vote {1, 1, 0} on the example.
        let mut s = TabularScorer::new("ens", &["a", "b", "c"], None);
        s.set_default("x", &[(0, 0.5), (1, 0.3), (2, 0.2)]).unwrap();
        let with = |tok: TokenId, t: f64| ReplyClassifier {
            threshold: t,
            ..clf(1, vec![tok])
        };
        let members = vec![with(0, -1.0), with(1, -1.5), with(2, -1.0)];
        let ex = Example::new("x", "m", Label::Good);
        let e2 = Ensemble::new(members.clone(), 2).unwrap();
        assert_eq!(
            ensemble_predict(&s, &e2, &ex).unwrap(),
            EnsemblePrediction {
                nonsense: true,
                votes: 2
            }
        );
        let e3 = Ensemble::new(members, 3).unwrap();
        assert!(!ensemble_predict(&s, &e3, &ex).unwrap().nonsense);
    }

    #[test]
    fn n_required_tuning() {
        let s = scorer_with(&[("b", -1.0), ("g", -5.0)]);
        let valid = Dataset::new(
            Split::Validation,
            vec![
                Example::new("b", "m", Label::Nonsense),
                Example::new("g", "m", Label::Good),
            ],
        );
        let single = vec![ReplyClassifier {
            threshold: -2.0,
            ..clf(1, vec![0])
        }];
        assert_eq!(tune_n_required(&s, &single, &valid).unwrap().n_required, 1);

        // Identical members vote identically, so every N_R ties.
        let same = vec![single[0].clone(), single[0].clone(), single[0].clone()];
        let t = tune_n_required(&s, &same, &valid).unwrap();
        assert_eq!(t.n_required, 1);
        assert_eq!(t.sweep.len(), 3);
        assert!(t.sweep.iter().all(|r| r.f1 == 1.0));

        let train_split = Dataset::new(Split::Train, valid.examples().to_vec());
        assert!(matches!(tune_n_required(&s, &same, &train_split), Err(Error::Phase(_))));
    }

    #[test]
    fn handcrafted_single_reply() {
        let s = scorer_with(&[("b", -6.0), ("g", -20.0), ("vb", -7.0), ("vg", -25.0)]);
        let train = Dataset::new(
            Split::Train,
            vec![
                Example::new("b", "m", Label::Nonsense),
                Example::new("g", "m", Label::Good),
            ],
        );
        let valid = Dataset::new(
            Split::Validation,
            vec![
                Example::new("vb", "m", Label::Nonsense),
                Example::new("vg", "m", Label::Good),
            ],
        );
        let r = handcrafted_pipeline(&s, &[reply(vec![0])], &train, &valid, &threshold_grid(true)).unwrap();
        assert_eq!(r.ensemble.members().len(), 1);
        assert_eq!(r.ensemble.n_required(), 1);
        assert_eq!(r.ensemble.members()[0].threshold, -20.0);
        assert!(handcrafted_pipeline(&s, &[], &train, &valid, &threshold_grid(true)).is_err());
    }

    #[test]
    fn lm_generated_dedupes_degenerate_scorer() {
        let mut s = TabularScorer::new("det", &["x", "y", "<eos>"], Some(2));
        s.set_default("*", &[(0, 1.0 - 2e-9), (1, 1e-9), (2, 1e-9)]).unwrap();
        let train = Dataset::new(
            Split::Train,
            vec![
                Example::new("b1", "m", Label::Nonsense),
                Example::new("b2", "m", Label::Nonsense),
                Example::new("g", "m", Label::Good),
            ],
        );
        let a = lm_generated_pipeline(&s, &train, 20, 0.9, 3, 5).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].fit_mode, FitMode::MaxOverAllGood);
        assert_eq!(a, lm_generated_pipeline(&s, &train, 20, 0.9, 3, 5).unwrap());
    }
}
