//! Confusion counts, precision/recall/F1, rank AUC and the paired bootstrap test.
//!
//! The positive class is "nonsense". Zero denominators yield 0 rather than NaN so
//! that sweeps over heavily imbalanced splits never fail.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[bool], gold: &[bool]) -> Result<Self> {
        check_aligned(predicted.len(), gold.len())?;
        let mut c = Confusion::default();
        for (&p, &g) in predicted.iter().zip(gold) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `(precision, recall, f1)`.
pub fn precision_recall_f1(c: &Confusion) -> (f64, f64, f64) {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

pub fn f1_score(predicted: &[bool], gold: &[bool]) -> Result<f64> {
    Ok(precision_recall_f1(&Confusion::from_predictions(predicted, gold)?).2)
}

/// Probability that a random positive outscores a random negative, ties counting
/// one half (the Mann-Whitney statistic over both class sizes). Computed from
/// mid-ranks in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_aligned(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("AUC needs both positive and negative examples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                pos_rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!(
            "misaligned inputs: {a} predictions vs {b} labels"
        )));
    }
    Ok(())
}

/// Per-example output of a classifier: hard label plus ranking score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub nonsense: bool,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the split holds a single class.
    pub auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// What the AUC ranks by, e.g. "votes" or "logprob".
    pub score_kind: String,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn new(predictions: Vec<Prediction>, gold: &[bool], score_kind: &str) -> Result<Self> {
        let labels: Vec<bool> = predictions.iter().map(|p| p.nonsense).collect();
        let scores: Vec<f64> = predictions.iter().map(|p| p.score).collect();
        let confusion = Confusion::from_predictions(&labels, gold)?;
        let (precision, recall, f1) = precision_recall_f1(&confusion);
        let auc = roc_auc(&scores, gold).ok();
        Ok(Self {
            auc,
            precision,
            recall,
            f1,
            confusion,
            score_kind: score_kind.to_string(),
            predictions,
        })
    }

    /// `Auc Prec Recall F1` scaled by 100 with two decimals.
    pub fn table_row(&self) -> String {
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        format!(
            "{:>7} {:>7} {:>7} {:>7}",
            self.auc.map(pct).unwrap_or_else(|| "-".into()),
            pct(self.precision),
            pct(self.recall),
            pct(self.f1)
        )
    }
}

/// Aligned text table in the `Auc/Prec/Recall/F1` layout.
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$} {:>7} {:>7} {:>7} {:>7}",
        "model", "Auc", "Prec", "Recall", "F1"
    );
    for (name, r) in rows {
        let _ = writeln!(out, "{name:<width$} {}", r.table_row());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    F1,
    Precision,
    Recall,
    Auc,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f1" => Ok(Metric::F1),
            "precision" => Ok(Metric::Precision),
            "recall" => Ok(Metric::Recall),
            "auc" => Ok(Metric::Auc),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

impl Metric {
    /// AUC of a single-class sample is taken as 0.5.
    fn eval(self, labels: &[bool], scores: &[f64], gold: &[bool]) -> f64 {
        match self {
            Metric::Auc => roc_auc(scores, gold).unwrap_or(0.5),
            _ => {
                let c = Confusion::from_predictions(labels, gold).expect("aligned");
                let (p, r, f) = precision_recall_f1(&c);
                match self {
                    Metric::Precision => p,
                    Metric::Recall => r,
                    _ => f,
                }
            }
        }
    }
}

/// Labels and scores of one system over an evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemOutputs {
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

impl SystemOutputs {
    pub fn from_predictions(preds: &[Prediction]) -> Self {
        Self {
            labels: preds.iter().map(|p| p.nonsense).collect(),
            scores: preds.iter().map(|p| p.score).collect(),
        }
    }

    pub fn from_labels(labels: Vec<bool>) -> Self {
        let scores = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        Self { labels, scores }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub metric: Metric,
    pub metric_a: f64,
    pub metric_b: f64,
    /// `metric(a) - metric(b)` on the full split.
    pub observed_delta: f64,
    pub p_value: f64,
    pub resamples: usize,
    pub seed: u64,
}

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Two-sided paired bootstrap. Example indices are resampled with replacement;
/// the p-value is twice the fraction of resamples whose delta does not share the
/// sign of the observed delta, capped at 1. Resample `i` draws from its own
/// ChaCha stream derived from `seed`, so results do not depend on scheduling.
pub fn paired_bootstrap(
    a: &SystemOutputs,
    b: &SystemOutputs,
    gold: &[bool],
    metric: Metric,
    resamples: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    let n = gold.len();
    for len in [a.labels.len(), a.scores.len(), b.labels.len(), b.scores.len()] {
        check_aligned(len, n)?;
    }
    if resamples < 1000 {
        return Err(Error::Config(format!(
            "bootstrap needs at least 1000 resamples, got {resamples}"
        )));
    }
    if n == 0 {
        return Err(Error::Invalid("bootstrap over an empty split".into()));
    }
    let metric_a = metric.eval(&a.labels, &a.scores, gold);
    let metric_b = metric.eval(&b.labels, &b.scores, gold);
    let observed = metric_a - metric_b;
    let mut result = BootstrapResult {
        metric,
        metric_a,
        metric_b,
        observed_delta: observed,
        p_value: 1.0,
        resamples,
        seed,
    };
    if observed == 0.0 {
        return Ok(result);
    }
    let deltas = resample_deltas(a, b, gold, metric, resamples, seed);
    let opposing = deltas.iter().filter(|&&d| d * observed.signum() <= 0.0).count();
    result.p_value = (2.0 * opposing as f64 / resamples as f64).min(1.0);
    Ok(result)
}

fn resample_deltas(
    a: &SystemOutputs,
    b: &SystemOutputs,
    gold: &[bool],
    metric: Metric,
    resamples: usize,
    seed: u64,
) -> Vec<f64> {
    let one = |i: usize| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let n = gold.len();
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pick_b = |v: &[bool]| idx.iter().map(|&k| v[k]).collect::<Vec<_>>();
        let pick_f = |v: &[f64]| idx.iter().map(|&k| v[k]).collect::<Vec<_>>();
        let g = pick_b(gold);
        metric.eval(&pick_b(&a.labels), &pick_f(&a.scores), &g)
            - metric.eval(&pick_b(&b.labels), &pick_f(&b.scores), &g)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..resamples).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..resamples).map(one).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn prf_examples() {
        let c = |tp, fp, fn_| Confusion { tp, fp, fn_, tn: 0 };
        assert_eq!(precision_recall_f1(&c(1, 0, 0)), (1.0, 1.0, 1.0));
        assert_eq!(precision_recall_f1(&c(0, 3, 2)), (0.0, 0.0, 0.0));
        assert_eq!(precision_recall_f1(&c(0, 0, 0)), (0.0, 0.0, 0.0));
        let (p, r, f) = precision_recall_f1(&c(2, 6, 1));
        assert!((p - 0.25).abs() < 1e-12);
        assert!((r - 2.0 / 3.0).abs() < 1e-12);
        // 2 * 0.25 * (2/3) / (0.25 + 2/3) = 4/11
        assert!((f - 4.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert_eq!(
            roc_auc(&[3.0, 2.0, 2.0, 0.0], &[true, false, true, false]).unwrap(),
            0.875
        );
        assert!(roc_auc(&[1.0, 2.0], &[true, true]).is_err());
        assert!(roc_auc(&[1.0], &[true, false]).is_err());
    }

    #[test]
    fn report_table_layout() {
        let preds = vec![
            Prediction {
                id: "a".into(),
                nonsense: true,
                score: 2.0,
            },
            Prediction {
                id: "b".into(),
                nonsense: false,
                score: 0.0,
            },
        ];
        let r = EvalReport::new(preds, &[true, false], "votes").unwrap();
        assert_eq!(r.table_row(), " 100.00  100.00  100.00  100.00");
        let t = format_table(&[("ensemble".into(), &r)]);
        assert!(t.starts_with("model"));
    }

    #[test]
    fn bootstrap_identical_systems() {
        let a = SystemOutputs::from_labels(vec![true, false, true, false, false]);
        let gold = [true, false, false, false, true];
        let r = paired_bootstrap(&a, &a, &gold, Metric::F1, 1000, 3).unwrap();
        assert_eq!(r.observed_delta, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(paired_bootstrap(&a, &a, &gold, Metric::F1, 999, 3).is_err());
        assert!(paired_bootstrap(&a, &a, &gold[..4], Metric::F1, 1000, 3).is_err());
    }

    #[test]
    fn bootstrap_forced_separation() {
        let gold: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let perfect = SystemOutputs::from_labels(gold.clone());
        let wrong = SystemOutputs::from_labels(gold.iter().map(|g| !g).collect());
        for metric in [Metric::F1, Metric::Auc, Metric::Recall] {
            let r = paired_bootstrap(&perfect, &wrong, &gold, metric, 2000, 9).unwrap();
            assert!(r.observed_delta > 0.0);
            assert!(r.p_value < 0.01, "{metric:?} {}", r.p_value);
            let again = paired_bootstrap(&perfect, &wrong, &gold, metric, 2000, 9).unwrap();
            assert_eq!(r, again);
        }
    }

    proptest! {
        #[test]
        fn auc_matches_pair_count(
            data in prop::collection::vec((0i32..6, any::<bool>()), 2..30)
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let pos = labels.iter().filter(|&&l| l).count();
            prop_assume!(pos > 0 && pos < labels.len());
            let mut credit = 0.0;
            let mut pairs = 0.0;
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if labels[i] && !labels[j] {
                        pairs += 1.0;
                        if scores[i] > scores[j] { credit += 1.0 } else if scores[i] == scores[j] { credit += 0.5 }
                    }
                }
            }
            let auc = roc_auc(&scores, &labels).unwrap();
            prop_assert!((auc - credit / pairs).abs() < 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((roc_auc(&neg, &labels).unwrap() - (1.0 - auc)).abs() < 1e-12);
        }

        #[test]
        fn f1_is_harmonic_mean(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50) {
            let (p, r, f) = precision_recall_f1(&Confusion { tp, fp, fn_, tn: 0 });
            if tp == 0 {
                prop_assert_eq!(f, 0.0);
            } else {
                prop_assert!((f - 2.0 / (1.0 / p + 1.0 / r)).abs() < 1e-12);
            }
            prop_assert!(f <= p.max(r) + 1e-15);
        }
    }
}
