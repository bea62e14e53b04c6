//! Binary classification metrics.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Predicted positive iff `prob >= threshold`.
    pub fn from_probabilities(probs: &[f64], labels: &[u8], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&p, &y) in probs.iter().zip(labels) {
            match (p >= threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Rates derived from a confusion matrix plus AUC. A zero denominator gives a
/// rate of 0; an undefined AUC (single-class data) is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

impl Rates {
    pub fn from_confusion(c: Confusion, auc: Option<f64>) -> Self {
        let sensitivity = ratio(c.tp, c.tp + c.fn_);
        let precision = ratio(c.tp, c.tp + c.fp);
        let f1 = if precision + sensitivity > 0.0 {
            2.0 * precision * sensitivity / (precision + sensitivity)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            sensitivity,
            specificity: ratio(c.tn, c.tn + c.fp),
            precision,
            recall: sensitivity,
            f1,
            auc,
            confusion: c,
        }
    }

    pub fn from_scores(probs: &[f64], labels: &[u8], threshold: f64) -> Self {
        let pos: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        Self::from_confusion(Confusion::from_probabilities(probs, labels, threshold), auc(probs, &pos))
    }
}

/// Area under the ROC curve by the trapezoidal rule over the unique score
/// thresholds. `None` when only one class is present.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // area in units of (tp × fp), halved at the end
    let (mut tp, mut area2) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut dtp, mut dfp) = (0u64, 0u64);
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        area2 += dfp * (2 * tp + dtp);
        tp += dtp;
    }
    Some(area2 as f64 / (2.0 * p as f64 * n as f64))
}

/// One row of training history: epoch-level losses and validation metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
    pub lr_backbone: f64,
    pub lr_quantum_and_head: f64,
    pub epoch_seconds: f64,
}

impl MetricsReport {
    pub fn new(epoch: usize, train_loss: f64, val_loss: f64, rates: &Rates, lrs: (f64, f64), epoch_seconds: f64) -> Self {
        Self {
            epoch,
            train_loss,
            val_loss,
            accuracy: rates.accuracy,
            auc: rates.auc,
            f1: rates.f1,
            sensitivity: rates.sensitivity,
            specificity: rates.specificity,
            precision: rates.precision,
            recall: rates.recall,
            confusion: rates.confusion,
            lr_backbone: lrs.0,
            lr_quantum_and_head: lrs.1,
            epoch_seconds,
        }
    }
}

/// Column order of the history CSV. Wall-clock time is kept out of this file
/// so that repeated runs produce identical bytes; see [`TIMING_HEADER`].
pub const HISTORY_HEADER: &str =
    "epoch,train_loss,val_loss,accuracy,auc,f1,sensitivity,specificity,precision,recall,tp,fp,tn,fn,lr_backbone,lr_quantum_and_head";
pub const TIMING_HEADER: &str = "epoch,epoch_seconds";

fn fmt_f(v: f64) -> String {
    // shortest round-trip representation
    format!("{v:?}")
}

pub fn history_csv(history: &[MetricsReport]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let c = r.confusion;
        let fields = [
            r.epoch.to_string(),
            fmt_f(r.train_loss),
            fmt_f(r.val_loss),
            fmt_f(r.accuracy),
            r.auc.map_or_else(|| "nan".to_string(), fmt_f),
            fmt_f(r.f1),
            fmt_f(r.sensitivity),
            fmt_f(r.specificity),
            fmt_f(r.precision),
            fmt_f(r.recall),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            fmt_f(r.lr_backbone),
            fmt_f(r.lr_quantum_and_head),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn timing_csv(history: &[MetricsReport]) -> String {
    let mut out = String::from(TIMING_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!("{},{:.3}\n", r.epoch, r.epoch_seconds));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::pairwise_auc;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_separation() {
        let r = Rates::from_scores(&[0.9, 0.8, 0.1], &[1, 1, 0], 0.5);
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn ninety_five_percent_counts() {
        let c = Confusion {
            tp: 19,
            fn_: 1,
            tn: 19,
            fp: 1,
        };
        let r = Rates::from_confusion(c, None);
        for v in [r.accuracy, r.sensitivity, r.specificity, r.precision, r.f1, r.recall] {
            assert!((v - 0.95).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn single_class_auc_is_undefined() {
        let r = Rates::from_scores(&[0.2, 0.7], &[0, 0], 0.5);
        assert_eq!(r.auc, None);
        assert_eq!(r.confusion.total(), 2);
        assert_eq!(r.specificity, 0.5);
        assert_eq!(r.sensitivity, 0.0);
    }

    #[test]
    fn auc_matches_pairwise_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..200 {
            let n = rng.gen_range(2..60);
            let levels = if case % 2 == 0 { 4 } else { 1000 };
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc(&scores, &labels).unwrap();
            let b = pairwise_auc(&scores, &labels).unwrap();
            assert!((a - b).abs() <= 1e-12, "case {case}: {a} vs {b}");
        }
    }

    #[test]
    fn history_csv_shape() {
        let r = MetricsReport::new(1, 0.5, 0.4, &Rates::from_scores(&[0.9, 0.1], &[1, 0], 0.5), (1e-3, 1e-3), 2.0);
        let text = history_csv(&[r.clone()]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split(',').count(), HISTORY_HEADER.split(',').count());
        assert!(timing_csv(&[r]).ends_with("1,2.000\n"));
    }

    proptest! {
        #[test]
        fn rates_consistent_with_counts(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let c = Confusion { tp, fp, tn, fn_ };
            let r = Rates::from_confusion(c, None);
            for v in [r.accuracy, r.sensitivity, r.specificity, r.precision, r.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!((r.accuracy - (tp + tn) as f64 / (tp + fp + tn + fn_) as f64).abs() <= 1e-12);
        }

        #[test]
        fn flipped_scores_complement_auc(scores in proptest::collection::vec(0.0f64..1.0, 4..40), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<bool> = scores.iter().map(|_| rng.gen_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc(&scores, &labels).unwrap();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let b = auc(&neg, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn threshold_monotone(probs in proptest::collection::vec(0.0f64..1.0, 1..40), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let labels: Vec<u8> = (0..probs.len()).map(|i| (i % 2) as u8).collect();
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let a = Confusion::from_probabilities(&probs, &labels, lo);
            let b = Confusion::from_probabilities(&probs, &labels, hi);
            prop_assert!(b.tp <= a.tp && b.tn >= a.tn);
        }
    }
}
