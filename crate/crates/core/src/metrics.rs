//! Classification and ranking metrics.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::arg_err;
use crate::{Error, Result};

/// One-vs-rest confusion counts of a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// F1 of this class, 0 when precision + recall = 0.
    pub fn f1(&self) -> f64 {
        f1_from(self.tp, self.fp, self.fn_)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_from(tp: u64, fp: u64, fn_: u64) -> f64 {
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn check(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<()> {
    if y_true.is_empty() {
        return Err(arg_err!("metric of an empty prediction set"));
    }
    if y_true.len() != y_pred.len() {
        return Err(arg_err!("{} truths vs {} predictions", y_true.len(), y_pred.len()));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&c| c >= classes) {
        return Err(arg_err!("class index {bad} with {classes} classes"));
    }
    Ok(())
}

/// Per-class one-vs-rest confusion counts.
pub fn confusion(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Vec<ConfusionCounts>> {
    check(y_true, y_pred, classes)?;
    let mut out = vec![ConfusionCounts::default(); classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for (c, cc) in out.iter_mut().enumerate() {
            match (p == c, t == c) {
                (true, true) => cc.tp += 1,
                (true, false) => cc.fp += 1,
                (false, true) => cc.fn_ += 1,
                (false, false) => cc.tn += 1,
            }
        }
    }
    Ok(out)
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    let cm = confusion(y_true, y_pred, classes)?;
    Ok(cm.iter().map(ConfusionCounts::f1).sum::<f64>() / classes as f64)
}

/// F1 of pooled TP/FP/FN over all classes.
pub fn micro_f1(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    let cm = confusion(y_true, y_pred, classes)?;
    let (tp, fp, fn_) = cm.iter().fold((0, 0, 0), |(a, b, c), x| (a + x.tp, b + x.fp, c + x.fn_));
    Ok(f1_from(tp, fp, fn_))
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(arg_err!("accuracy needs equal non-empty inputs"));
    }
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half. Uses mid-ranks, O(n log n).
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(arg_err!("{} scores vs {} labels", scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs at least one positive and one negative".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(arg_err!("AUC of NaN scores"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Sum of (1-based) mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut k = 0;
    while k < order.len() {
        let mut end = k + 1;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let mid = (k + 1 + end) as f64 / 2.0;
        rank_sum += mid * order[k..end].iter().filter(|&&i| labels[i]).count() as f64;
        k = end;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Row-wise argmax; first maximum wins.
pub fn argmax_rows(m: &crate::Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            m.row(r)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
