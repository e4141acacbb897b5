//! Per-image segmentation metrics, quadratic weighted kappa, throughput
//! timing and side-by-side visualizations.

mod eval;

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use eval::{
    compose_triptych, evaluate_dataset, fps_from, measure_fps, render_triptych, EvalOptions, EvalOutcome,
    FpsReport, GUTTER, GUTTER_GRAY,
};

/// Number of diabetic retinopathy grades (0 to 4).
pub const GRADE_LEVELS: usize = 5;

/// 1 where `p >= threshold`, else 0.
pub fn binarize<T: Scalar>(probs: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("binarize", format!("threshold {threshold} outside [0, 1]")));
    }
    let t = T::of(threshold);
    Ok(probs.map(|p| if p >= t { T::one() } else { T::zero() }))
}

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

    pub fn merge(&self, o: &Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// 0/0 counts as perfect agreement.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub id: String,
    pub jaccard: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub counts: ConfusionCounts,
}

impl MetricsRecord {
    pub fn from_counts(id: impl Into<String>, c: ConfusionCounts) -> Self {
        MetricsRecord {
            id: id.into(),
            jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
            f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
            recall: ratio(c.tp, c.tp + c.fn_),
            precision: ratio(c.tp, c.tp + c.fp),
            accuracy: ratio(c.tp + c.tn, c.total()),
            counts: c,
        }
    }

    pub fn ratios(&self) -> [f64; 5] {
        [self.jaccard, self.f1, self.recall, self.precision, self.accuracy]
    }
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: jaccard={:.4} f1={:.4} recall={:.4} precision={:.4} accuracy={:.4}",
            self.id, self.jaccard, self.f1, self.recall, self.precision, self.accuracy
        )
    }
}

fn check_binary<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    match t.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        Some(v) => Err(Error::invalid(op, format!("expected a binary mask, found {v}"))),
        None => Ok(()),
    }
}

pub fn confusion_counts<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::dim(
            "segmentation_metrics",
            format!("prediction {} vs ground truth {}", pred.shape(), gt.shape()),
        ));
    }
    check_binary("segmentation_metrics", pred)?;
    check_binary("segmentation_metrics", gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p == T::one(), g == T::one()) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn segmentation_metrics<T: Scalar>(id: impl Into<String>, pred: &Tensor<T>, gt: &Tensor<T>) -> Result<MetricsRecord> {
    Ok(MetricsRecord::from_counts(id, confusion_counts(pred, gt)?))
}

/// Arithmetic mean of each ratio over `records`; counts are summed.
pub fn mean_record(records: &[MetricsRecord]) -> Option<MetricsRecord> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let mut sums = [0.0; 5];
    let mut counts = ConfusionCounts::default();
    for r in records {
        for (s, v) in sums.iter_mut().zip(r.ratios()) {
            *s += v;
        }
        counts = counts.merge(&r.counts);
    }
    let [jaccard, f1, recall, precision, accuracy] = sums.map(|s| s / n);
    Some(MetricsRecord {
        id: "MEAN".into(),
        jaccard,
        f1,
        recall,
        precision,
        accuracy,
        counts,
    })
}

/// Hard Dice of `pred` against `gt` over all elements (equal to F1).
pub fn dice_coefficient<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    Ok(MetricsRecord::from_counts("", confusion_counts(pred, gt)?).f1)
}

/// Cohen's kappa with quadratic weights over grades `0..GRADE_LEVELS`.
/// Returns 1.0 when the expected weighted disagreement is zero.
pub fn quadratic_weighted_kappa(pred: &[usize], truth: &[usize]) -> Result<f64> {
    const OP: &str = "quadratic_weighted_kappa";
    if pred.len() != truth.len() {
        return Err(Error::invalid(OP, format!("{} predictions vs {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::invalid(OP, "no samples"));
    }
    if let Some(g) = pred.iter().chain(truth).find(|&&g| g >= GRADE_LEVELS) {
        return Err(Error::invalid(OP, format!("grade {g} outside 0..={}", GRADE_LEVELS - 1)));
    }
    let k = GRADE_LEVELS;
    let mut observed = [[0.0f64; GRADE_LEVELS]; GRADE_LEVELS];
    let mut hist_t = [0.0f64; GRADE_LEVELS];
    let mut hist_p = [0.0f64; GRADE_LEVELS];
    for (&p, &t) in pred.iter().zip(truth) {
        observed[t][p] += 1.0;
        hist_t[t] += 1.0;
        hist_p[p] += 1.0;
    }
    let n = pred.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) / (k as f64 - 1.0)).powi(2);
            num += w * observed[i][j];
            den += w * hist_t[i] * hist_p[j] / n;
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}
