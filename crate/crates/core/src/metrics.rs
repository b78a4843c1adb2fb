//! Pixel confusion counts and the precision / recall / dice report.
//!
//! All metrics are micro-aggregated: pixel counts are pooled across every
//! evaluated image first, then the ratios are computed once. Only pixels
//! inside radar coverage (the valid mask) participate.

use crate::radar::SegMask;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask dimensions disagree: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("relative improvement needs a positive base, got {0}")]
    ZeroBase(f64),
}

/// Pixel confusion counts over valid pixels.
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

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Degenerate-count conditions surfaced alongside the metrics so that a
/// trivially perfect score is never silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricFlag {
    /// No positives in either prediction or truth; all three metrics are 1.
    Empty,
    /// No predicted positives while truth has some; precision reported as 0.
    NoPredictions,
    /// No truth positives while predictions have some; recall reported as 1.
    NoTruthPositives,
}

impl MetricFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricFlag::Empty => "empty",
            MetricFlag::NoPredictions => "no-predictions",
            MetricFlag::NoTruthPositives => "no-truth-positives",
        }
    }
}

/// Metrics over one pooled set of counts, as unit values.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
    pub flags: Vec<MetricFlag>,
}

impl EvalReport {
    /// `model,precision_pct,recall_pct,dice_pct,flags` CSV row.
    pub fn csv_row(&self, model: &str) -> String {
        let flags = self
            .flags
            .iter()
            .map(MetricFlag::as_str)
            .collect::<Vec<_>>()
            .join("+");
        format!(
            "{},{:.4},{:.4},{:.4},{}",
            model,
            self.precision * 100.0,
            self.recall * 100.0,
            self.dice * 100.0,
            flags
        )
    }
}

/// Header matching [`EvalReport::csv_row`].
pub const REPORT_CSV_HEADER: &str = "model,precision_pct,recall_pct,dice_pct,flags";

/// Confusion counts of `pred` against `truth` over `valid` pixels only.
pub fn confusion(
    pred: &SegMask,
    truth: &SegMask,
    valid: &[bool],
) -> Result<ConfusionCounts, MetricsError> {
    if pred.size() != truth.size() {
        return Err(MetricsError::ShapeMismatch(pred.size(), truth.size()));
    }
    let n = pred.size() * pred.size();
    if valid.len() != n {
        return Err(MetricsError::ShapeMismatch(valid.len(), n));
    }
    let mut counts = ConfusionCounts::default();
    for i in 0..n {
        if !valid[i] {
            continue;
        }
        match (pred.bits()[i], truth.bits()[i]) {
            (1, 1) => counts.tp += 1,
            (1, 0) => counts.fp += 1,
            (0, 1) => counts.fn_ += 1,
            (0, 0) => counts.tn += 1,
            _ => unreachable!("masks are binary by construction"),
        }
    }
    Ok(counts)
}

/// Precision, recall and dice from pooled counts.
///
/// `P = TP/(TP+FP)`, `R = TP/(TP+FN)`, `DC = 2TP/(2TP+FP+FN)`. Degenerate
/// denominators follow the flagged conventions documented on [`MetricFlag`].
pub fn metrics_from_counts(counts: &ConfusionCounts) -> EvalReport {
    let tp = counts.tp as f64;
    let fp = counts.fp as f64;
    let fn_ = counts.fn_ as f64;
    let mut flags = Vec::new();
    if counts.tp == 0 && counts.fp == 0 && counts.fn_ == 0 {
        flags.push(MetricFlag::Empty);
        return EvalReport {
            counts: *counts,
            precision: 1.0,
            recall: 1.0,
            dice: 1.0,
            flags,
        };
    }
    let precision = if counts.tp + counts.fp == 0 {
        flags.push(MetricFlag::NoPredictions);
        0.0
    } else {
        tp / (tp + fp)
    };
    let recall = if counts.tp + counts.fn_ == 0 {
        flags.push(MetricFlag::NoTruthPositives);
        1.0
    } else {
        tp / (tp + fn_)
    };
    let dice = 2.0 * tp / (2.0 * tp + fp + fn_);
    EvalReport {
        counts: *counts,
        precision,
        recall,
        dice,
        flags,
    }
}

/// Relative improvement of `new` over `base`, both in percent:
/// `100 * (new - base) / base`.
pub fn relative_improvement(new: f64, base: f64) -> Result<f64, MetricsError> {
    if !(base > 0.0) {
        return Err(MetricsError::ZeroBase(base));
    }
    Ok(100.0 * (new - base) / base)
}

/// Micro-aggregated report over a set of (pred, truth, valid) triples.
pub fn evaluate(masks: &[(&SegMask, &SegMask, &[bool])]) -> Result<EvalReport, MetricsError> {
    if masks.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mut pooled = ConfusionCounts::default();
    for (pred, truth, valid) in masks {
        pooled.add(&confusion(pred, truth, valid)?);
    }
    Ok(metrics_from_counts(&pooled))
}
