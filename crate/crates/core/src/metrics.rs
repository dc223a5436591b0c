//! Binary classification metrics with label 1 (theft) as the positive class.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::Dataset;
use crate::format_real;
use crate::nn::{forward, MlpParams, NnError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no samples to evaluate")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label {label} at position {index} is not 0 or 1")]
    BadLabel { index: usize, label: u8 },
    #[error("only one class present in the true labels; ROC/AUC undefined")]
    SingleClass,
    #[error("non-finite score at position {0}")]
    NonFiniteScore(usize),
    #[error("model expects {expected} features, data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("model: {0}")]
    Nn(#[from] NnError),
    #[error("predictions file line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// No positive predictions, so precision has a zero denominator.
    pub fn precision_degenerate(&self) -> bool {
        self.tp + self.fp == 0
    }

    /// No positive truths, so recall has a zero denominator.
    pub fn recall_degenerate(&self) -> bool {
        self.tp + self.fn_ == 0
    }
}

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(MetricsError::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn check_binary(labels: &[u8]) -> Result<()> {
    match labels.iter().position(|&y| y > 1) {
        Some(index) => Err(MetricsError::BadLabel { index, label: labels[index] }),
        None => Ok(()),
    }
}

pub fn confusion(pred: &[u8], truth: &[u8]) -> Result<ConfusionCounts> {
    check_pair(pred.len(), truth.len())?;
    check_binary(pred)?;
    check_binary(truth)?;
    let mut c = ConfusionCounts::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn nonempty(c: &ConfusionCounts) -> Result<u64> {
    match c.total() {
        0 => Err(MetricsError::Empty),
        n => Ok(n),
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    let n = nonempty(c)?;
    Ok((c.tp + c.tn) as f64 / n as f64)
}

/// `tp / (tp + fp)`, or 0 when nothing was predicted positive.
pub fn precision(c: &ConfusionCounts) -> Result<f64> {
    nonempty(c)?;
    Ok(if c.precision_degenerate() { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 })
}

/// `tp / (tp + fn)`, or 0 when there are no positive truths.
pub fn recall(c: &ConfusionCounts) -> Result<f64> {
    nonempty(c)?;
    Ok(if c.recall_degenerate() { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 })
}

fn f1(c: &ConfusionCounts) -> f64 {
    let p = if c.precision_degenerate() { 0.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 };
    let r = if c.recall_degenerate() { 0.0 } else { c.tp as f64 / (c.tp + c.fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// One-vs-rest F1 of each class, indexed by class.
pub fn per_class_f1(pred: &[u8], truth: &[u8]) -> Result<[f64; 2]> {
    let c1 = confusion(pred, truth)?;
    let c0 = ConfusionCounts { tp: c1.tn, tn: c1.tp, fp: c1.fn_, fn_: c1.fp };
    Ok([f1(&c0), f1(&c1)])
}

/// Mean of the per-class F1 scores weighted by class support.
pub fn f1_weighted(pred: &[u8], truth: &[u8]) -> Result<f64> {
    let f = per_class_f1(pred, truth)?;
    let ones = truth.iter().filter(|&&y| y == 1).count() as f64;
    let zeros = truth.len() as f64 - ones;
    Ok((zeros * f[0] + ones * f[1]) / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; `+inf` for the origin.
    pub threshold: f64,
}

/// Threshold sweep over every distinct score in descending order. Tied
/// scores produce a single point. The curve starts at `(0, 0)` and its last
/// point is `(1, 1)`.
pub fn roc_curve(scores: &[f64], truth: &[u8]) -> Result<Vec<RocPoint>> {
    check_pair(scores.len(), truth.len())?;
    check_binary(truth)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(i));
    }
    let positives = truth.iter().filter(|&&y| y == 1).count();
    let negatives = truth.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if truth[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / negatives as f64, tpr: tp as f64 / positives as f64, threshold });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn auc_from_roc(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

pub fn auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    Ok(auc_from_roc(&roc_curve(scores, truth)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1_weighted: f64,
    pub auc: f64,
    pub precision_degenerate: bool,
    pub recall_degenerate: bool,
    pub confusion: ConfusionCounts,
    #[serde(skip)]
    pub roc_points: Vec<RocPoint>,
}

/// All metrics from hard predictions and class-1 scores.
pub fn compute_metrics(pred: &[u8], scores: &[f64], truth: &[u8]) -> Result<Metrics> {
    check_pair(pred.len(), scores.len())?;
    let c = confusion(pred, truth)?;
    let roc_points = roc_curve(scores, truth)?;
    Ok(Metrics {
        accuracy: accuracy(&c)?,
        precision: precision(&c)?,
        recall: recall(&c)?,
        f1_weighted: f1_weighted(pred, truth)?,
        auc: auc_from_roc(&roc_points),
        precision_degenerate: c.precision_degenerate(),
        recall_degenerate: c.recall_degenerate(),
        confusion: c,
        roc_points,
    })
}

/// Per-row model output on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub truth: Vec<u8>,
    /// Probability of class 1.
    pub scores: Vec<f64>,
    /// Argmax label; exact ties go to class 0.
    pub labels: Vec<u8>,
    /// Mean cross-entropy.
    pub loss: f64,
}

const EVAL_CHUNK: usize = 1024;

pub fn predict(params: &MlpParams, data: &Dataset) -> Result<Predictions> {
    if params.input_dim() != data.n_features() {
        return Err(MetricsError::DimensionMismatch { expected: params.input_dim(), found: data.n_features() });
    }
    let n = data.n_rows();
    if n == 0 {
        return Err(MetricsError::Empty);
    }
    let d = data.n_features();
    let mut scores = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut loss_sum = 0.0;
    for (rows, truth) in data.features().chunks(EVAL_CHUNK * d).zip(data.labels().chunks(EVAL_CHUNK)) {
        let out = forward(params, rows)?;
        loss_sum += out.loss(truth)? * truth.len() as f64;
        for p in out.probs().chunks_exact(2) {
            scores.push(p[1]);
            labels.push(u8::from(p[1] > p[0]));
        }
    }
    Ok(Predictions { truth: data.labels().to_vec(), scores, labels, loss: loss_sum / n as f64 })
}

/// Metrics and mean test loss of `params` on `test`.
pub fn evaluate(params: &MlpParams, test: &Dataset) -> Result<(Metrics, f64)> {
    let p = predict(params, test)?;
    Ok((compute_metrics(&p.labels, &p.scores, &p.truth)?, p.loss))
}

/// `fpr,tpr,threshold`.
pub fn write_roc_csv<W: Write>(points: &[RocPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "fpr,tpr,threshold")?;
    for p in points {
        writeln!(w, "{},{},{}", format_real(p.fpr), format_real(p.tpr), format_real(p.threshold))?;
    }
    Ok(())
}

/// `row_id,true_label,score_1,pred_label`.
pub fn write_predictions_csv<W: Write>(p: &Predictions, mut w: W) -> std::io::Result<()> {
    writeln!(w, "row_id,true_label,score_1,pred_label")?;
    for (i, ((t, s), l)) in p.truth.iter().zip(&p.scores).zip(&p.labels).enumerate() {
        writeln!(w, "{i},{t},{},{l}", format_real(*s))?;
    }
    Ok(())
}

/// Reads a predictions export back. The loss is not stored in the file and
/// comes back as NaN.
pub fn read_predictions_csv<R: BufRead>(r: R) -> Result<Predictions> {
    let mut out = Predictions { truth: Vec::new(), scores: Vec::new(), labels: Vec::new(), loss: f64::NAN };
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != "row_id,true_label,score_1,pred_label" {
                return Err(MetricsError::Parse { line: lineno, message: format!("unexpected header {line:?}") });
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |message: String| MetricsError::Parse { line: lineno, message };
        if fields.len() != 4 {
            return Err(bad(format!("expected 4 fields, found {}", fields.len())));
        }
        let truth = fields[1].parse::<u8>().map_err(|e| bad(e.to_string()))?;
        let score = fields[2].parse::<f64>().map_err(|e| bad(e.to_string()))?;
        let label = fields[3].parse::<u8>().map_err(|e| bad(e.to_string()))?;
        out.truth.push(truth);
        out.scores.push(score);
        out.labels.push(label);
    }
    Ok(out)
}
