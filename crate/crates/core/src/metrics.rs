//! Detection and recognition scoring, run aggregation and paired t-tests.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::BBox;
use crate::detect::iou;
use crate::recognize::{ReadingResult, ReadingStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("duplicate ground truth for image {0}")]
    DuplicateGt(String),
    #[error("duplicate result for image {0}")]
    DuplicateResult(String),
    #[error("no ground truth for image {0}")]
    MissingGroundTruth(String),
    #[error("all paired differences are equal; t is undefined")]
    ZeroVariance,
    #[error("run lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A scored detection for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPrediction {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEval {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub mean_iou: f64,
    pub iou_threshold: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl DetectionEval {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, mean_iou: f64, iou_threshold: f64) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        DetectionEval {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f_measure: f_measure(precision, recall),
            mean_iou,
            iou_threshold,
        }
    }
}

/// Confidence desc, then box coordinates, so the pick is order-independent.
fn best_prediction<'a>(a: &'a BoxPrediction, b: &'a BoxPrediction) -> &'a BoxPrediction {
    let key = |p: &BoxPrediction| (p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h);
    let ord = b
        .confidence
        .total_cmp(&a.confidence)
        .then_with(|| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0)
                .then(ka.1.total_cmp(&kb.1))
                .then(ka.2.total_cmp(&kb.2))
                .then(ka.3.total_cmp(&kb.3))
        });
    if ord.is_le() {
        a
    } else {
        b
    }
}

/// One-counter-per-image matching. For every image the most confident
/// prediction is compared with the ground truth: IoU above the threshold is
/// a true positive, anything else is both a false positive and a false
/// negative. Images without a prediction add a false negative; predictions
/// on images without ground truth add a false positive.
pub fn eval_detection(
    preds: &[BoxPrediction],
    gts: &[(String, BBox)],
    iou_threshold: f64,
) -> Result<DetectionEval, MetricsError> {
    if !(iou_threshold > 0.0 && iou_threshold < 1.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "IoU threshold {iou_threshold} outside (0, 1)"
        )));
    }
    let mut truth: BTreeMap<&str, &BBox> = BTreeMap::new();
    for (id, b) in gts {
        if truth.insert(id.as_str(), b).is_some() {
            return Err(MetricsError::DuplicateGt(id.clone()));
        }
    }
    let mut best: BTreeMap<&str, &BoxPrediction> = BTreeMap::new();
    for p in preds {
        best.entry(p.image_id.as_str())
            .and_modify(|cur| *cur = best_prediction(cur, p))
            .or_insert(p);
    }

    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    let mut ious = Vec::new();
    for (id, gt) in &truth {
        match best.get(id) {
            None => fn_ += 1,
            Some(p) => {
                let v = iou(&p.bbox, gt);
                ious.push(v);
                if v > iou_threshold {
                    tp += 1;
                } else {
                    fp += 1;
                    fn_ += 1;
                }
            }
        }
    }
    fp += best.keys().filter(|id| !truth.contains_key(*id)).count() as u64;
    // BTreeMap order makes the sum order-independent.
    let mean_iou = if ious.is_empty() {
        0.0
    } else {
        ious.iter().sum::<f64>() / ious.len() as f64
    };
    Ok(DetectionEval::from_counts(tp, fp, fn_, mean_iou, iou_threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionOutcome {
    pub image_id: String,
    pub ground_truth: String,
    pub reading: String,
    /// `None` when the image has ground truth but no result.
    pub status: Option<ReadingStatus>,
    pub correct_digits: usize,
    pub total_digits: usize,
    pub counter_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionEval {
    pub digit_accuracy: f64,
    pub counter_accuracy: f64,
    pub correct_digits: u64,
    pub total_digits: u64,
    pub correct_counters: u64,
    pub total_counters: u64,
    pub outcomes: Vec<RecognitionOutcome>,
}

/// Digits of `reading` that match `gt` position by position over the shared
/// prefix; the rest of `gt` counts as wrong.
pub fn positional_matches(reading: &str, gt: &str) -> usize {
    reading
        .chars()
        .zip(gt.chars())
        .filter(|(a, b)| a == b)
        .count()
}

fn score(image_id: &str, gt: &str, result: Option<&ReadingResult>) -> RecognitionOutcome {
    let total = gt.chars().count();
    let (reading, status, correct) = match result {
        Some(r) if r.status == ReadingStatus::Accepted => (
            r.reading.clone(),
            Some(r.status),
            positional_matches(&r.reading, gt),
        ),
        Some(r) => (r.reading.clone(), Some(r.status), 0),
        None => (String::new(), None, 0),
    };
    let counter_correct = status == Some(ReadingStatus::Accepted) && reading == gt;
    RecognitionOutcome {
        image_id: image_id.to_string(),
        ground_truth: gt.to_string(),
        reading,
        status,
        correct_digits: correct,
        total_digits: total,
        counter_correct,
    }
}

/// Digit accuracy is correct digits over ground-truth digits; counter
/// accuracy is exact accepted readings over the number of ground-truth
/// images. Images with ground truth but no result score as fully wrong.
pub fn eval_recognition(
    results: &[(String, ReadingResult)],
    gts: &[(String, String)],
) -> Result<RecognitionEval, MetricsError> {
    let mut truth: BTreeMap<&str, &str> = BTreeMap::new();
    for (id, r) in gts {
        if truth.insert(id.as_str(), r.as_str()).is_some() {
            return Err(MetricsError::DuplicateGt(id.clone()));
        }
    }
    let mut by_id: BTreeMap<&str, &ReadingResult> = BTreeMap::new();
    for (id, r) in results {
        if !truth.contains_key(id.as_str()) {
            return Err(MetricsError::MissingGroundTruth(id.clone()));
        }
        if by_id.insert(id.as_str(), r).is_some() {
            return Err(MetricsError::DuplicateResult(id.clone()));
        }
    }
    let outcomes: Vec<RecognitionOutcome> = truth
        .iter()
        .map(|(id, gt)| score(id, gt, by_id.get(id).copied()))
        .collect();
    let correct_digits: u64 = outcomes.iter().map(|o| o.correct_digits as u64).sum();
    let total_digits: u64 = outcomes.iter().map(|o| o.total_digits as u64).sum();
    let correct_counters = outcomes.iter().filter(|o| o.counter_correct).count() as u64;
    let total_counters = outcomes.len() as u64;
    Ok(RecognitionEval {
        digit_accuracy: ratio(correct_digits, total_digits),
        counter_accuracy: ratio(correct_counters, total_counters),
        correct_digits,
        total_digits,
        correct_counters,
        total_counters,
        outcomes,
    })
}

/// Paired t statistic on `d = second - first`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub t: f64,
    pub dof: u32,
    pub mean_difference: f64,
    /// Two-tailed.
    pub p_value: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_stddev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}

fn students_t(dof: u32) -> StudentsT {
    StudentsT::new(0.0, 1.0, dof as f64).expect("positive degrees of freedom")
}

pub fn paired_t_test(first: &[f64], second: &[f64]) -> Result<PairedT, MetricsError> {
    if first.len() != second.len() {
        return Err(MetricsError::LengthMismatch(first.len(), second.len()));
    }
    let n = first.len();
    if n < 2 {
        return Err(MetricsError::TooFewRuns { needed: 2, got: n });
    }
    let d: Vec<f64> = first.iter().zip(second).map(|(a, b)| b - a).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::InvalidArgument("non-finite run value".into()));
    }
    if d.iter().all(|&v| v == d[0]) {
        return Err(MetricsError::ZeroVariance);
    }
    let md = mean(&d);
    let sd = sample_stddev(&d);
    let t = md / (sd / (n as f64).sqrt());
    let dof = (n - 1) as u32;
    let p_value = 2.0 * (1.0 - students_t(dof).cdf(t.abs()));
    Ok(PairedT {
        t,
        dof,
        mean_difference: md,
        p_value,
    })
}

/// Two-tailed critical value of Student's t at significance `alpha`.
pub fn t_critical(alpha: f64, dof: u32) -> f64 {
    students_t(dof).inverse_cdf(1.0 - alpha / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub digit_accuracy: f64,
    pub counter_accuracy: f64,
}

impl From<&RecognitionEval> for RunMetrics {
    fn from(e: &RecognitionEval) -> Self {
        RunMetrics {
            digit_accuracy: e.digit_accuracy,
            counter_accuracy: e.counter_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TTestOutcome {
    Tested {
        t: f64,
        dof: u32,
        p_value: f64,
        critical: f64,
        significant: bool,
    },
    /// Constant differences: no t statistic, never significant.
    Degenerate { dof: u32, mean_difference: f64 },
}

impl TTestOutcome {
    pub fn significant(&self) -> bool {
        matches!(self, TTestOutcome::Tested { significant: true, .. })
    }
}

/// Both metrics tested against a baseline (`d = runs - baseline`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub alpha: f64,
    pub digit_accuracy: TTestOutcome,
    pub counter_accuracy: TTestOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<RunMetrics>,
    pub mean: RunMetrics,
    /// Absent for a single run.
    pub stddev: Option<RunMetrics>,
    pub t_test: Option<RunComparison>,
}

fn compare(baseline: &[f64], runs: &[f64], alpha: f64) -> Result<TTestOutcome, MetricsError> {
    let dof = (runs.len() - 1) as u32;
    match paired_t_test(baseline, runs) {
        Ok(p) => {
            let critical = t_critical(alpha, p.dof);
            Ok(TTestOutcome::Tested {
                t: p.t,
                dof: p.dof,
                p_value: p.p_value,
                critical,
                significant: p.t.abs() > critical,
            })
        }
        Err(MetricsError::ZeroVariance) => Ok(TTestOutcome::Degenerate {
            dof,
            mean_difference: runs[0] - baseline[0],
        }),
        Err(e) => Err(e),
    }
}

pub fn summarize_runs(
    runs: &[RunMetrics],
    alpha: f64,
    baseline: Option<&[RunMetrics]>,
) -> Result<RunSummary, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::TooFewRuns { needed: 1, got: 0 });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricsError::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let digit: Vec<f64> = runs.iter().map(|r| r.digit_accuracy).collect();
    let counter: Vec<f64> = runs.iter().map(|r| r.counter_accuracy).collect();
    let stddev = (runs.len() >= 2).then(|| RunMetrics {
        digit_accuracy: sample_stddev(&digit),
        counter_accuracy: sample_stddev(&counter),
    });
    let t_test = match baseline {
        None => None,
        Some(base) => {
            if base.len() != runs.len() {
                return Err(MetricsError::LengthMismatch(base.len(), runs.len()));
            }
            if runs.len() < 2 {
                return Err(MetricsError::TooFewRuns { needed: 2, got: runs.len() });
            }
            let bd: Vec<f64> = base.iter().map(|r| r.digit_accuracy).collect();
            let bc: Vec<f64> = base.iter().map(|r| r.counter_accuracy).collect();
            Some(RunComparison {
                alpha,
                digit_accuracy: compare(&bd, &digit, alpha)?,
                counter_accuracy: compare(&bc, &counter, alpha)?,
            })
        }
    };
    Ok(RunSummary {
        runs: runs.to_vec(),
        mean: RunMetrics {
            digit_accuracy: mean(&digit),
            counter_accuracy: mean(&counter),
        },
        stddev,
        t_test,
    })
}

/// `"94.13 ± 0.18"` style rendering of a fraction-valued metric as percent.
pub fn format_mean_std(mean: f64, stddev: Option<f64>) -> String {
    match stddev {
        Some(s) => format!("{:.2} ± {:.2}", mean * 100.0, s * 100.0),
        None => format!("{:.2}", mean * 100.0),
    }
}
