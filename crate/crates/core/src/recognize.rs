//! Counter recognition: the three decoders and the two-stage pipeline.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::dataset::{BBox, DIGITS_PER_COUNTER};
use crate::detect::{self, DecodedBox, DetectError, GridSpec};
use crate::imaging;
use crate::tensorio::{InferenceProvider, InferenceRequest, ModelRole, PredictionTensor, ProviderError};

/// Ten digits plus the blank.
pub const CTC_LABELS: usize = 11;
pub const CTC_BLANK: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecognizeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("frame {frame} is not a probability distribution: {message}")]
    NonDistribution { frame: usize, message: String },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("invalid image: {0}")]
    InvalidImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadingStatus {
    Accepted,
    /// Fewer than five digits survived in fixed-length mode.
    RejectedTooFew,
    /// The detector found no counter.
    NegativeNoCounter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingResult {
    pub reading: String,
    pub digit_confidences: Vec<f64>,
    pub status: ReadingStatus,
}

impl ReadingResult {
    pub fn accepted(reading: String, digit_confidences: Vec<f64>) -> Self {
        ReadingResult {
            reading,
            digit_confidences,
            status: ReadingStatus::Accepted,
        }
    }

    pub fn empty(status: ReadingStatus) -> Self {
        ReadingResult {
            reading: String::new(),
            digit_confidences: Vec::new(),
            status,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrnetMode {
    /// Exactly five digits; fewer is a rejection.
    Fixed5,
    /// Every digit above the threshold.
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognizerKind {
    Crnet,
    Multitask,
    Crnn,
}

impl RecognizerKind {
    pub fn role(self) -> ModelRole {
        match self {
            RecognizerKind::Crnet => ModelRole::RecognizerCrnet,
            RecognizerKind::Multitask => ModelRole::RecognizerMultitask,
            RecognizerKind::Crnn => ModelRole::RecognizerCrnn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrnetOptions {
    pub mode: CrnetMode,
    pub threshold: f64,
    pub nms_iou: f64,
}

impl Default for CrnetOptions {
    fn default() -> Self {
        CrnetOptions {
            mode: CrnetMode::Fixed5,
            threshold: 0.25,
            nms_iou: 0.5,
        }
    }
}

/// Left-to-right reading order: x-center, then y-center, then class id.
fn reading_order(a: &DecodedBox, b: &DecodedBox) -> std::cmp::Ordering {
    a.bbox
        .center_x()
        .total_cmp(&b.bbox.center_x())
        .then(a.bbox.center_y().total_cmp(&b.bbox.center_y()))
        .then(a.class_id.cmp(&b.class_id))
}

/// Concatenates digit boxes into a reading, left to right.
pub fn assemble_reading(boxes: &[DecodedBox]) -> ReadingResult {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(reading_order);
    ReadingResult::accepted(
        sorted
            .iter()
            .map(|b| char::from_digit(b.class_id as u32, 10).unwrap_or('?'))
            .collect(),
        sorted.iter().map(|b| b.confidence).collect(),
    )
}

/// CR-NET: grid decode, per-class NMS, then either the five most confident
/// digits (rejecting when fewer survive) or every digit over the threshold.
pub fn decode_crnet(
    t: &PredictionTensor,
    spec: &GridSpec,
    options: &CrnetOptions,
) -> Result<ReadingResult, RecognizeError> {
    if spec.num_classes != 10 {
        return Err(RecognizeError::ShapeMismatch(format!(
            "CR-NET head must have 10 classes, spec has {}",
            spec.num_classes
        )));
    }
    let candidates = detect::decode_grid(t, spec, options.threshold)?;
    let mut kept = detect::nms(&candidates, options.nms_iou);
    match options.mode {
        CrnetMode::Fixed5 => {
            if kept.len() < DIGITS_PER_COUNTER {
                return Ok(ReadingResult::empty(ReadingStatus::RejectedTooFew));
            }
            kept.truncate(DIGITS_PER_COUNTER);
        }
        CrnetMode::Variable => kept.truncate(spec.grid_w),
    }
    Ok(assemble_reading(&kept))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// First index of the maximum.
fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Multi-task head: one 10-way classifier per digit position.
pub fn decode_multitask<H: AsRef<[f64]>>(heads: &[H]) -> Result<ReadingResult, RecognizeError> {
    if heads.len() != DIGITS_PER_COUNTER {
        return Err(RecognizeError::ShapeMismatch(format!(
            "expected {DIGITS_PER_COUNTER} heads, got {}",
            heads.len()
        )));
    }
    let mut reading = String::with_capacity(DIGITS_PER_COUNTER);
    let mut confidences = Vec::with_capacity(DIGITS_PER_COUNTER);
    for (i, h) in heads.iter().enumerate() {
        let h = h.as_ref();
        if h.len() != 10 {
            return Err(RecognizeError::ShapeMismatch(format!(
                "head {i} has {} outputs, expected 10",
                h.len()
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(RecognizeError::ShapeMismatch(format!("head {i} has non-finite values")));
        }
        let p = softmax(h);
        let best = argmax(&p);
        reading.push(char::from_digit(best as u32, 10).expect("digit"));
        confidences.push(p[best]);
    }
    Ok(ReadingResult::accepted(reading, confidences))
}

/// [`decode_multitask`] on a `[5, 10]` logit tensor.
pub fn decode_multitask_tensor(t: &PredictionTensor) -> Result<ReadingResult, RecognizeError> {
    if t.dims() != [DIGITS_PER_COUNTER, 10] {
        return Err(RecognizeError::ShapeMismatch(format!(
            "multi-task output must be [5, 10], got {:?}",
            t.dims()
        )));
    }
    let heads: Vec<Vec<f64>> = t
        .data()
        .chunks_exact(10)
        .map(|c| c.iter().map(|&v| v as f64).collect())
        .collect();
    decode_multitask(&heads)
}

/// `T x 11` per-frame label distributions; label 10 is the blank.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcFrameMatrix {
    rows: Vec<[f64; CTC_LABELS]>,
}

impl CtcFrameMatrix {
    /// Takes rows that already are distributions (each sums to 1 within 1e-6).
    pub fn from_probabilities<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, RecognizeError> {
        if rows.is_empty() {
            return Err(RecognizeError::ShapeMismatch("no frames".into()));
        }
        let mut out = Vec::with_capacity(rows.len());
        for (frame, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            let row: [f64; CTC_LABELS] = r.try_into().map_err(|_| {
                RecognizeError::ShapeMismatch(format!(
                    "frame {frame} has {} labels, expected {CTC_LABELS}",
                    r.len()
                ))
            })?;
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(RecognizeError::NonDistribution {
                    frame,
                    message: "value outside [0, 1]".into(),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(RecognizeError::NonDistribution {
                    frame,
                    message: format!("sums to {sum}"),
                });
            }
            out.push(row);
        }
        Ok(CtcFrameMatrix { rows: out })
    }

    /// Softmax-normalizes raw per-frame scores.
    pub fn from_logits<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, RecognizeError> {
        let mut probs = Vec::with_capacity(rows.len());
        for (frame, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != CTC_LABELS {
                return Err(RecognizeError::ShapeMismatch(format!(
                    "frame {frame} has {} labels, expected {CTC_LABELS}",
                    r.len()
                )));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(RecognizeError::NonDistribution {
                    frame,
                    message: "non-finite score".into(),
                });
            }
            probs.push(softmax(r));
        }
        Self::from_probabilities(&probs)
    }

    /// `[T, 11]` logit tensor.
    pub fn from_tensor(t: &PredictionTensor) -> Result<Self, RecognizeError> {
        match t.dims() {
            [_, CTC_LABELS] => {}
            d => {
                return Err(RecognizeError::ShapeMismatch(format!(
                    "CTC output must be [T, {CTC_LABELS}], got {d:?}"
                )))
            }
        }
        let rows: Vec<Vec<f64>> = t
            .data()
            .chunks_exact(CTC_LABELS)
            .map(|c| c.iter().map(|&v| v as f64).collect())
            .collect();
        Self::from_logits(&rows)
    }

    pub fn frames(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[f64; CTC_LABELS]] {
        &self.rows
    }
}

/// Best-path decode: per-frame argmax, merge repeats, drop blanks. A digit's
/// confidence is the highest frame probability within its run.
pub fn decode_ctc_greedy(m: &CtcFrameMatrix) -> ReadingResult {
    let mut reading = String::new();
    let mut confidences: Vec<f64> = Vec::new();
    let mut prev: Option<usize> = None;
    for row in &m.rows {
        let label = argmax(row);
        let p = row[label];
        if prev == Some(label) {
            if label != CTC_BLANK {
                let last = confidences.last_mut().expect("open run");
                *last = last.max(p);
            }
        } else if label != CTC_BLANK {
            reading.push(char::from_digit(label as u32, 10).expect("digit"));
            confidences.push(p);
        }
        prev = Some(label);
    }
    ReadingResult::accepted(reading, confidences)
}

/// Everything the pipeline learned about one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    /// Detected counter in image pixels.
    pub counter_box: Option<BBox>,
    pub detection_confidence: Option<f64>,
    /// Region handed to the recognizer.
    pub margin_box: Option<BBox>,
    pub result: ReadingResult,
    /// Counter candidates after NMS, in image pixels, best first.
    pub candidates: Vec<DecodedBox>,
}

/// One JSON line of a pipeline trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub image_id: String,
    pub counter_box: Option<BBox>,
    #[serde(default)]
    pub detection_confidence: Option<f64>,
    pub margin_box: Option<BBox>,
    pub reading: String,
    /// `None` when the image failed with `error`.
    pub status: Option<ReadingStatus>,
    pub confidences: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TraceRecord {
    pub fn from_outcome(image_id: &str, o: &PipelineOutcome) -> Self {
        TraceRecord {
            image_id: image_id.to_string(),
            counter_box: o.counter_box,
            detection_confidence: o.detection_confidence,
            margin_box: o.margin_box,
            reading: o.result.reading.clone(),
            status: Some(o.result.status),
            confidences: o.result.digit_confidences.clone(),
            error: None,
        }
    }

    pub fn failed(image_id: &str, error: impl std::fmt::Display) -> Self {
        TraceRecord {
            image_id: image_id.to_string(),
            counter_box: None,
            detection_confidence: None,
            margin_box: None,
            reading: String::new(),
            status: None,
            confidences: Vec::new(),
            error: Some(error.to_string()),
        }
    }

    /// The reading as a recognition result; failures count as rejections.
    pub fn reading_result(&self) -> ReadingResult {
        ReadingResult {
            reading: self.reading.clone(),
            digit_confidences: self.confidences.clone(),
            status: self.status.unwrap_or(ReadingStatus::RejectedTooFew),
        }
    }
}

/// Detect the counter, grow it by the margin, then read it.
pub fn run_pipeline(
    image_id: &str,
    image: &RgbImage,
    provider: &dyn InferenceProvider,
    recognizer: RecognizerKind,
    config: &PipelineConfig,
) -> Result<PipelineOutcome, RecognizeError> {
    let (w, h) = image.dimensions();
    if w == 0 || h == 0 {
        return Err(RecognizeError::InvalidImage(format!("{image_id} is empty")));
    }
    let full = BBox::new(0.0, 0.0, w as f64, h as f64).expect("non-empty image");
    let det = &config.detector;
    let det_input = imaging::resize_region(image, &full, det.input_w, det.input_h);
    let det_out = provider.infer(&InferenceRequest {
        image_id,
        role: ModelRole::Detector,
        input: &det_input,
        region: full,
    })?;
    let candidates = detect::decode_grid(&det_out, det, config.detector_threshold)?;
    let candidates = detect::nms(&candidates, config.detector_nms_iou);
    let sx = w as f64 / det.input_w as f64;
    let sy = h as f64 / det.input_h as f64;
    let candidates: Vec<DecodedBox> = candidates
        .into_iter()
        .map(|d| DecodedBox {
            bbox: BBox {
                x: d.bbox.x * sx,
                y: d.bbox.y * sy,
                w: d.bbox.w * sx,
                h: d.bbox.h * sy,
            },
            ..d
        })
        .collect();
    let Some(best) = detect::select_counter(&candidates) else {
        return Ok(PipelineOutcome {
            counter_box: None,
            detection_confidence: None,
            margin_box: None,
            result: ReadingResult::empty(ReadingStatus::NegativeNoCounter),
            candidates,
        });
    };
    let counter = best.bbox;
    let margin_box = detect::expand_margin(&counter, config.margin, w as f64, h as f64);

    let (rw, rh) = config.recognizer_input(recognizer);
    let rec_input = imaging::resize_region(image, &margin_box, rw, rh);
    let rec_out = provider.infer(&InferenceRequest {
        image_id,
        role: recognizer.role(),
        input: &rec_input,
        region: margin_box,
    })?;
    let result = match recognizer {
        RecognizerKind::Crnet => decode_crnet(&rec_out, &config.crnet, &config.crnet_options())?,
        RecognizerKind::Multitask => decode_multitask_tensor(&rec_out)?,
        RecognizerKind::Crnn => decode_ctc_greedy(&CtcFrameMatrix::from_tensor(&rec_out)?),
    };
    Ok(PipelineOutcome {
        counter_box: Some(counter),
        detection_confidence: Some(best.confidence),
        margin_box: Some(margin_box),
        result,
        candidates,
    })
}
