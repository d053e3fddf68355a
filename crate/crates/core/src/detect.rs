//! Counter detection post-processing: anchor estimation, YOLO grid decoding,
//! non-maximum suppression, counter selection and margin expansion.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::BBox;
use crate::tensorio::PredictionTensor;

/// Fixed-point or iteration cap for [`kmeans_anchors`].
pub const KMEANS_MAX_ITERATIONS: usize = 300;
/// Downsampling factor of the detector backbone.
pub const DETECTOR_STRIDE: u32 = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),
    #[error("k-means needs at least k={k} boxes, got {boxes}")]
    InsufficientBoxes { boxes: usize, k: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Prior box size in grid-cell units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Anchor {
    pub pw: f64,
    pub ph: f64,
}

impl From<[f64; 2]> for Anchor {
    fn from(v: [f64; 2]) -> Self {
        Anchor { pw: v[0], ph: v[1] }
    }
}

impl From<Anchor> for [f64; 2] {
    fn from(a: Anchor) -> Self {
        [a.pw, a.ph]
    }
}

/// Output layout of a YOLO-style head: a `grid_h x grid_w` grid with
/// `anchors.len() * (num_classes + 5)` channels per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub grid_w: usize,
    pub grid_h: usize,
    pub anchors: Vec<Anchor>,
    pub num_classes: usize,
    pub input_w: u32,
    pub input_h: u32,
}

impl GridSpec {
    /// Fast-YOLO counter detector: 416x416 input, 13x13 grid, one class, five
    /// anchors shaped like counters.
    pub fn detector_default() -> Self {
        GridSpec {
            grid_w: 13,
            grid_h: 13,
            anchors: [[1.5, 0.4], [2.5, 0.7], [3.5, 0.95], [5.0, 1.35], [7.0, 1.9]]
                .into_iter()
                .map(Anchor::from)
                .collect(),
            num_classes: 1,
            input_w: 416,
            input_h: 416,
        }
    }

    /// CR-NET digit detector: 400x106 input, 50x13 grid, ten classes, five
    /// anchors shaped like digits.
    pub fn crnet_default() -> Self {
        GridSpec {
            grid_w: 50,
            grid_h: 13,
            anchors: [[3.0, 5.5], [4.0, 7.0], [5.0, 8.5], [6.5, 10.0], [8.0, 11.5]]
                .into_iter()
                .map(Anchor::from)
                .collect(),
            num_classes: 10,
            input_w: 400,
            input_h: 106,
        }
    }

    pub fn channels(&self) -> usize {
        filter_count(self.num_classes, self.anchors.len())
    }

    pub fn validate(&self) -> Result<(), DetectError> {
        if self.grid_w == 0 || self.grid_h == 0 {
            return Err(DetectError::InvalidSpec("grid dimensions must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(DetectError::InvalidSpec("at least one class is required".into()));
        }
        if self.anchors.is_empty() {
            return Err(DetectError::InvalidSpec("at least one anchor is required".into()));
        }
        if let Some(a) = self
            .anchors
            .iter()
            .find(|a| !(a.pw > 0.0 && a.ph > 0.0 && a.pw.is_finite() && a.ph.is_finite()))
        {
            return Err(DetectError::InvalidSpec(format!(
                "anchor ({}, {}) must have positive size",
                a.pw, a.ph
            )));
        }
        if self.input_w == 0 || self.input_h == 0 {
            return Err(DetectError::InvalidSpec("input dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Input sizes must be multiples of the backbone's downsampling factor.
    pub fn check_divisible(&self, factor: u32) -> Result<(), DetectError> {
        if !self.input_w.is_multiple_of(factor) || !self.input_h.is_multiple_of(factor) {
            return Err(DetectError::InvalidSpec(format!(
                "input {}x{} is not divisible by {factor}",
                self.input_w, self.input_h
            )));
        }
        Ok(())
    }

    pub fn cell_w(&self) -> f64 {
        self.input_w as f64 / self.grid_w as f64
    }

    pub fn cell_h(&self) -> f64 {
        self.input_h as f64 / self.grid_h as f64
    }
}

/// Candidate box from a detection head, in network-input pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodedBox {
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Objectness times the winning class probability.
    pub confidence: f64,
    pub class_id: usize,
}

/// Flat JSON-lines form of a decoded box: `{image_id, class_id, confidence, x, y, w, h}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub image_id: String,
    pub class_id: usize,
    pub confidence: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxRecord {
    pub fn new(image_id: &str, b: &DecodedBox) -> Self {
        BoxRecord {
            image_id: image_id.to_string(),
            class_id: b.class_id,
            confidence: b.confidence,
            x: b.bbox.x,
            y: b.bbox.y,
            w: b.bbox.w,
            h: b.bbox.h,
        }
    }
}

/// Channel count of a detection head: `(classes + 5) * anchors`.
pub fn filter_count(classes: usize, anchors: usize) -> usize {
    (classes + 5) * anchors
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// IoU of two co-centered boxes given only their sizes.
pub fn iou_wh(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Decodes a `[grid_h, grid_w, A*(C+5)]` head (an optional leading batch
/// dimension of 1 is accepted). Per anchor the channels are
/// `tx, ty, tw, th, objectness, class logits...`.
pub fn decode_grid(
    t: &PredictionTensor,
    spec: &GridSpec,
    conf_threshold: f64,
) -> Result<Vec<DecodedBox>, DetectError> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(DetectError::InvalidArgument(format!(
            "confidence threshold {conf_threshold} outside [0, 1]"
        )));
    }
    let dims = match t.dims() {
        [1, rest @ ..] if rest.len() == 3 => rest,
        d => d,
    };
    let channels = spec.channels();
    if dims != [spec.grid_h, spec.grid_w, channels] {
        return Err(DetectError::ShapeMismatch(format!(
            "expected [{}, {}, {}] = [grid_h, grid_w, ({} + 5) x {}], got {:?}",
            spec.grid_h,
            spec.grid_w,
            channels,
            spec.num_classes,
            spec.anchors.len(),
            t.dims()
        )));
    }

    let data = t.data();
    let stride = spec.num_classes + 5;
    let (in_w, in_h) = (spec.input_w as f64, spec.input_h as f64);
    let mut out = Vec::new();
    let mut probs = vec![0.0f64; spec.num_classes];
    for cy in 0..spec.grid_h {
        for cx in 0..spec.grid_w {
            let cell = (cy * spec.grid_w + cx) * channels;
            for (a, anchor) in spec.anchors.iter().enumerate() {
                let v = &data[cell + a * stride..cell + (a + 1) * stride];
                let objectness = sigmoid(v[4] as f64);
                let (class_id, class_p) = softmax_argmax(&v[5..], &mut probs);
                let confidence = objectness * class_p;
                if confidence < conf_threshold {
                    continue;
                }
                let bx = (sigmoid(v[0] as f64) + cx as f64) / spec.grid_w as f64 * in_w;
                let by = (sigmoid(v[1] as f64) + cy as f64) / spec.grid_h as f64 * in_h;
                let bw = anchor.pw * (v[2] as f64).exp() / spec.grid_w as f64 * in_w;
                let bh = anchor.ph * (v[3] as f64).exp() / spec.grid_h as f64 * in_h;
                let raw = BBox {
                    x: bx - bw / 2.0,
                    y: by - bh / 2.0,
                    w: bw,
                    h: bh,
                };
                if let Some(bbox) = raw.clamp_to(in_w, in_h) {
                    out.push(DecodedBox {
                        bbox,
                        confidence,
                        class_id,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Softmax over `logits` into `scratch`; returns the first maximal index and
/// its probability.
fn softmax_argmax(logits: &[f32], scratch: &mut [f64]) -> (usize, f64) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let mut sum = 0.0;
    for (s, &l) in scratch.iter_mut().zip(logits) {
        *s = (l as f64 - max).exp();
        sum += *s;
    }
    let mut best = 0;
    for i in 1..scratch.len() {
        if scratch[i] > scratch[best] {
            best = i;
        }
    }
    (best, scratch[best] / sum)
}

/// Processing order shared by NMS and counter selection: confidence
/// descending, then lower class id, lower x, lower y, smaller w, smaller h.
pub fn priority_order(a: &DecodedBox, b: &DecodedBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

/// Greedy per-class NMS. A box survives iff its IoU with every kept box of
/// the same class is below `iou_threshold`. Output is in priority order.
pub fn nms(boxes: &[DecodedBox], iou_threshold: f64) -> Vec<DecodedBox> {
    let mut sorted = boxes.to_vec();
    sorted.sort_by(priority_order);
    let mut kept: Vec<DecodedBox> = Vec::with_capacity(sorted.len());
    for cand in sorted {
        let suppressed = kept
            .iter()
            .any(|k| k.class_id == cand.class_id && iou(&k.bbox, &cand.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(cand);
        }
    }
    kept
}

/// The single counter of an image: the highest-confidence box. `None` means
/// no counter was found, which makes the reading negative.
pub fn select_counter(boxes: &[DecodedBox]) -> Option<DecodedBox> {
    boxes.iter().copied().min_by(priority_order)
}

/// Scales width and height by `1 + margin` about the center, without clamping.
pub fn expand_margin_unclamped(b: &BBox, margin: f64) -> BBox {
    let w = b.w * (1.0 + margin);
    let h = b.h * (1.0 + margin);
    BBox {
        x: b.center_x() - w / 2.0,
        y: b.center_y() - h / 2.0,
        w,
        h,
    }
}

/// [`expand_margin_unclamped`] followed by clipping to the image. A box
/// lying entirely outside the image is returned unclipped.
pub fn expand_margin(b: &BBox, margin: f64, image_w: f64, image_h: f64) -> BBox {
    let grown = expand_margin_unclamped(b, margin);
    grown.clamp_to(image_w, image_h).unwrap_or(grown)
}

/// Result of [`kmeans_anchors_detailed`].
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub anchors: Vec<Anchor>,
    /// Cluster index per input box, referring to `anchors`.
    pub assignments: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Mean `1 - IoU` before and after each reassignment, at fixed centroids.
    pub assignment_objectives: Vec<(f64, f64)>,
    /// Mean `1 - IoU` of the final assignment.
    pub objective: f64,
}

fn nearest(b: (f64, f64), centroids: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = 1.0 - iou_wh(b, *c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn mean_distance(boxes: &[(f64, f64)], assign: &[usize], centroids: &[(f64, f64)]) -> f64 {
    boxes
        .iter()
        .zip(assign)
        .map(|(b, &a)| 1.0 - iou_wh(*b, centroids[a]))
        .sum::<f64>()
        / boxes.len() as f64
}

pub fn kmeans_anchors(boxes: &[(f64, f64)], k: usize, seed: u64) -> Result<Vec<Anchor>, DetectError> {
    kmeans_anchors_detailed(boxes, k, seed).map(|f| f.anchors)
}

/// K-means over box sizes with distance `1 - IoU` of co-centered boxes.
/// Seeding picks a random first centroid, then repeatedly the box farthest
/// from its nearest centroid. Centroids are cluster means. Anchors are
/// returned sorted by area.
pub fn kmeans_anchors_detailed(
    boxes: &[(f64, f64)],
    k: usize,
    seed: u64,
) -> Result<KMeansFit, DetectError> {
    if k == 0 {
        return Err(DetectError::InvalidArgument("k must be at least 1".into()));
    }
    if boxes.len() < k {
        return Err(DetectError::InsufficientBoxes { boxes: boxes.len(), k });
    }
    if let Some(b) = boxes
        .iter()
        .find(|b| !(b.0 > 0.0 && b.1 > 0.0 && b.0.is_finite() && b.1.is_finite()))
    {
        return Err(DetectError::InvalidArgument(format!(
            "box size {b:?} must be positive"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..boxes.len());
    let mut centroids = vec![boxes[first]];
    let mut chosen = vec![false; boxes.len()];
    chosen[first] = true;
    while centroids.len() < k {
        let mut far = (usize::MAX, f64::NEG_INFINITY);
        for (i, b) in boxes.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d = nearest(*b, &centroids).1;
            if d > far.1 {
                far = (i, d);
            }
        }
        chosen[far.0] = true;
        centroids.push(boxes[far.0]);
    }

    let mut assign: Vec<usize> = boxes.iter().map(|b| nearest(*b, &centroids).0).collect();
    let mut objectives = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERATIONS {
        iterations += 1;
        let mut sums = vec![(0.0, 0.0, 0usize); k];
        for (b, &a) in boxes.iter().zip(&assign) {
            sums[a].0 += b.0;
            sums[a].1 += b.1;
            sums[a].2 += 1;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s.2 > 0 {
                *c = (s.0 / s.2 as f64, s.1 / s.2 as f64);
            }
        }
        let before = mean_distance(boxes, &assign, &centroids);
        let next: Vec<usize> = boxes.iter().map(|b| nearest(*b, &centroids).0).collect();
        let after = mean_distance(boxes, &next, &centroids);
        objectives.push((before, after));
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (centroids[a], centroids[b]);
        (ca.0 * ca.1).total_cmp(&(cb.0 * cb.1)).then(ca.0.total_cmp(&cb.0))
    });
    let mut rank = vec![0; k];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let objective = mean_distance(boxes, &assign, &centroids);
    Ok(KMeansFit {
        anchors: order
            .iter()
            .map(|&i| Anchor {
                pw: centroids[i].0,
                ph: centroids[i].1,
            })
            .collect(),
        assignments: assign.iter().map(|&a| rank[a]).collect(),
        iterations,
        converged,
        assignment_objectives: objectives,
        objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn db(x: f64, y: f64, w: f64, h: f64, confidence: f64, class_id: usize) -> DecodedBox {
        DecodedBox {
            bbox: bx(x, y, w, h),
            confidence,
            class_id,
        }
    }

    #[test]
    fn filter_counts() {
        assert_eq!(filter_count(1, 5), 30);
        assert_eq!(filter_count(10, 5), 75);
        assert_eq!(filter_count(1, 1), 6);
        assert_eq!(GridSpec::detector_default().channels(), 30);
        assert_eq!(GridSpec::crnet_default().channels(), 75);
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        assert!((iou(&a, &bx(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_logits_decode() {
        let spec = GridSpec {
            grid_w: 13,
            grid_h: 13,
            anchors: vec![Anchor { pw: 1.0, ph: 1.0 }],
            num_classes: 1,
            input_w: 416,
            input_h: 416,
        };
        let mut data = vec![-20.0f32; 13 * 13 * 6];
        data[..6].fill(0.0);
        let t = PredictionTensor::new(vec![13, 13, 6], data).unwrap();
        let out = decode_grid(&t, &spec, 0.4).unwrap();
        assert_eq!(out.len(), 1);
        let b = out[0];
        assert_eq!((b.bbox.center_x(), b.bbox.center_y()), (16.0, 16.0));
        assert_eq!((b.bbox.w, b.bbox.h), (32.0, 32.0));
        assert_eq!(b.confidence, 0.5);
        assert_eq!(b.class_id, 0);
    }

    #[test]
    fn zero_logits_with_ten_classes() {
        let mut spec = GridSpec::crnet_default();
        spec.anchors.truncate(1);
        let t = PredictionTensor::new(vec![13, 50, 15], vec![0.0; 13 * 50 * 15]).unwrap();
        let out = decode_grid(&t, &spec, 0.0).unwrap();
        assert_eq!(out.len(), 13 * 50);
        assert!(out.iter().all(|b| (b.confidence - 0.05).abs() < 1e-12 && b.class_id == 0));
    }

    #[test]
    fn strongly_negative_grid_is_empty() {
        let spec = GridSpec::detector_default();
        let t = PredictionTensor::new(vec![13, 13, 30], vec![-20.0; 13 * 13 * 30]).unwrap();
        assert!(decode_grid(&t, &spec, 0.5).unwrap().is_empty());
    }

    #[test]
    fn decode_rejects_wrong_channels() {
        let spec = GridSpec::detector_default();
        let t = PredictionTensor::new(vec![13, 13, 25], vec![0.0; 13 * 13 * 25]).unwrap();
        assert!(matches!(decode_grid(&t, &spec, 0.5), Err(DetectError::ShapeMismatch(_))));
        let t = PredictionTensor::new(vec![1, 13, 13, 30], vec![-20.0; 13 * 13 * 30]).unwrap();
        assert!(decode_grid(&t, &spec, 0.5).is_ok());
    }

    #[test]
    fn divisibility() {
        assert!(GridSpec::detector_default().check_divisible(DETECTOR_STRIDE).is_ok());
        let mut s = GridSpec::detector_default();
        s.input_w = 400;
        assert!(s.check_divisible(DETECTOR_STRIDE).is_err());
    }

    #[test]
    fn nms_basics() {
        let a = db(0.0, 0.0, 10.0, 10.0, 0.9, 0);
        let b = db(0.0, 0.0, 10.0, 10.0, 0.8, 0);
        assert_eq!(nms(&[b, a], 0.5), vec![a]);
        let c = db(50.0, 50.0, 10.0, 10.0, 0.7, 0);
        assert_eq!(nms(&[c, a], 0.5), vec![a, c]);
        // other classes are never suppressed
        let d = db(0.0, 0.0, 10.0, 10.0, 0.8, 3);
        assert_eq!(nms(&[d, a], 0.5), vec![a, d]);
    }

    #[test]
    fn counter_selection() {
        assert_eq!(select_counter(&[]), None);
        let boxes: Vec<DecodedBox> = [0.3, 0.9, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &c)| db(i as f64 * 10.0, 0.0, 5.0, 5.0, c, 0))
            .collect();
        assert_eq!(select_counter(&boxes), Some(boxes[1]));
        assert_eq!(select_counter(&boxes[..1]), Some(boxes[0]));
    }

    #[test]
    fn margin_examples() {
        let b = bx(100.0, 100.0, 200.0, 50.0);
        let e = expand_margin(&b, 0.2, 1000.0, 1000.0);
        assert_eq!(e, bx(80.0, 95.0, 240.0, 60.0));
        assert_eq!(expand_margin(&b, 0.0, 1000.0, 1000.0), b);
        let corner = bx(0.0, 0.0, 100.0, 50.0);
        let e = expand_margin(&corner, 0.2, 1000.0, 1000.0);
        assert_eq!((e.x, e.y), (0.0, 0.0));
        assert_eq!((e.w, e.h), (110.0, 55.0));
    }

    #[test]
    fn kmeans_degenerate_cases() {
        let same = vec![(2.0, 3.0); 6];
        assert_eq!(kmeans_anchors(&same, 1, 7).unwrap(), vec![Anchor { pw: 2.0, ph: 3.0 }]);
        let boxes = vec![(1.0, 1.0), (4.0, 1.0), (1.0, 5.0), (7.0, 7.0)];
        let anchors = kmeans_anchors(&boxes, 4, 3).unwrap();
        let mut got: Vec<(f64, f64)> = anchors.iter().map(|a| (a.pw, a.ph)).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want = boxes.clone();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
        assert_eq!(
            kmeans_anchors(&boxes, 5, 0),
            Err(DetectError::InsufficientBoxes { boxes: 4, k: 5 })
        );
    }
}
