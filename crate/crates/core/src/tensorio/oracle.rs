//! Ground-truth test double for the networks.
//!
//! Each output is built by inverting the decoders: the detector head gets the
//! (optionally jittered) counter box written into the cell and anchor that
//! own its center, the recognizer heads get the visible digits of the
//! reading. Every other slot holds [`STRONGLY_NEGATIVE`].

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{InferenceProvider, InferenceRequest, ModelRole, PredictionTensor, ProviderError};
use crate::dataset::{BBox, MeterAnnotation, DIGITS_PER_COUNTER};
use crate::detect::{iou_wh, GridSpec};
use crate::recognize::{CTC_BLANK, CTC_LABELS};

/// Logit for "nothing here"; sigmoid(-20) is about 2e-9.
pub const STRONGLY_NEGATIVE: f32 = -20.0;
const CERTAIN_LOGIT: f64 = 60.0;
const OFFSET_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("invalid oracle noise: {0}")]
    InvalidNoise(String),
    #[error("oracle output cannot host the annotation: {0}")]
    ShapeMismatch(String),
    #[error("image {0:?} has no annotation")]
    UnknownImage(String),
    #[error("invalid oracle layout: {0}")]
    InvalidLayout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleNoise {
    /// Maximum counter-box perturbation as a fraction of its size, in [0, 0.2].
    pub box_jitter: f64,
    /// Lower bound on every decoded confidence, in (0.5, 1].
    pub confidence_floor: f64,
    pub seed: u64,
}

impl Default for OracleNoise {
    fn default() -> Self {
        OracleNoise {
            box_jitter: 0.0,
            confidence_floor: 0.9,
            seed: 0,
        }
    }
}

impl OracleNoise {
    pub fn validate(&self) -> Result<(), OracleError> {
        if !(0.0..=0.2).contains(&self.box_jitter) {
            return Err(OracleError::InvalidNoise(format!(
                "box jitter {} outside [0, 0.2]",
                self.box_jitter
            )));
        }
        if !(self.confidence_floor > 0.5 && self.confidence_floor <= 1.0) {
            return Err(OracleError::InvalidNoise(format!(
                "confidence floor {} outside (0.5, 1]",
                self.confidence_floor
            )));
        }
        Ok(())
    }

    /// Probability the oracle writes: halfway between the floor and 1.
    fn target(&self) -> f64 {
        (1.0 + self.confidence_floor) / 2.0
    }
}

/// Output shapes the oracle produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleLayout {
    pub detector: GridSpec,
    pub crnet: GridSpec,
    pub multitask_input: (u32, u32),
    pub crnn_input: (u32, u32),
    pub crnn_frames: usize,
}

impl Default for OracleLayout {
    fn default() -> Self {
        OracleLayout {
            detector: GridSpec::detector_default(),
            crnet: GridSpec::crnet_default(),
            multitask_input: (220, 60),
            crnn_input: (160, 40),
            crnn_frames: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleProvider {
    annotations: HashMap<String, MeterAnnotation>,
    noise: OracleNoise,
    layout: OracleLayout,
}

/// Oracle with the default output shapes.
pub fn oracle_provider(
    annotations: &[MeterAnnotation],
    noise: OracleNoise,
) -> Result<OracleProvider, OracleError> {
    OracleProvider::new(annotations, noise, OracleLayout::default())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logit `l` such that `softmax([l, 0, 0, ...])[0] == p` over `n` entries.
fn softmax_logit(p: f64, n: usize) -> f64 {
    if p >= 1.0 - 1e-12 {
        CERTAIN_LOGIT
    } else {
        ((n - 1) as f64 * p / (1.0 - p)).ln()
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Maps `b` from image coordinates into a network input that shows `region`
/// at `input_w x input_h`, clipped to the input.
fn to_input(b: &BBox, region: &BBox, input_w: u32, input_h: u32) -> Option<BBox> {
    let sx = input_w as f64 / region.w;
    let sy = input_h as f64 / region.h;
    BBox {
        x: (b.x - region.x) * sx,
        y: (b.y - region.y) * sy,
        w: b.w * sx,
        h: b.h * sy,
    }
    .clamp_to(input_w as f64, input_h as f64)
}

impl OracleProvider {
    pub fn new(
        annotations: &[MeterAnnotation],
        noise: OracleNoise,
        layout: OracleLayout,
    ) -> Result<Self, OracleError> {
        noise.validate()?;
        for spec in [&layout.detector, &layout.crnet] {
            spec.validate()
                .map_err(|e| OracleError::InvalidLayout(e.to_string()))?;
        }
        if layout.crnet.num_classes != 10 {
            return Err(OracleError::InvalidLayout("CR-NET head needs 10 classes".into()));
        }
        Ok(OracleProvider {
            annotations: annotations
                .iter()
                .map(|a| (a.image_id.clone(), a.clone()))
                .collect(),
            noise,
            layout,
        })
    }

    pub fn noise(&self) -> &OracleNoise {
        &self.noise
    }

    pub fn layout(&self) -> &OracleLayout {
        &self.layout
    }

    fn annotation(&self, image_id: &str) -> Result<&MeterAnnotation, OracleError> {
        self.annotations
            .get(image_id)
            .ok_or_else(|| OracleError::UnknownImage(image_id.to_string()))
    }

    /// Counter box the detector head reports, in image coordinates.
    pub fn jittered_counter(&self, a: &MeterAnnotation) -> BBox {
        let j = self.noise.box_jitter;
        let c = a.counter;
        if j == 0.0 {
            return c;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.noise.seed ^ fnv1a(&a.image_id));
        let mut u = || rng.random_range(-j..=j);
        let (dx, dy, sw, sh) = (u(), u(), 1.0 + u(), 1.0 + u());
        let w = c.w * sw;
        let h = c.h * sh;
        BBox {
            x: c.center_x() + dx * c.w - w / 2.0,
            y: c.center_y() + dy * c.h - h / 2.0,
            w,
            h,
        }
    }

    fn check_input(&self, req: &InferenceRequest<'_>, w: u32, h: u32) -> Result<(), OracleError> {
        if req.input.dimensions() != (w, h) {
            return Err(OracleError::ShapeMismatch(format!(
                "{:?} input is {:?}, expected {w}x{h}",
                req.role,
                req.input.dimensions()
            )));
        }
        Ok(())
    }

    /// Indices of the digits whose centers lie inside `region`.
    fn visible_digits(a: &MeterAnnotation, region: &BBox) -> Vec<usize> {
        (0..a.digits.len())
            .filter(|&i| region.contains_point(a.digits[i].center_x(), a.digits[i].center_y()))
            .collect()
    }

    fn detector(&self, req: &InferenceRequest<'_>) -> Result<PredictionTensor, OracleError> {
        let spec = &self.layout.detector;
        self.check_input(req, spec.input_w, spec.input_h)?;
        let a = self.annotation(req.image_id)?;
        let counter = self.jittered_counter(a);
        let items: Vec<(BBox, usize)> = to_input(&counter, &req.region, spec.input_w, spec.input_h)
            .map(|b| (b, 0))
            .into_iter()
            .collect();
        encode_grid(spec, &items, self.noise.target())
    }

    fn crnet(&self, req: &InferenceRequest<'_>) -> Result<PredictionTensor, OracleError> {
        let spec = &self.layout.crnet;
        self.check_input(req, spec.input_w, spec.input_h)?;
        let a = self.annotation(req.image_id)?;
        let classes = a.digit_classes();
        let items: Vec<(BBox, usize)> = Self::visible_digits(a, &req.region)
            .into_iter()
            .filter_map(|i| {
                to_input(&a.digits[i], &req.region, spec.input_w, spec.input_h)
                    .map(|b| (b, classes[i] as usize))
            })
            .collect();
        encode_grid(spec, &items, self.noise.target())
    }

    fn multitask(&self, req: &InferenceRequest<'_>) -> Result<PredictionTensor, OracleError> {
        let (w, h) = self.layout.multitask_input;
        self.check_input(req, w, h)?;
        let a = self.annotation(req.image_id)?;
        let classes = a.digit_classes();
        let l = softmax_logit(self.noise.target(), 10) as f32;
        let mut data = vec![0.0f32; DIGITS_PER_COUNTER * 10];
        for i in Self::visible_digits(a, &req.region) {
            data[i * 10 + classes[i] as usize] = l;
        }
        Ok(PredictionTensor::new(vec![DIGITS_PER_COUNTER, 10], data).expect("valid shape"))
    }

    fn crnn(&self, req: &InferenceRequest<'_>) -> Result<PredictionTensor, OracleError> {
        let (w, h) = self.layout.crnn_input;
        self.check_input(req, w, h)?;
        let a = self.annotation(req.image_id)?;
        let classes = a.digit_classes();
        let visible = Self::visible_digits(a, &req.region);
        let frames = self.layout.crnn_frames;
        let n = visible.len();
        let slots: Vec<usize> = (0..n).map(|i| (2 * i + 1) * frames / (2 * n)).collect();
        if frames < 2 * n || slots.windows(2).any(|s| s[1] - s[0] < 2) {
            return Err(OracleError::ShapeMismatch(format!(
                "{frames} CTC frames cannot separate {n} digits with blanks"
            )));
        }
        let l = softmax_logit(self.noise.target(), CTC_LABELS) as f32;
        let mut data = vec![0.0f32; frames * CTC_LABELS];
        for t in 0..frames {
            data[t * CTC_LABELS + CTC_BLANK] = l;
        }
        for (slot, &i) in slots.iter().zip(&visible) {
            data[slot * CTC_LABELS + CTC_BLANK] = 0.0;
            data[slot * CTC_LABELS + classes[i] as usize] = l;
        }
        Ok(PredictionTensor::new(vec![frames, CTC_LABELS], data).expect("valid shape"))
    }
}

/// Writes each `(box, class)` into the slot whose decode reproduces it, with
/// decoded confidence `target`.
fn encode_grid(
    spec: &GridSpec,
    items: &[(BBox, usize)],
    target: f64,
) -> Result<PredictionTensor, OracleError> {
    let channels = spec.channels();
    let stride = spec.num_classes + 5;
    let mut data = vec![STRONGLY_NEGATIVE; spec.grid_h * spec.grid_w * channels];
    let mut used = vec![false; spec.grid_h * spec.grid_w * spec.anchors.len()];
    let objectness = if target >= 1.0 - 1e-12 {
        CERTAIN_LOGIT
    } else {
        logit(target)
    };

    for (b, class) in items {
        if *class >= spec.num_classes {
            return Err(OracleError::ShapeMismatch(format!(
                "class {class} outside a {}-class head",
                spec.num_classes
            )));
        }
        let gx = b.center_x() / spec.input_w as f64 * spec.grid_w as f64;
        let gy = b.center_y() / spec.input_h as f64 * spec.grid_h as f64;
        let cx = (gx.floor() as usize).min(spec.grid_w - 1);
        let cy = (gy.floor() as usize).min(spec.grid_h - 1);
        let fx = (gx - cx as f64).clamp(OFFSET_EPS, 1.0 - OFFSET_EPS);
        let fy = (gy - cy as f64).clamp(OFFSET_EPS, 1.0 - OFFSET_EPS);
        let bw = b.w / spec.input_w as f64 * spec.grid_w as f64;
        let bh = b.h / spec.input_h as f64 * spec.grid_h as f64;

        let mut ranked: Vec<usize> = (0..spec.anchors.len()).collect();
        ranked.sort_by(|&i, &j| {
            let (ai, aj) = (&spec.anchors[i], &spec.anchors[j]);
            iou_wh((bw, bh), (aj.pw, aj.ph))
                .total_cmp(&iou_wh((bw, bh), (ai.pw, ai.ph)))
                .then(i.cmp(&j))
        });
        let cell = cy * spec.grid_w + cx;
        let anchor = ranked
            .into_iter()
            .find(|&a| !used[cell * spec.anchors.len() + a])
            .ok_or_else(|| {
                OracleError::ShapeMismatch(format!(
                    "every anchor of cell ({cx}, {cy}) is already taken"
                ))
            })?;
        used[cell * spec.anchors.len() + anchor] = true;

        let p = &spec.anchors[anchor];
        let base = cell * channels + anchor * stride;
        let slot = &mut data[base..base + stride];
        slot[0] = logit(fx) as f32;
        slot[1] = logit(fy) as f32;
        slot[2] = (bw / p.pw).ln() as f32;
        slot[3] = (bh / p.ph).ln() as f32;
        slot[4] = objectness as f32;
        slot[5 + class] = -STRONGLY_NEGATIVE;
    }
    Ok(PredictionTensor::new(vec![spec.grid_h, spec.grid_w, channels], data).expect("valid shape"))
}

impl InferenceProvider for OracleProvider {
    fn output_shape(&self, role: ModelRole) -> Option<Vec<usize>> {
        let l = &self.layout;
        Some(match role {
            ModelRole::Detector => vec![l.detector.grid_h, l.detector.grid_w, l.detector.channels()],
            ModelRole::RecognizerCrnet => vec![l.crnet.grid_h, l.crnet.grid_w, l.crnet.channels()],
            ModelRole::RecognizerMultitask => vec![DIGITS_PER_COUNTER, 10],
            ModelRole::RecognizerCrnn => vec![l.crnn_frames, CTC_LABELS],
        })
    }

    fn infer(&self, req: &InferenceRequest<'_>) -> Result<PredictionTensor, ProviderError> {
        let t = match req.role {
            ModelRole::Detector => self.detector(req),
            ModelRole::RecognizerCrnet => self.crnet(req),
            ModelRole::RecognizerMultitask => self.multitask(req),
            ModelRole::RecognizerCrnn => self.crnn(req),
        }?;
        Ok(t)
    }
}
