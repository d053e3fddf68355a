//! Pipeline configuration file (JSON). Every field has a default, so `{}` is
//! a complete config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{Anchor, GridSpec, DETECTOR_STRIDE};
use crate::recognize::{CrnetMode, CrnetOptions, RecognizerKind, CTC_LABELS};
use crate::tensorio::{ModelRole, OracleLayout};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub detector: GridSpec,
    /// Anchor file overriding `detector.anchors`.
    pub detector_anchors_path: Option<PathBuf>,
    pub detector_threshold: f64,
    pub detector_nms_iou: f64,
    pub recognizer: RecognizerKind,
    pub crnet: GridSpec,
    /// Anchor file overriding `crnet.anchors`.
    pub crnet_anchors_path: Option<PathBuf>,
    pub mode: CrnetMode,
    /// Candidate threshold when exactly five digits are required.
    pub fixed5_threshold: f64,
    /// Digit threshold when the number of digits may vary.
    pub variable_threshold: f64,
    pub digit_nms_iou: f64,
    pub multitask_input: [u32; 2],
    pub crnn_input: [u32; 2],
    pub crnn_frames: usize,
    /// Fraction by which the detected counter grows before recognition.
    pub margin: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            detector: GridSpec::detector_default(),
            detector_anchors_path: None,
            detector_threshold: 0.25,
            detector_nms_iou: 0.5,
            recognizer: RecognizerKind::Crnet,
            crnet: GridSpec::crnet_default(),
            crnet_anchors_path: None,
            mode: CrnetMode::Fixed5,
            fixed5_threshold: 0.25,
            variable_threshold: 0.5,
            digit_nms_iou: 0.5,
            multitask_input: [220, 60],
            crnn_input: [160, 40],
            crnn_frames: 40,
            margin: 0.2,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads a config file, resolving anchor paths relative to it.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.detector_anchors_path, &mut cfg.crnet_anchors_path]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.resolve_anchors()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces inline anchors with the contents of the anchor files, if set.
    pub fn resolve_anchors(&mut self) -> Result<(), ConfigError> {
        if let Some(p) = &self.detector_anchors_path {
            self.detector.anchors = read_anchor_file(p)?;
        }
        if let Some(p) = &self.crnet_anchors_path {
            self.crnet.anchors = read_anchor_file(p)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| ConfigError::Invalid(m);
        self.detector
            .validate()
            .map_err(|e| invalid(format!("detector: {e}")))?;
        self.detector
            .check_divisible(DETECTOR_STRIDE)
            .map_err(|e| invalid(format!("detector: {e}")))?;
        self.crnet
            .validate()
            .map_err(|e| invalid(format!("crnet: {e}")))?;
        if self.crnet.num_classes != 10 {
            return Err(invalid(format!(
                "crnet must have 10 classes, has {}",
                self.crnet.num_classes
            )));
        }
        for (name, v) in [
            ("detector_threshold", self.detector_threshold),
            ("fixed5_threshold", self.fixed5_threshold),
            ("variable_threshold", self.variable_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} {v} outside [0, 1]")));
            }
        }
        for (name, v) in [
            ("detector_nms_iou", self.detector_nms_iou),
            ("digit_nms_iou", self.digit_nms_iou),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} {v} outside (0, 1]")));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(invalid(format!("margin {} must be >= 0", self.margin)));
        }
        if self.multitask_input.contains(&0) || self.crnn_input.contains(&0) || self.crnn_frames == 0 {
            return Err(invalid("recognizer input sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn crnet_options(&self) -> CrnetOptions {
        CrnetOptions {
            mode: self.mode,
            threshold: match self.mode {
                CrnetMode::Fixed5 => self.fixed5_threshold,
                CrnetMode::Variable => self.variable_threshold,
            },
            nms_iou: self.digit_nms_iou,
        }
    }

    /// Input size the recognizer expects.
    pub fn recognizer_input(&self, kind: RecognizerKind) -> (u32, u32) {
        match kind {
            RecognizerKind::Crnet => (self.crnet.input_w, self.crnet.input_h),
            RecognizerKind::Multitask => (self.multitask_input[0], self.multitask_input[1]),
            RecognizerKind::Crnn => (self.crnn_input[0], self.crnn_input[1]),
        }
    }

    /// Declared output shape per model role.
    pub fn output_shape(&self, role: ModelRole) -> Vec<usize> {
        match role {
            ModelRole::Detector => vec![self.detector.grid_h, self.detector.grid_w, self.detector.channels()],
            ModelRole::RecognizerCrnet => vec![self.crnet.grid_h, self.crnet.grid_w, self.crnet.channels()],
            ModelRole::RecognizerMultitask => vec![5, 10],
            ModelRole::RecognizerCrnn => vec![self.crnn_frames, CTC_LABELS],
        }
    }

    /// Oracle shapes matching this config.
    pub fn oracle_layout(&self) -> OracleLayout {
        OracleLayout {
            detector: self.detector.clone(),
            crnet: self.crnet.clone(),
            multitask_input: (self.multitask_input[0], self.multitask_input[1]),
            crnn_input: (self.crnn_input[0], self.crnn_input[1]),
            crnn_frames: self.crnn_frames,
        }
    }
}

/// Anchor file: JSON list of `[pw, ph]` pairs in grid units.
pub fn read_anchor_file(path: &Path) -> Result<Vec<Anchor>, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn anchors_to_json(anchors: &[Anchor]) -> String {
    let pairs: Vec<[f64; 2]> = anchors.iter().map(|&a| a.into()).collect();
    serde_json::to_string(&pairs).expect("anchors serialize")
}
