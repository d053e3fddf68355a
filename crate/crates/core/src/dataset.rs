//! Annotated meter datasets.
//!
//! One image holds exactly one counter with five digits. Each image
//! `<id>.jpg|.png` has a sibling `<id>.txt` in a line-oriented format:
//!
//! ```text
//! camera: iPhone 6s
//! counter: 100 200 600 160
//! reading: 04063
//! digit: 110 215 90 130
//! ...                         (exactly five digit lines, left to right)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DIGITS_PER_COUNTER: usize = 5;
pub const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];
pub const ANNOTATION_EXTENSION: &str = "txt";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("missing `{0}` line")]
    MissingField(&'static str),
    #[error("expected {DIGITS_PER_COUNTER} digit boxes, found {0}")]
    CountMismatch(usize),
    #[error("invalid reading {0:?}: expected {DIGITS_PER_COUNTER} decimal digits")]
    InvalidReading(String),
    #[error("geometry error: {0}")]
    GeometryError(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("({lower}, {upper}) is not an adjacent digit transition")]
    InvalidPair { lower: u8, upper: u8 },
    #[error("dataset is empty or too small")]
    EmptyDataset,
    #[error("invalid split ratios: {0}")]
    InvalidRatios(String),
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("dataset has {count} violation(s); first: {first}")]
    InvalidDataset { count: usize, first: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl DatasetError {
    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            message: err.to_string(),
        }
    }
}

/// Axis-aligned rectangle in pixels; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box with finite coordinates and positive size.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, DatasetError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(DatasetError::InvalidBox(format!(
                "non-finite coordinates ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(DatasetError::InvalidBox(format!(
                "width and height must be positive, got {w}x{h}"
            )));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, DatasetError> {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn x_max(&self) -> f64 {
        self.x + self.w
    }

    pub fn y_max(&self) -> f64 {
        self.y + self.h
    }

    pub fn center_x(&self) -> f64 {
        self.x + self.w / 2.0
    }

    pub fn center_y(&self) -> f64 {
        self.y + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x_max() && py >= self.y && py <= self.y_max()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.x_max().min(other.x_max()) - self.x.max(other.x)).max(0.0);
        let ih = (self.y_max().min(other.y_max()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Clips the box to `[0, width] x [0, height]`. `None` when nothing is left.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = self.x_max().clamp(0.0, width);
        let y1 = self.y_max().clamp(0.0, height);
        BBox::from_corners(x0, y0, x1, y1).ok()
    }

    fn check_annotation(&self, what: &str) -> Result<(), DatasetError> {
        if self.x < 0.0 || self.y < 0.0 {
            return Err(DatasetError::InvalidBox(format!(
                "{what} has negative origin ({}, {})",
                self.x, self.y
            )));
        }
        Ok(())
    }
}

/// Ground truth for one meter image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterAnnotation {
    pub image_id: String,
    pub camera: String,
    pub counter: BBox,
    /// Left-to-right by x-center.
    pub digits: Vec<BBox>,
    pub reading: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnnotationWarning {
    /// Digit lines were not in left-to-right order and have been re-sorted.
    DigitsReordered,
}

impl MeterAnnotation {
    /// Validates the annotation invariants, sorting the digit boxes by x-center.
    pub fn new(
        image_id: impl Into<String>,
        camera: impl Into<String>,
        counter: BBox,
        digits: Vec<BBox>,
        reading: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        Self::new_detailed(image_id, camera, counter, digits, reading).map(|(a, _)| a)
    }

    fn new_detailed(
        image_id: impl Into<String>,
        camera: impl Into<String>,
        counter: BBox,
        mut digits: Vec<BBox>,
        reading: impl Into<String>,
    ) -> Result<(Self, Vec<AnnotationWarning>), DatasetError> {
        let reading = reading.into();
        let mut warnings = Vec::new();

        BBox::new(counter.x, counter.y, counter.w, counter.h)?;
        counter.check_annotation("counter")?;
        if digits.len() != DIGITS_PER_COUNTER {
            return Err(DatasetError::CountMismatch(digits.len()));
        }
        if reading.len() != DIGITS_PER_COUNTER || !reading.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DatasetError::InvalidReading(reading));
        }
        for d in &digits {
            BBox::new(d.x, d.y, d.w, d.h)?;
            d.check_annotation("digit")?;
        }

        let sorted = digits
            .windows(2)
            .all(|w| w[0].center_x() <= w[1].center_x());
        if !sorted {
            digits.sort_by(|a, b| a.center_x().total_cmp(&b.center_x()));
            warnings.push(AnnotationWarning::DigitsReordered);
        }
        if let Some(w) = digits.windows(2).find(|w| w[0].center_x() >= w[1].center_x()) {
            return Err(DatasetError::GeometryError(format!(
                "two digits share the x-center {}",
                w[0].center_x()
            )));
        }
        for (i, d) in digits.iter().enumerate() {
            if !counter.contains_point(d.center_x(), d.center_y()) {
                return Err(DatasetError::GeometryError(format!(
                    "center of digit {i} ({}, {}) lies outside the counter",
                    d.center_x(),
                    d.center_y()
                )));
            }
        }

        Ok((
            MeterAnnotation {
                image_id: image_id.into(),
                camera: camera.into(),
                counter,
                digits,
                reading,
            },
            warnings,
        ))
    }

    /// Digit classes of the reading, most significant first.
    pub fn digit_classes(&self) -> Vec<u8> {
        self.reading.bytes().map(|b| b - b'0').collect()
    }
}

pub fn parse_annotation(image_id: &str, text: &str) -> Result<MeterAnnotation, DatasetError> {
    parse_annotation_detailed(image_id, text).map(|(a, _)| a)
}

/// Like [`parse_annotation`] but also reports non-fatal findings.
pub fn parse_annotation_detailed(
    image_id: &str,
    text: &str,
) -> Result<(MeterAnnotation, Vec<AnnotationWarning>), DatasetError> {
    let mut camera = None;
    let mut counter = None;
    let mut reading = None;
    let mut digits = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DatasetError::MalformedLine { line, message };
        let (key, value) = raw
            .split_once(':')
            .ok_or_else(|| malformed("expected `key: value`".into()))?;
        let value = value.trim();
        match key.trim() {
            "camera" => set_once(&mut camera, value.to_string(), "camera", line)?,
            "counter" => set_once(&mut counter, parse_box(value, line)?, "counter", line)?,
            "reading" => set_once(&mut reading, value.to_string(), "reading", line)?,
            "digit" => digits.push(parse_box(value, line)?),
            other => return Err(malformed(format!("unknown key {other:?}"))),
        }
    }

    let camera = camera.ok_or(DatasetError::MissingField("camera"))?;
    let counter = counter.ok_or(DatasetError::MissingField("counter"))?;
    let reading = reading.ok_or(DatasetError::MissingField("reading"))?;
    MeterAnnotation::new_detailed(image_id, camera, counter, digits, reading)
}

fn set_once<T>(slot: &mut Option<T>, value: T, key: &str, line: usize) -> Result<(), DatasetError> {
    if slot.is_some() {
        return Err(DatasetError::MalformedLine {
            line,
            message: format!("duplicate `{key}` line"),
        });
    }
    *slot = Some(value);
    Ok(())
}

fn parse_box(value: &str, line: usize) -> Result<BBox, DatasetError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(DatasetError::MalformedLine {
            line,
            message: format!("expected 4 box values, found {}", parts.len()),
        });
    }
    let mut v = [0.0; 4];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part.parse::<f64>().map_err(|_| DatasetError::MalformedLine {
            line,
            message: format!("{part:?} is not a number"),
        })?;
    }
    BBox::new(v[0], v[1], v[2], v[3])
}

/// Canonical text form; [`parse_annotation`] reads it back to an equal value.
pub fn serialize_annotation(a: &MeterAnnotation) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "camera: {}", a.camera);
    let _ = writeln!(out, "counter: {}", format_box(&a.counter));
    let _ = writeln!(out, "reading: {}", a.reading);
    for d in &a.digits {
        let _ = writeln!(out, "digit: {}", format_box(d));
    }
    out
}

fn format_box(b: &BBox) -> String {
    format!("{} {} {} {}", b.x, b.y, b.w, b.h)
}

/// Ground-truth label for a digit caught between two positions: the lower
/// digit, except that a 9 rolling over to 0 stays 9.
pub fn resolve_transition_digit(lower: u8, upper: u8) -> Result<u8, DatasetError> {
    if lower > 9 || upper > 9 || upper != (lower + 1) % 10 {
        return Err(DatasetError::InvalidPair { lower, upper });
    }
    Ok(lower)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitRatios {
    /// 800/400/800 out of 2,000.
    pub const PROTOCOL: SplitRatios = SplitRatios {
        train: 0.4,
        validation: 0.2,
        test: 0.4,
    };

    pub fn validate(&self) -> Result<(), DatasetError> {
        let r = [self.train, self.validation, self.test];
        if r.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(DatasetError::InvalidRatios(format!(
                "ratios must be positive, got {r:?}"
            )));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::InvalidRatios(format!(
                "ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn subset(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "validation" | "val" => Some(&self.validation),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Floor of `ratio * n` per subset, then the remainder goes one at a time to
/// the largest fractional parts (earlier subsets win ties).
pub fn split_sizes(n: usize, ratios: &SplitRatios) -> [usize; 3] {
    let r = [ratios.train, ratios.validation, ratios.test];
    let exact: Vec<f64> = r.iter().map(|v| v * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = (e + 1e-9).floor() as usize;
    }
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded shuffle of the lexicographically sorted ids, cut by [`split_sizes`].
pub fn split_dataset(
    ids: &[String],
    ratios: SplitRatios,
    seed: u64,
) -> Result<DatasetSplit, DatasetError> {
    ratios.validate()?;
    if ids.len() < 3 {
        return Err(DatasetError::EmptyDataset);
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(DatasetError::DuplicateId(w[0].clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);

    let [n_train, n_val, _] = split_sizes(sorted.len(), &ratios);
    let test = sorted.split_off(n_train + n_val);
    let validation = sorted.split_off(n_train);
    Ok(DatasetSplit {
        train: sorted,
        validation,
        test,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub min_w: f64,
    pub min_h: f64,
    pub max_w: f64,
    pub max_h: f64,
    pub mean_w: f64,
    pub mean_h: f64,
    /// Mean of per-box `w / h`.
    pub mean_aspect: f64,
}

impl SizeSummary {
    fn from_boxes<'a>(boxes: impl Iterator<Item = &'a BBox>) -> Option<Self> {
        let mut n = 0usize;
        let mut s = SizeSummary {
            min_w: f64::INFINITY,
            min_h: f64::INFINITY,
            max_w: f64::NEG_INFINITY,
            max_h: f64::NEG_INFINITY,
            mean_w: 0.0,
            mean_h: 0.0,
            mean_aspect: 0.0,
        };
        for b in boxes {
            n += 1;
            s.min_w = s.min_w.min(b.w);
            s.min_h = s.min_h.min(b.h);
            s.max_w = s.max_w.max(b.w);
            s.max_h = s.max_h.max(b.h);
            s.mean_w += b.w;
            s.mean_h += b.h;
            s.mean_aspect += b.w / b.h;
        }
        if n == 0 {
            return None;
        }
        let n = n as f64;
        s.mean_w /= n;
        s.mean_h /= n;
        s.mean_aspect /= n;
        Some(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub images: usize,
    pub per_camera: BTreeMap<String, usize>,
    pub counter: SizeSummary,
    pub digit: SizeSummary,
    /// `digit_frequency[class][position]`.
    pub digit_frequency: [[u64; DIGITS_PER_COUNTER]; 10],
}

pub fn compute_stats(annotations: &[MeterAnnotation]) -> Result<DatasetStats, DatasetError> {
    let counter = SizeSummary::from_boxes(annotations.iter().map(|a| &a.counter))
        .ok_or(DatasetError::EmptyDataset)?;
    let digit = SizeSummary::from_boxes(annotations.iter().flat_map(|a| a.digits.iter()))
        .ok_or(DatasetError::EmptyDataset)?;
    let mut per_camera = BTreeMap::new();
    let mut digit_frequency = [[0u64; DIGITS_PER_COUNTER]; 10];
    for a in annotations {
        *per_camera.entry(a.camera.clone()).or_insert(0) += 1;
        for (pos, class) in a.digit_classes().into_iter().enumerate() {
            digit_frequency[class as usize][pos] += 1;
        }
    }
    Ok(DatasetStats {
        images: annotations.len(),
        per_camera,
        counter,
        digit,
        digit_frequency,
    })
}

impl DatasetStats {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24}{:>8}", "Camera", "Images");
        for (camera, n) in &self.per_camera {
            let _ = writeln!(out, "{camera:<24}{n:>8}");
        }
        let _ = writeln!(out, "{:<24}{:>8}", "Total", self.images);
        let _ = writeln!(out);
        let size = |w: f64, h: f64| format!("{:.0}x{:.0}", w, h);
        let _ = writeln!(out, "{:<16}{:>14}{:>14}", "Info", "Counters", "Digits");
        let (c, d) = (&self.counter, &self.digit);
        let rows = [
            ("Minimum Size", size(c.min_w, c.min_h), size(d.min_w, d.min_h)),
            ("Maximum Size", size(c.max_w, c.max_h), size(d.max_w, d.max_h)),
            ("Average Size", size(c.mean_w, c.mean_h), size(d.mean_w, d.mean_h)),
            (
                "Aspect Ratio",
                format!("{:.2}", c.mean_aspect),
                format!("{:.2}", d.mean_aspect),
            ),
        ];
        for (name, a, b) in rows {
            let _ = writeln!(out, "{name:<16}{a:>14}{b:>14}");
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Digit frequency (class x position)");
        for (class, row) in self.digit_frequency.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>7}")).collect();
            let _ = writeln!(out, "{class:>5}{}", cells.join(""));
        }
        out
    }
}

/// A dataset-level problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum Violation {
    MissingAnnotation,
    MissingImage,
    DuplicateImage,
    MalformedLine(String),
    CountMismatch(usize),
    InvalidReading(String),
    GeometryError(String),
    InvalidBox(String),
    UnreadableImage(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::MissingAnnotation => write!(f, "image has no annotation file"),
            Violation::MissingImage => write!(f, "annotation has no image file"),
            Violation::DuplicateImage => write!(f, "more than one image file for this id"),
            Violation::MalformedLine(m) => write!(f, "malformed annotation: {m}"),
            Violation::CountMismatch(n) => write!(f, "expected 5 digit boxes, found {n}"),
            Violation::InvalidReading(r) => write!(f, "invalid reading {r:?}"),
            Violation::GeometryError(m) => write!(f, "geometry error: {m}"),
            Violation::InvalidBox(m) => write!(f, "invalid box: {m}"),
            Violation::UnreadableImage(m) => write!(f, "unreadable image: {m}"),
        }
    }
}

impl From<DatasetError> for Violation {
    fn from(err: DatasetError) -> Self {
        match err {
            DatasetError::CountMismatch(n) => Violation::CountMismatch(n),
            DatasetError::InvalidReading(r) => Violation::InvalidReading(r),
            DatasetError::GeometryError(m) => Violation::GeometryError(m),
            DatasetError::InvalidBox(m) => Violation::InvalidBox(m),
            other => Violation::MalformedLine(other.to_string()),
        }
    }
}

/// Image/annotation file pair discovered under a dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub image_id: String,
    pub images: Vec<PathBuf>,
    pub annotation: Option<PathBuf>,
}

/// Lists every id found under `root`, sorted.
pub fn scan_dataset(root: &Path) -> Result<Vec<DatasetEntry>, DatasetError> {
    let mut entries: BTreeMap<String, DatasetEntry> = BTreeMap::new();
    let dir = fs::read_dir(root).map_err(|e| DatasetError::io(root, e))?;
    for item in dir {
        let path = item.map_err(|e| DatasetError::io(root, e))?.path();
        if !path.is_file() {
            continue;
        }
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        let ext = ext.to_ascii_lowercase();
        let is_image = IMAGE_EXTENSIONS.contains(&ext.as_str());
        let is_annotation = ext == ANNOTATION_EXTENSION;
        if !is_image && !is_annotation {
            continue;
        }
        let entry = entries
            .entry(stem.to_string())
            .or_insert_with(|| DatasetEntry {
                image_id: stem.to_string(),
                images: Vec::new(),
                annotation: None,
            });
        if is_image {
            entry.images.push(path);
        } else {
            entry.annotation = Some(path);
        }
    }
    let mut out: Vec<DatasetEntry> = entries.into_values().collect();
    for e in &mut out {
        e.images.sort();
    }
    Ok(out)
}

fn check_entry(entry: &DatasetEntry) -> Vec<Violation> {
    let mut found = Vec::new();
    match entry.images.len() {
        0 => found.push(Violation::MissingImage),
        1 => {}
        _ => found.push(Violation::DuplicateImage),
    }
    let Some(ann_path) = &entry.annotation else {
        found.push(Violation::MissingAnnotation);
        return found;
    };
    let annotation = match fs::read_to_string(ann_path) {
        Ok(text) => parse_annotation(&entry.image_id, &text),
        Err(e) => Err(DatasetError::MalformedLine {
            line: 0,
            message: e.to_string(),
        }),
    };
    let annotation = match annotation {
        Ok(a) => a,
        Err(e) => {
            found.push(e.into());
            return found;
        }
    };
    if let Some(img) = entry.images.first() {
        match image::image_dimensions(img) {
            Ok((w, h)) => {
                let c = &annotation.counter;
                if c.x_max() > w as f64 || c.y_max() > h as f64 {
                    found.push(Violation::GeometryError(format!(
                        "counter extends past the {w}x{h} image"
                    )));
                }
            }
            Err(e) => found.push(Violation::UnreadableImage(e.to_string())),
        }
    }
    found
}

/// Every violation under `root`, sorted by image id. An empty list means the
/// dataset is valid.
pub fn validate_dataset(root: &Path) -> Result<Vec<(String, Violation)>, DatasetError> {
    let entries = scan_dataset(root)?;
    let per_entry: Vec<Vec<(String, Violation)>> = entries
        .par_iter()
        .map(|e| {
            check_entry(e)
                .into_iter()
                .map(|v| (e.image_id.clone(), v))
                .collect()
        })
        .collect();
    Ok(per_entry.into_iter().flatten().collect())
}

/// A validated image with its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub annotation: MeterAnnotation,
    pub image_path: PathBuf,
}

/// Loads a dataset that passes [`validate_dataset`]; fails otherwise.
pub fn load_dataset(root: &Path) -> Result<Vec<DatasetSample>, DatasetError> {
    let violations = validate_dataset(root)?;
    if let Some((id, v)) = violations.first() {
        return Err(DatasetError::InvalidDataset {
            count: violations.len(),
            first: format!("{id}: {v}"),
        });
    }
    scan_dataset(root)?
        .into_iter()
        .map(|e| {
            let ann_path = e.annotation.expect("validated");
            let text = fs::read_to_string(&ann_path).map_err(|err| DatasetError::io(&ann_path, err))?;
            Ok(DatasetSample {
                annotation: parse_annotation(&e.image_id, &text)?,
                image_path: e.images[0].clone(),
            })
        })
        .collect()
}
