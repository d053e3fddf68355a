//! `amr` command-line interface.
//!
//! Exit codes: 0 success, 1 dataset violations (`validate` only), 2 any
//! other error. Logs go to stderr; data goes to files or stdout.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use image::RgbImage;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AppliedJitter, Interval, JitterRanges, Permutation};
use crate::config::{anchors_to_json, PipelineConfig};
use crate::dataset::{
    self, compute_stats, parse_annotation, serialize_annotation, split_dataset, BBox, DatasetSplit,
    MeterAnnotation, SplitRatios,
};
use crate::detect::{self, expand_margin, BoxRecord};
use crate::metrics::{self, BoxPrediction, RunMetrics};
use crate::recognize::{run_pipeline, CrnetMode, RecognizerKind, TraceRecord};
use crate::report::{render_report, ReportFormat, ReportInput};
use crate::tensorio::{DirectoryProvider, InferenceProvider, ModelRole, OracleNoise, OracleProvider};

pub const WORKERS_ENV: &str = "AMR_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "amr", version, about = "Automatic meter reading toolkit")]
pub struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a dataset directory; exits 1 when violations are found.
    Validate(ValidateArgs),
    /// Seeded train/validation/test split.
    Split(SplitArgs),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Generate digit-permutation augmented counters.
    Augment(AugmentArgs),
    /// Recompute anchor boxes with k-means.
    Anchors(AnchorsArgs),
    /// Run the detection + recognition pipeline and write a trace.
    Run(RunArgs),
    /// Score traces against ground truth.
    Eval(EvalArgs),
    /// Render evaluation files as text, JSON or CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub root: PathBuf,
    /// Also write the violations as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    pub root: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.4, 0.2, 0.4])]
    pub ratios: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StatsFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub root: PathBuf,
    #[arg(long, value_enum, default_value_t = StatsFormat::Text)]
    pub format: StatsFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SubsetArgs {
    /// Split file restricting the ids used.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Subset of the split file.
    #[arg(long)]
    pub subset: Option<String>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    pub root: PathBuf,
    #[arg(long)]
    pub total: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub subset: SubsetArgs,
    /// Brightness factor range.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 2.0])]
    pub brightness: Vec<f64>,
    /// Rotation range in degrees.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-5.0, 5.0])]
    pub rotation: Vec<f64>,
    /// Per-side crop range as a fraction of the counter size.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = [-0.02, 0.08])]
    pub crop: Vec<f64>,
    /// Samples rendered per batch.
    #[arg(long, default_value_t = 256)]
    pub chunk: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnchorTarget {
    /// Counter boxes on the detector grid.
    Detector,
    /// Digit boxes on the CR-NET grid.
    Digits,
}

#[derive(Debug, Args)]
pub struct AnchorsArgs {
    pub root: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = AnchorTarget::Detector)]
    pub target: AnchorTarget,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub subset: SubsetArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset directory with the images.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub subset: SubsetArgs,
    /// Synthesize network outputs from the annotations.
    #[arg(long, conflicts_with = "tensors")]
    pub oracle: bool,
    /// Directory of `<image_id>.<role>.amrt` network dumps.
    #[arg(long, required_unless_present = "oracle")]
    pub tensors: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub recognizer: Option<RecognizerArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub margin: Option<f64>,
    /// Oracle counter-box jitter, as a fraction of the box size.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Oracle confidence floor.
    #[arg(long, default_value_t = 0.9)]
    pub confidence_floor: f64,
    /// Oracle noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every counter candidate as box JSON lines.
    #[arg(long)]
    pub boxes: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RecognizerArg {
    Crnet,
    Multitask,
    Crnn,
}

impl From<RecognizerArg> for RecognizerKind {
    fn from(r: RecognizerArg) -> Self {
        match r {
            RecognizerArg::Crnet => RecognizerKind::Crnet,
            RecognizerArg::Multitask => RecognizerKind::Multitask,
            RecognizerArg::Crnn => RecognizerKind::Crnn,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Fixed5,
    Variable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Detect,
    Read,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    /// Trace (or box) JSON-lines files; several files are treated as runs.
    #[arg(long = "trace", required = true, num_args = 1..)]
    pub traces: Vec<PathBuf>,
    /// Baseline runs for a paired t-test, paired with `--trace` by position.
    #[arg(long = "baseline", num_args = 1..)]
    pub baseline: Vec<PathBuf>,
    /// Dataset directory holding the ground-truth annotations.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub subset: SubsetArgs,
    /// IoU a detection must exceed.
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Evaluation name in reports.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation files written by `eval`.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "text")]
    pub format: ReportFormat,
    /// Output file (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Writes `bytes` via a temp file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Ids selected by `--split/--subset`; `None` means everything.
fn selected_ids(args: &SubsetArgs, default_subset: &str) -> Result<Option<Vec<String>>> {
    let Some(path) = &args.split else {
        if args.subset.is_some() {
            bail!("--subset needs --split");
        }
        return Ok(None);
    };
    let split: DatasetSplit = read_json(path)?;
    let name = args.subset.as_deref().unwrap_or(default_subset);
    let ids = split
        .subset(name)
        .ok_or_else(|| anyhow!("unknown subset {name:?} (train, validation, test)"))?;
    Ok(Some(ids.to_vec()))
}

/// Parses every annotation under `root`; unparseable files are an error.
fn read_annotations(root: &Path) -> Result<Vec<MeterAnnotation>> {
    let entries = dataset::scan_dataset(root)?;
    entries
        .iter()
        .filter_map(|e| e.annotation.as_ref().map(|p| (e, p)))
        .map(|(e, p)| {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_annotation(&e.image_id, &text).with_context(|| format!("{}", p.display()))
        })
        .collect()
}

fn restrict<T>(items: Vec<T>, ids: &Option<Vec<String>>, id_of: impl Fn(&T) -> &str) -> Result<Vec<T>> {
    let Some(ids) = ids else {
        return Ok(items);
    };
    let mut by_id: HashMap<String, T> = items.into_iter().map(|t| (id_of(&t).to_string(), t)).collect();
    ids.iter()
        .map(|id| by_id.remove(id).ok_or_else(|| anyhow!("split id {id:?} not in dataset")))
        .collect()
}

fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .with_context(|| format!("decoding {}", path.display()))?
        .to_rgb8())
}

fn interval(v: &[f64], name: &str) -> Result<Interval> {
    match v {
        [lo, hi] => Ok(Interval { lo: *lo, hi: *hi }),
        _ => bail!("--{name} takes two values"),
    }
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    if !args.root.is_dir() {
        bail!("dataset root {} is not a directory", args.root.display());
    }
    let violations = dataset::validate_dataset(&args.root)?;
    for (id, v) in &violations {
        eprintln!("{id}: {v}");
    }
    if let Some(out) = &args.out {
        #[derive(Serialize)]
        struct Item<'a> {
            image_id: &'a str,
            #[serde(flatten)]
            violation: &'a dataset::Violation,
        }
        let items: Vec<Item> = violations
            .iter()
            .map(|(id, v)| Item { image_id: id, violation: v })
            .collect();
        write_json(out, &items)?;
    }
    if violations.is_empty() {
        info!("{}: valid", args.root.display());
        Ok(0)
    } else {
        eprintln!("{} violation(s)", violations.len());
        Ok(1)
    }
}

pub fn cmd_split(args: &SplitArgs) -> Result<i32> {
    if args.ratios.len() != 3 {
        bail!("--ratios takes three values (train,validation,test)");
    }
    let ratios = SplitRatios {
        train: args.ratios[0],
        validation: args.ratios[1],
        test: args.ratios[2],
    };
    ratios.validate()?;
    let ids: Vec<String> = dataset::scan_dataset(&args.root)?
        .into_iter()
        .filter(|e| e.annotation.is_some() && !e.images.is_empty())
        .map(|e| e.image_id)
        .collect();
    let split = split_dataset(&ids, ratios, args.seed)?;
    info!(
        "split {} ids into {}/{}/{}",
        ids.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    write_json(&args.out, &split)?;
    Ok(0)
}

pub fn cmd_stats(args: &StatsArgs) -> Result<i32> {
    let annotations = read_annotations(&args.root)?;
    let stats = compute_stats(&annotations)?;
    let text = match args.format {
        StatsFormat::Text => stats.render_text(),
        StatsFormat::Json => serde_json::to_string_pretty(&stats)? + "\n",
    };
    match &args.out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub source_id: String,
    pub permutation: Permutation,
    pub reading: String,
    pub applied: AppliedJitter,
}

/// `manifest.json` written next to the generated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentManifest {
    pub seed: u64,
    pub total: usize,
    pub ranges: JitterRanges,
    pub sources: usize,
    pub samples: Vec<ManifestEntry>,
}

pub fn cmd_augment(args: &AugmentArgs) -> Result<i32> {
    let ranges = JitterRanges {
        brightness: interval(&args.brightness, "brightness")?,
        rotation_deg: interval(&args.rotation, "rotation")?,
        crop: interval(&args.crop, "crop")?,
    };
    ranges.validate()?;
    if args.chunk == 0 {
        bail!("--chunk must be positive");
    }
    let samples = dataset::load_dataset(&args.root)?;
    let ids = selected_ids(&args.subset, "train")?;
    let samples = restrict(samples, &ids, |s| s.annotation.image_id.as_str())?;
    let annotations: Vec<MeterAnnotation> = samples.iter().map(|s| s.annotation.clone()).collect();
    let paths: HashMap<&str, &Path> = samples
        .iter()
        .map(|s| (s.annotation.image_id.as_str(), s.image_path.as_path()))
        .collect();

    let plans = if args.total == 0 {
        Vec::new()
    } else {
        augment::plan_permutations(&annotations, args.total, args.seed)?
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let width = args.total.saturating_sub(1).to_string().len().max(6);
    let mut entries = Vec::with_capacity(plans.len());
    for (c, chunk) in plans.chunks(args.chunk).enumerate() {
        let first = c * args.chunk;
        let mut needed: Vec<&str> = chunk.iter().map(|p| p.source_id.as_str()).collect();
        needed.sort_unstable();
        needed.dedup();
        let images: HashMap<String, RgbImage> = needed
            .par_iter()
            .map(|id| Ok((id.to_string(), load_rgb(paths[id])?)))
            .collect::<Result<_>>()?;
        let rendered = augment::render_plans(&annotations, &images, chunk, first as u64, &ranges, args.seed)?;
        let written: Vec<ManifestEntry> = rendered
            .into_par_iter()
            .enumerate()
            .map(|(i, s)| {
                let image_id = format!("aug_{:0width$}", first + i);
                let ann = s.to_annotation(&image_id, "augmented")?;
                s.image
                    .save(args.out.join(format!("{image_id}.png")))
                    .with_context(|| format!("writing {image_id}.png"))?;
                write_atomic(
                    &args.out.join(format!("{image_id}.txt")),
                    serialize_annotation(&ann).as_bytes(),
                )?;
                Ok(ManifestEntry {
                    image_id,
                    source_id: s.source_id,
                    permutation: s.permutation,
                    reading: s.reading,
                    applied: s.applied,
                })
            })
            .collect::<Result<_>>()?;
        entries.extend(written);
        info!("rendered {}/{}", entries.len(), plans.len());
    }
    let manifest = AugmentManifest {
        seed: args.seed,
        total: args.total,
        ranges,
        sources: annotations.len(),
        samples: entries,
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    Ok(0)
}

pub fn cmd_anchors(args: &AnchorsArgs) -> Result<i32> {
    let config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let samples = dataset::load_dataset(&args.root)?;
    let ids = selected_ids(&args.subset, "train")?;
    let samples = restrict(samples, &ids, |s| s.annotation.image_id.as_str())?;
    let per_sample: Vec<Vec<(f64, f64)>> = samples
        .par_iter()
        .map(|s| {
            let a = &s.annotation;
            Ok(match args.target {
                AnchorTarget::Detector => {
                    let (w, h) = image::image_dimensions(&s.image_path)
                        .with_context(|| format!("reading {}", s.image_path.display()))?;
                    let g = &config.detector;
                    vec![(
                        a.counter.w / w as f64 * g.grid_w as f64,
                        a.counter.h / h as f64 * g.grid_h as f64,
                    )]
                }
                AnchorTarget::Digits => {
                    let region = expand_margin_region(&a.counter, config.margin, &s.image_path)?;
                    let g = &config.crnet;
                    a.digits
                        .iter()
                        .map(|d| (d.w / region.w * g.grid_w as f64, d.h / region.h * g.grid_h as f64))
                        .collect()
                }
            })
        })
        .collect::<Result<_>>()?;
    let boxes: Vec<(f64, f64)> = per_sample.into_iter().flatten().collect();
    let anchors = detect::kmeans_anchors(&boxes, args.k, args.seed)?;
    info!("{} anchors from {} boxes", anchors.len(), boxes.len());
    write_atomic(&args.out, (anchors_to_json(&anchors) + "\n").as_bytes())?;
    Ok(0)
}

fn expand_margin_region(counter: &BBox, margin: f64, image: &Path) -> Result<BBox> {
    let (w, h) = image::image_dimensions(image).with_context(|| format!("reading {}", image.display()))?;
    Ok(expand_margin(counter, margin, w as f64, h as f64))
}

fn build_provider(args: &RunArgs, config: &PipelineConfig) -> Result<Box<dyn InferenceProvider>> {
    if args.oracle {
        let annotations = read_annotations(&args.dataset)?;
        let noise = OracleNoise {
            box_jitter: args.jitter,
            confidence_floor: args.confidence_floor,
            seed: args.seed.unwrap_or(config.seed),
        };
        Ok(Box::new(OracleProvider::new(&annotations, noise, config.oracle_layout())?))
    } else {
        let dir = args.tensors.as_ref().expect("clap requires --tensors");
        let shapes = ModelRole::ALL.iter().map(|&r| (r, config.output_shape(r))).collect();
        Ok(Box::new(DirectoryProvider::new(dir, shapes)))
    }
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let mut config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(r) = args.recognizer {
        config.recognizer = r.into();
    }
    if let Some(m) = args.mode {
        config.mode = match m {
            ModeArg::Fixed5 => CrnetMode::Fixed5,
            ModeArg::Variable => CrnetMode::Variable,
        };
    }
    if let Some(m) = args.margin {
        config.margin = m;
    }
    config.validate()?;
    let provider = build_provider(args, &config)?;

    let entries = dataset::scan_dataset(&args.dataset)?;
    let images: BTreeMap<String, Option<PathBuf>> = entries
        .into_iter()
        .filter(|e| e.annotation.is_some() || !e.images.is_empty())
        .map(|e| (e.image_id, e.images.into_iter().next()))
        .collect();
    let ids: Vec<String> = match selected_ids(&args.subset, "test")? {
        Some(ids) => ids,
        None => images.keys().cloned().collect(),
    };

    let results: Vec<(TraceRecord, Vec<BoxRecord>)> = ids
        .par_iter()
        .map(|id| {
            let outcome = images
                .get(id)
                .and_then(|p| p.as_ref())
                .ok_or_else(|| anyhow!("no image for {id}"))
                .and_then(|p| load_rgb(p))
                .and_then(|img| {
                    Ok(run_pipeline(id, &img, provider.as_ref(), config.recognizer, &config)?)
                });
            match outcome {
                Ok(o) => (
                    TraceRecord::from_outcome(id, &o),
                    o.candidates.iter().map(|b| BoxRecord::new(id, b)).collect(),
                ),
                Err(e) => {
                    warn!("{id}: {e:#}");
                    (TraceRecord::failed(id, format!("{e:#}")), Vec::new())
                }
            }
        })
        .collect();
    let (records, boxes): (Vec<TraceRecord>, Vec<Vec<BoxRecord>>) = results.into_iter().unzip();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    info!("{} images, {} failed", records.len(), failed);
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    write_atomic(&args.out, text.as_bytes())?;
    if let Some(path) = &args.boxes {
        let mut text = String::new();
        for b in boxes.iter().flatten() {
            text.push_str(&serde_json::to_string(b)?);
            text.push('\n');
        }
        write_atomic(path, text.as_bytes())?;
    }
    Ok(0)
}

/// One line of a trace or box file. Trace lines carry `counter_box` and
/// `detection_confidence`; box lines carry `confidence` and either `box` or
/// flat `x, y, w, h`.
#[derive(Debug, Deserialize)]
struct EvalLine {
    image_id: String,
    #[serde(default)]
    counter_box: Option<BBox>,
    #[serde(default)]
    detection_confidence: Option<f64>,
    #[serde(default, rename = "box")]
    bbox: Option<BBox>,
    #[serde(default)]
    confidence: Option<f64>,
    #[serde(flatten)]
    flat: Option<FlatBox>,
}

#[derive(Debug, Deserialize)]
struct FlatBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

pub fn read_box_predictions(path: &Path) -> Result<Vec<BoxPrediction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let line: EvalLine =
            serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        let flat = match line.flat {
            Some(f) => Some(BBox::new(f.x, f.y, f.w, f.h).with_context(|| format!("{}:{}", path.display(), i + 1))?),
            None => None,
        };
        let bbox = line.bbox.or(flat).or(line.counter_box);
        let confidence = line.confidence.or(line.detection_confidence).unwrap_or(1.0);
        if let Some(bbox) = bbox {
            out.push(BoxPrediction {
                image_id: line.image_id,
                bbox,
                confidence,
            });
        }
    }
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<i32> {
    if !args.baseline.is_empty() && args.baseline.len() != args.traces.len() {
        bail!(
            "{} baseline files for {} traces; runs are paired by position",
            args.baseline.len(),
            args.traces.len()
        );
    }
    let annotations = read_annotations(&args.dataset)?;
    let ids = selected_ids(&args.subset, "test")?;
    let annotations = restrict(annotations, &ids, |a| a.image_id.as_str())?;
    let mut report = ReportInput::default();
    let name = args.name.clone();

    match args.mode {
        EvalMode::Detect => {
            let gts: Vec<(String, BBox)> = annotations.iter().map(|a| (a.image_id.clone(), a.counter)).collect();
            for path in &args.traces {
                let preds = read_box_predictions(path)?;
                let e = metrics::eval_detection(&preds, &gts, args.iou)?;
                info!("{}: F {:.2}%", path.display(), e.f_measure * 100.0);
                let label = match (&name, args.traces.len()) {
                    (Some(n), 1) => n.clone(),
                    _ => stem(path),
                };
                report.detection.push((label, e));
            }
        }
        EvalMode::Read => {
            let gts: Vec<(String, String)> = annotations
                .iter()
                .map(|a| (a.image_id.clone(), a.reading.clone()))
                .collect();
            let score = |path: &PathBuf| -> Result<metrics::RecognitionEval> {
                let trace = read_trace(path)?;
                let results: Vec<_> = trace.iter().map(|r| (r.image_id.clone(), r.reading_result())).collect();
                Ok(metrics::eval_recognition(&results, &gts)?)
            };
            let mut runs = Vec::new();
            for path in &args.traces {
                let e = score(path)?;
                info!(
                    "{}: digits {:.2}%, counters {:.2}%",
                    path.display(),
                    e.digit_accuracy * 100.0,
                    e.counter_accuracy * 100.0
                );
                runs.push(RunMetrics::from(&e));
                let label = match (&name, args.traces.len()) {
                    (Some(n), 1) => n.clone(),
                    _ => stem(path),
                };
                report.recognition.push((label, e));
            }
            let baseline: Vec<RunMetrics> = args
                .baseline
                .iter()
                .map(|p| score(p).map(|e| RunMetrics::from(&e)))
                .collect::<Result<_>>()?;
            if runs.len() > 1 || !baseline.is_empty() {
                let summary = metrics::summarize_runs(
                    &runs,
                    args.alpha,
                    (!baseline.is_empty()).then_some(baseline.as_slice()),
                )?;
                report
                    .summaries
                    .push((name.clone().unwrap_or_else(|| "runs".into()), summary));
            }
        }
    }
    write_json(&args.out, &report)?;
    Ok(0)
}

pub fn cmd_report(args: &ReportArgs) -> Result<i32> {
    let mut merged = ReportInput::default();
    for p in &args.inputs {
        let r: ReportInput = read_json(p)?;
        merged.detection.extend(r.detection);
        merged.recognition.extend(r.recognition);
        merged.summaries.extend(r.summaries);
    }
    let doc = render_report(&merged, args.format);
    match &args.out {
        Some(p) => write_atomic(p, doc.as_bytes())?,
        None => print!("{doc}"),
    }
    Ok(0)
}

fn dispatch(command: &Command) -> Result<i32> {
    match command {
        Command::Validate(a) => cmd_validate(a),
        Command::Split(a) => cmd_split(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Augment(a) => cmd_augment(a),
        Command::Anchors(a) => cmd_anchors(a),
        Command::Run(a) => cmd_run(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: worker count must be positive");
            return 2;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
