//! Evaluation reports as text, JSON or CSV.
//!
//! Every evaluation becomes one flat [`ReportRow`]; percentages are rounded
//! to two decimals once, so the JSON and CSV renderings carry the same numbers.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::{DetectionEval, RecognitionEval, RunSummary, TTestOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" | "txt" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Text => "txt",
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

/// Named evaluations to render together.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportInput {
    #[serde(default)]
    pub detection: Vec<(String, DetectionEval)>,
    #[serde(default)]
    pub recognition: Vec<(String, RecognitionEval)>,
    #[serde(default)]
    pub summaries: Vec<(String, RunSummary)>,
}

impl ReportInput {
    pub fn is_empty(&self) -> bool {
        self.detection.is_empty() && self.recognition.is_empty() && self.summaries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Detection,
    Recognition,
    Summary,
}

/// One evaluation. Fractions are stored as percent with two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: RowKind,
    pub name: String,
    pub tp: Option<u64>,
    pub fp: Option<u64>,
    #[serde(rename = "fn")]
    pub fn_: Option<u64>,
    pub iou_threshold: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f_measure: Option<f64>,
    pub mean_iou: Option<f64>,
    pub runs: Option<u64>,
    pub digit_accuracy: Option<f64>,
    pub digit_accuracy_std: Option<f64>,
    pub counter_accuracy: Option<f64>,
    pub counter_accuracy_std: Option<f64>,
    pub t_statistic: Option<f64>,
    pub dof: Option<u32>,
    pub p_value: Option<f64>,
    pub significant: Option<bool>,
}

impl ReportRow {
    fn blank(kind: RowKind, name: &str) -> Self {
        ReportRow {
            kind,
            name: name.to_string(),
            tp: None,
            fp: None,
            fn_: None,
            iou_threshold: None,
            precision: None,
            recall: None,
            f_measure: None,
            mean_iou: None,
            runs: None,
            digit_accuracy: None,
            digit_accuracy_std: None,
            counter_accuracy: None,
            counter_accuracy_std: None,
            t_statistic: None,
            dof: None,
            p_value: None,
            significant: None,
        }
    }
}

/// Fraction to percent, rounded to two decimals.
pub fn percent(fraction: f64) -> f64 {
    (fraction * 10_000.0).round() / 100.0
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (v * s).round() / s
}

/// Flattens the input into rows sorted by kind, then name.
pub fn report_rows(input: &ReportInput) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for (name, e) in &input.detection {
        let mut r = ReportRow::blank(RowKind::Detection, name);
        r.tp = Some(e.tp);
        r.fp = Some(e.fp);
        r.fn_ = Some(e.fn_);
        r.iou_threshold = Some(e.iou_threshold);
        r.precision = Some(percent(e.precision));
        r.recall = Some(percent(e.recall));
        r.f_measure = Some(percent(e.f_measure));
        r.mean_iou = Some(percent(e.mean_iou));
        rows.push(r);
    }
    for (name, e) in &input.recognition {
        let mut r = ReportRow::blank(RowKind::Recognition, name);
        r.digit_accuracy = Some(percent(e.digit_accuracy));
        r.counter_accuracy = Some(percent(e.counter_accuracy));
        rows.push(r);
    }
    for (name, s) in &input.summaries {
        let mut r = ReportRow::blank(RowKind::Summary, name);
        r.runs = Some(s.runs.len() as u64);
        r.digit_accuracy = Some(percent(s.mean.digit_accuracy));
        r.counter_accuracy = Some(percent(s.mean.counter_accuracy));
        r.digit_accuracy_std = s.stddev.map(|d| percent(d.digit_accuracy));
        r.counter_accuracy_std = s.stddev.map(|d| percent(d.counter_accuracy));
        // the counter-accuracy comparison is the headline one
        if let Some(cmp) = &s.t_test {
            match cmp.counter_accuracy {
                TTestOutcome::Tested {
                    t,
                    dof,
                    p_value,
                    significant,
                    ..
                } => {
                    r.t_statistic = Some(round_to(t, 6));
                    r.dof = Some(dof);
                    r.p_value = Some(round_to(p_value, 6));
                    r.significant = Some(significant);
                }
                TTestOutcome::Degenerate { dof, .. } => {
                    r.dof = Some(dof);
                    r.significant = Some(false);
                }
            }
        }
        rows.push(r);
    }
    rows.sort_by(|a, b| a.kind.cmp(&b.kind).then_with(|| a.name.cmp(&b.name)));
    rows
}

pub fn render_report(input: &ReportInput, format: ReportFormat) -> String {
    let rows = report_rows(input);
    match format {
        ReportFormat::Text => render_text(&rows),
        ReportFormat::Json => render_json(&rows),
        ReportFormat::Csv => render_csv(&rows),
    }
}

fn render_json(rows: &[ReportRow]) -> String {
    #[derive(Serialize)]
    struct Doc<'a> {
        rows: &'a [ReportRow],
    }
    let mut s = serde_json::to_string_pretty(&Doc { rows }).expect("report serializes");
    s.push('\n');
    s
}

fn render_csv(rows: &[ReportRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// Column order of the CSV rendering; matches the [`ReportRow`] fields.
pub const CSV_HEADER: [&str; 19] = [
    "kind",
    "name",
    "tp",
    "fp",
    "fn",
    "iou_threshold",
    "precision",
    "recall",
    "f_measure",
    "mean_iou",
    "runs",
    "digit_accuracy",
    "digit_accuracy_std",
    "counter_accuracy",
    "counter_accuracy_std",
    "t_statistic",
    "dof",
    "p_value",
    "significant",
];

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

fn render_text(rows: &[ReportRow]) -> String {
    let mut out = String::from("AMR evaluation report\n");
    if rows.is_empty() {
        out.push_str("\n(no evaluations)\n");
        return out;
    }
    let section = |kind: RowKind| rows.iter().filter(move |r| r.kind == kind);

    if section(RowKind::Detection).next().is_some() {
        out.push_str("\nDetection\n");
        let _ = writeln!(
            out,
            "{:<24} {:>5} {:>5} {:>5} {:>6} {:>9} {:>9} {:>9} {:>9}",
            "name", "tp", "fp", "fn", "iou>", "precision", "recall", "f-measure", "mean IoU"
        );
        for r in section(RowKind::Detection) {
            let _ = writeln!(
                out,
                "{:<24} {:>5} {:>5} {:>5} {:>6.2} {:>9} {:>9} {:>9} {:>9}",
                r.name,
                r.tp.unwrap_or(0),
                r.fp.unwrap_or(0),
                r.fn_.unwrap_or(0),
                r.iou_threshold.unwrap_or(0.0),
                pct(r.precision),
                pct(r.recall),
                pct(r.f_measure),
                pct(r.mean_iou)
            );
        }
    }
    if section(RowKind::Recognition).next().is_some() {
        out.push_str("\nRecognition\n");
        let _ = writeln!(out, "{:<24} {:>9} {:>9}", "name", "digits %", "counters %");
        for r in section(RowKind::Recognition) {
            let _ = writeln!(
                out,
                "{:<24} {:>9} {:>9}",
                r.name,
                pct(r.digit_accuracy),
                pct(r.counter_accuracy)
            );
        }
    }
    if section(RowKind::Summary).next().is_some() {
        out.push_str("\nRuns (mean ± std)\n");
        let _ = writeln!(
            out,
            "{:<24} {:>4} {:>16} {:>16} {:>10} {:>4} {:>10}",
            "name", "n", "digits %", "counters %", "t", "dof", "p"
        );
        let with_std = |m: Option<f64>, s: Option<f64>| match s {
            Some(s) => format!("{} ± {:.2}", pct(m), s),
            None => pct(m),
        };
        for r in section(RowKind::Summary) {
            let sig = match r.significant {
                Some(true) => " *",
                _ => "",
            };
            let _ = writeln!(
                out,
                "{:<24} {:>4} {:>16} {:>16} {:>10} {:>4} {:>10}{sig}",
                r.name,
                r.runs.unwrap_or(0),
                with_std(r.digit_accuracy, r.digit_accuracy_std),
                with_std(r.counter_accuracy, r.counter_accuracy_std),
                r.t_statistic.map_or_else(|| "-".into(), |t| format!("{t:.4}")),
                r.dof.map_or_else(|| "-".into(), |d| d.to_string()),
                r.p_value.map_or_else(|| "-".into(), |p| format!("{p:.4}")),
            );
        }
    }
    out
}
