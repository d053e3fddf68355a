mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use amr_core::cli::AugmentManifest;
use amr_core::dataset::{serialize_annotation, DatasetSplit};
use amr_core::recognize::TraceRecord;
use amr_core::report::ReportInput;
use amr_core::{BBox, MeterAnnotation};
use common::{synthetic_annotations, write_dataset};
use tempfile::TempDir;

fn amr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("AMR_WORKERS")
        .output()
        .expect("spawn amr")
}

fn ok(args: &[&str]) -> Output {
    let out = amr(args);
    assert!(
        out.status.success(),
        "amr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn toy_dataset(n: usize) -> (TempDir, Vec<MeterAnnotation>) {
    let dir = tempfile::tempdir().unwrap();
    let annotations = synthetic_annotations(n, 42);
    write_dataset(&dir.path().join("data"), &annotations);
    (dir, annotations)
}

#[test]
fn validate_exit_codes() {
    let (dir, annotations) = toy_dataset(4);
    let data = dir.path().join("data");
    assert_eq!(amr(&["validate", s(&data)]).status.code(), Some(0));

    fs::write(data.join(format!("{}.txt", annotations[1].image_id)), "reading: 123\n").unwrap();
    fs::remove_file(data.join(format!("{}.png", annotations[2].image_id))).unwrap();
    let report = dir.path().join("violations.json");
    let out = amr(&["validate", s(&data), "--out", s(&report)]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&annotations[1].image_id) && stderr.contains(&annotations[2].image_id), "{stderr}");
    let items: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(items.len(), 2);

    assert_eq!(amr(&["validate", s(&dir.path().join("nope"))]).status.code(), Some(2));
}

#[test]
fn split_is_byte_identical_and_checks_ratios() {
    let (dir, _) = toy_dataset(10);
    let data = dir.path().join("data");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&["split", s(&data), "--seed", "3", "--out", s(&a)]);
    ok(&["split", s(&data), "--seed", "3", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let split: DatasetSplit = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!((split.train.len(), split.validation.len(), split.test.len()), (4, 2, 4));

    let bad = amr(&["split", s(&data), "--seed", "3", "--ratios", "0.4,0.2,0.3", "--out", s(&b)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sum to 1"));
}

#[test]
fn stats_text_and_json() {
    let (dir, _) = toy_dataset(5);
    let data = dir.path().join("data");
    let out = ok(&["stats", s(&data)]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("Total") && l.ends_with(" 5")), "{text}");
    let out = ok(&["stats", s(&data), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["images"], 5);
}

#[test]
fn augment_manifest() {
    let (dir, _) = toy_dataset(3);
    let data = dir.path().join("data");
    let empty = dir.path().join("empty");
    ok(&["augment", s(&data), "--total", "0", "--seed", "1", "--out", s(&empty)]);
    let m: AugmentManifest = serde_json::from_str(&fs::read_to_string(empty.join("manifest.json")).unwrap()).unwrap();
    assert!(m.samples.is_empty());
    assert_eq!((m.ranges.brightness.lo, m.ranges.brightness.hi), (0.5, 2.0));
    assert_eq!((m.ranges.rotation_deg.lo, m.ranges.rotation_deg.hi), (-5.0, 5.0));
    assert_eq!((m.ranges.crop.lo, m.ranges.crop.hi), (-0.02, 0.08));

    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["augment", s(&data), "--total", "12", "--seed", "9", "--chunk", "5", "--out", s(&a)]);
    ok(&["--workers", "1", "augment", s(&data), "--total", "12", "--seed", "9", "--out", s(&b)]);
    let ma = fs::read(a.join("manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("manifest.json")).unwrap());
    let m: AugmentManifest = serde_json::from_slice(&ma).unwrap();
    assert_eq!(m.samples.len(), 12);
    // the output directory is itself a valid dataset
    assert_eq!(amr(&["validate", s(&a)]).status.code(), Some(0));
    for e in &m.samples {
        assert_eq!(
            fs::read(a.join(format!("{}.png", e.image_id))).unwrap(),
            fs::read(b.join(format!("{}.png", e.image_id))).unwrap()
        );
    }
}

#[test]
fn anchors_from_uniform_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let base = &synthetic_annotations(1, 1)[0];
    let annotations: Vec<MeterAnnotation> = (0..4)
        .map(|i| {
            MeterAnnotation::new(format!("u{i}"), "cam", base.counter, base.digits.clone(), base.reading.clone())
                .unwrap()
        })
        .collect();
    write_dataset(&data, &annotations);
    let out = dir.path().join("anchors.json");
    ok(&["anchors", s(&data), "--k", "1", "--seed", "0", "--out", s(&out)]);
    let anchors: Vec<[f64; 2]> = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let want = [
        base.counter.w / common::IMAGE_W as f64 * 13.0,
        base.counter.h / common::IMAGE_H as f64 * 13.0,
    ];
    assert_eq!(anchors.len(), 1);
    assert!((anchors[0][0] - want[0]).abs() < 1e-9 && (anchors[0][1] - want[1]).abs() < 1e-9);

    ok(&["anchors", s(&data), "--k", "5", "--seed", "0", "--target", "digits", "--out", s(&out)]);
    let too_many = amr(&["anchors", s(&data), "--k", "5", "--seed", "0", "--out", s(&out)]);
    assert_eq!(too_many.status.code(), Some(2));
}

fn read_trace(path: &Path) -> Vec<TraceRecord> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn run_eval_report_round_trip() {
    let (dir, annotations) = toy_dataset(10);
    let data = dir.path().join("data");
    let d = dir.path();
    let trace = d.join("trace.jsonl");
    let boxes = d.join("boxes.jsonl");
    ok(&["run", "--dataset", s(&data), "--oracle", "--out", s(&trace), "--boxes", s(&boxes)]);
    let records = read_trace(&trace);
    assert_eq!(records.len(), 10);
    for (r, a) in records.iter().zip(&annotations) {
        assert_eq!(r.image_id, a.image_id);
        assert_eq!(r.reading, a.reading);
    }

    let eval = d.join("eval.json");
    ok(&["eval", "--mode", "read", "--trace", s(&trace), "--dataset", s(&data), "--out", s(&eval)]);
    let e: ReportInput = serde_json::from_str(&fs::read_to_string(&eval).unwrap()).unwrap();
    assert_eq!(e.recognition[0].1.counter_accuracy, 1.0);

    let det = d.join("det.json");
    ok(&["eval", "--mode", "detect", "--trace", s(&trace), "--trace", s(&boxes), "--dataset", s(&data), "--iou", "0.7", "--out", s(&det)]);
    let e: ReportInput = serde_json::from_str(&fs::read_to_string(&det).unwrap()).unwrap();
    assert_eq!(e.detection.len(), 2);
    for (_, d) in &e.detection {
        assert_eq!(d.f_measure, 1.0);
        assert_eq!(d.iou_threshold, 0.7);
    }

    // several runs give a mean ± std summary, with a baseline a t-test
    let runs: Vec<String> = (0..3)
        .map(|i| {
            let p = d.join(format!("run{i}.jsonl"));
            ok(&["run", "--dataset", s(&data), "--oracle", "--recognizer", "crnn", "--out", s(&p)]);
            p.to_str().unwrap().to_string()
        })
        .collect();
    let summary = d.join("summary.json");
    let mut args = vec!["eval", "--mode", "read", "--dataset", s(&data), "--name", "crnn", "--out", s(&summary)];
    for r in &runs {
        args.extend(["--trace", r.as_str()]);
    }
    for r in &runs {
        args.extend(["--baseline", r.as_str()]);
    }
    ok(&args);
    let e: ReportInput = serde_json::from_str(&fs::read_to_string(&summary).unwrap()).unwrap();
    let (name, sum) = &e.summaries[0];
    assert_eq!(name, "crnn");
    assert_eq!(sum.runs.len(), 3);
    assert_eq!(sum.mean.counter_accuracy, 1.0);
    assert!(!sum.t_test.as_ref().unwrap().counter_accuracy.significant());

    for (fmt, needle) in [("text", "100.00"), ("json", "\"f_measure\": 100.0"), ("csv", "kind,name")] {
        let out = d.join(format!("report.{fmt}"));
        ok(&["report", s(&eval), s(&det), s(&summary), "--format", fmt, "--out", s(&out)]);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.contains(needle), "{fmt}: {text}");
    }
}

#[test]
fn run_records_missing_tensors_and_continues() {
    let (dir, annotations) = toy_dataset(2);
    let data = dir.path().join("data");
    let tensors = dir.path().join("tensors");
    fs::create_dir_all(&tensors).unwrap();
    let trace = dir.path().join("trace.jsonl");
    ok(&["run", "--dataset", s(&data), "--tensors", s(&tensors), "--out", s(&trace)]);
    let records = read_trace(&trace);
    assert_eq!(records.len(), 2);
    for (r, a) in records.iter().zip(&annotations) {
        assert_eq!(r.image_id, a.image_id);
        assert!(r.status.is_none());
        assert!(r.error.as_deref().unwrap().contains("no Detector output"), "{r:?}");
    }
}

#[test]
fn run_on_empty_split_writes_empty_trace() {
    let (dir, _) = toy_dataset(1);
    let data = dir.path().join("data");
    let split = dir.path().join("split.json");
    fs::write(&split, r#"{"train":[],"validation":[],"test":[],"seed":0}"#).unwrap();
    let trace = dir.path().join("trace.jsonl");
    ok(&["run", "--dataset", s(&data), "--oracle", "--split", s(&split), "--out", s(&trace)]);
    assert_eq!(fs::read_to_string(&trace).unwrap(), "");
}

#[test]
fn workers_env_is_honoured() {
    let (dir, _) = toy_dataset(2);
    let data = dir.path().join("data");
    let out = Command::new(env!("CARGO_BIN_EXE_amr"))
        .args(["validate", s(&data)])
        .env("AMR_WORKERS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("worker count"));
    let out = Command::new(env!("CARGO_BIN_EXE_amr"))
        .args(["validate", s(&data)])
        .env("AMR_WORKERS", "2")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn geometry_violation_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let a = &synthetic_annotations(1, 8)[0];
    write_dataset(&data, std::slice::from_ref(a));
    // push the counter past the right edge of the image
    let shifted = MeterAnnotation::new(
        &a.image_id,
        &a.camera,
        BBox::new(a.counter.x + 400.0, a.counter.y, a.counter.w, a.counter.h).unwrap(),
        a.digits
            .iter()
            .map(|d| BBox::new(d.x + 400.0, d.y, d.w, d.h).unwrap())
            .collect(),
        a.reading.clone(),
    )
    .unwrap();
    fs::write(data.join(format!("{}.txt", a.image_id)), serialize_annotation(&shifted)).unwrap();
    let out = amr(&["validate", s(&data)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("extends past"));
}
