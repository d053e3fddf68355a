//! Synthetic data and independent reference implementations shared by the
//! integration tests.
#![allow(dead_code)]

use std::path::Path;

use amr_core::dataset::{serialize_annotation, BBox, MeterAnnotation};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IMAGE_W: u32 = 320;
pub const IMAGE_H: u32 = 240;

/// Random meter annotations on a `IMAGE_W x IMAGE_H` canvas: a counter
/// somewhere in the frame with five evenly spaced digits.
pub fn synthetic_annotations(n: usize, seed: u64) -> Vec<MeterAnnotation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let w: f64 = rng.random_range(140.0..220.0);
            let h = (w / 3.79).round();
            let x = rng.random_range(5.0..(IMAGE_W as f64 - w - 5.0)).round();
            let y = rng.random_range(5.0..(IMAGE_H as f64 - h - 5.0)).round();
            let counter = BBox::new(x, y, w.round(), h).unwrap();
            let slot = counter.w / 5.0;
            let dw = (slot * 0.7).round();
            let dh = (counter.h * 0.8).round();
            let digits = (0..5)
                .map(|p| {
                    let cx = counter.x + slot * (p as f64 + 0.5);
                    BBox::new((cx - dw / 2.0).round(), counter.y + (counter.h - dh) / 2.0, dw, dh).unwrap()
                })
                .collect();
            let reading: String = (0..5)
                .map(|_| char::from_digit(rng.random_range(0..10), 10).unwrap())
                .collect();
            MeterAnnotation::new(format!("meter{i:04}"), "synthetic", counter, digits, reading).unwrap()
        })
        .collect()
}

/// Flat gray image with a darker counter region; the content is irrelevant
/// to oracle runs but keeps the files valid.
pub fn render_image(a: &MeterAnnotation) -> RgbImage {
    let c = a.counter;
    RgbImage::from_fn(IMAGE_W, IMAGE_H, |x, y| {
        if c.contains_point(x as f64, y as f64) {
            Rgb([40, 40, 40])
        } else {
            Rgb([180, 180, 180])
        }
    })
}

/// Writes `<id>.png` and `<id>.txt` for every annotation.
pub fn write_dataset(dir: &Path, annotations: &[MeterAnnotation]) {
    std::fs::create_dir_all(dir).unwrap();
    for a in annotations {
        render_image(a).save(dir.join(format!("{}.png", a.image_id))).unwrap();
        std::fs::write(dir.join(format!("{}.txt", a.image_id)), serialize_annotation(a)).unwrap();
    }
}

/// IoU by counting unit cells covered by integer-aligned boxes.
pub fn iou_unit_cells(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64)) -> f64 {
    let covers = |r: (i64, i64, i64, i64), x: i64, y: i64| x >= r.0 && x < r.0 + r.2 && y >= r.1 && y < r.1 + r.3;
    let x0 = a.0.min(b.0);
    let y0 = a.1.min(b.1);
    let x1 = (a.0 + a.2).max(b.0 + b.2);
    let y1 = (a.1 + a.3).max(b.1 + b.3);
    let (mut inter, mut union) = (0u64, 0u64);
    for y in y0..y1 {
        for x in x0..x1 {
            let (ia, ib) = (covers(a, x, y), covers(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    inter as f64 / union as f64
}

/// Plain corner-form IoU used by the NMS reference.
fn ref_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// O(n^2) NMS on `(x, y, w, h, confidence, class)` tuples. The survivors are
/// exactly the boxes that no higher-ranked surviving box of the same class
/// overlaps at or above the threshold; ranking is confidence desc, then
/// class, x, y, w, h ascending.
pub fn nms_reference(boxes: &[(f64, f64, f64, f64, f64, usize)], thr: f64) -> Vec<usize> {
    let ranks_before = |i: usize, j: usize| {
        let (a, b) = (&boxes[i], &boxes[j]);
        if a.4 != b.4 {
            return a.4 > b.4;
        }
        (a.5, a.0, a.1, a.2, a.3, i) < (b.5, b.0, b.1, b.2, b.3, j)
    };
    let n = boxes.len();
    let mut order: Vec<usize> = (0..n).collect();
    // selection sort through pairwise comparisons only
    for i in 0..n {
        let mut best = i;
        for j in i + 1..n {
            if ranks_before(order[j], order[best]) {
                best = j;
            }
        }
        order.swap(i, best);
    }
    let mut alive = vec![false; n];
    for (pos, &i) in order.iter().enumerate() {
        let bi = [boxes[i].0, boxes[i].1, boxes[i].2, boxes[i].3];
        alive[i] = order[..pos].iter().all(|&j| {
            let bj = [boxes[j].0, boxes[j].1, boxes[j].2, boxes[j].3];
            !alive[j] || boxes[j].5 != boxes[i].5 || ref_iou(&bi, &bj) < thr
        });
    }
    order.into_iter().filter(|&i| alive[i]).collect()
}

/// Greedy CTC reference: best label per frame (first maximum), merge
/// runs, drop blanks. Returns the digits and per-digit run maxima.
pub fn ctc_reference(frames: &[Vec<f64>], blank: usize) -> (String, Vec<f64>) {
    let path: Vec<(usize, f64)> = frames
        .iter()
        .map(|f| {
            let mut best = (0usize, f[0]);
            for (l, &p) in f.iter().enumerate() {
                if p > best.1 {
                    best = (l, p);
                }
            }
            best
        })
        .collect();
    let mut runs: Vec<(usize, f64)> = Vec::new();
    for (label, p) in path {
        match runs.last_mut() {
            Some(last) if last.0 == label => last.1 = last.1.max(p),
            _ => runs.push((label, p)),
        }
    }
    let kept: Vec<(usize, f64)> = runs.into_iter().filter(|r| r.0 != blank).collect();
    (
        kept.iter().map(|r| char::from_digit(r.0 as u32, 10).unwrap()).collect(),
        kept.iter().map(|r| r.1).collect(),
    )
}

/// Best 2-clustering of `(w, h)` boxes under the 1 - IoU distance, found by
/// trying every bipartition: among partitions whose mean centroids reassign
/// every box to its own cluster, the one with the lowest mean distance.
/// Returns the two centroids sorted by area.
pub fn kmeans2_reference(boxes: &[(f64, f64)]) -> [(f64, f64); 2] {
    let iou_wh = |a: (f64, f64), b: (f64, f64)| {
        let inter = a.0.min(b.0) * a.1.min(b.1);
        inter / (a.0 * a.1 + b.0 * b.1 - inter)
    };
    let n = boxes.len();
    assert!((2..=16).contains(&n));
    let mut best: Option<(f64, [(f64, f64); 2])> = None;
    // box 0 always in cluster 0: each bipartition is visited once
    for mask in 0u32..(1 << (n - 1)) {
        let in_one = |i: usize| i > 0 && mask & (1 << (i - 1)) != 0;
        let mut sums = [(0.0, 0.0, 0usize); 2];
        for (i, b) in boxes.iter().enumerate() {
            let s = &mut sums[in_one(i) as usize];
            s.0 += b.0;
            s.1 += b.1;
            s.2 += 1;
        }
        if sums[1].2 == 0 {
            continue;
        }
        let c = [
            (sums[0].0 / sums[0].2 as f64, sums[0].1 / sums[0].2 as f64),
            (sums[1].0 / sums[1].2 as f64, sums[1].1 / sums[1].2 as f64),
        ];
        let stable = boxes.iter().enumerate().all(|(i, &b)| {
            let own = in_one(i) as usize;
            1.0 - iou_wh(b, c[own]) < 1.0 - iou_wh(b, c[1 - own])
        });
        if !stable {
            continue;
        }
        let objective: f64 = boxes
            .iter()
            .enumerate()
            .map(|(i, &b)| 1.0 - iou_wh(b, c[in_one(i) as usize]))
            .sum::<f64>()
            / n as f64;
        if best.is_none_or(|(o, _)| objective < o) {
            let mut c = c;
            c.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
            best = Some((objective, c));
        }
    }
    best.expect("some stable partition").1
}

/// Class-by-position counts of readings, by direct tallying.
pub fn tally(readings: &[String]) -> [[u64; 5]; 10] {
    let mut c = [[0u64; 5]; 10];
    for r in readings {
        for (p, ch) in r.chars().enumerate() {
            c[ch.to_digit(10).unwrap() as usize][p] += 1;
        }
    }
    c
}

/// Every ordering of five positions, by recursive construction.
pub fn enumerate_permutations() -> Vec<[usize; 5]> {
    fn go(prefix: &mut Vec<usize>, out: &mut Vec<[usize; 5]>) {
        if prefix.len() == 5 {
            out.push(prefix.as_slice().try_into().unwrap());
            return;
        }
        for v in 0..5 {
            if !prefix.contains(&v) {
                prefix.push(v);
                go(prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut out);
    out
}
