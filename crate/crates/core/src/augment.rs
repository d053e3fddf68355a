//! Balanced digit-permutation augmentation.
//!
//! New counters are made by rearranging the digits of a source counter. The
//! order is chosen so every digit class ends up equally represented at every
//! position, then brightness, rotation and crop jitter are applied.

use std::collections::HashMap;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BBox, DatasetError, MeterAnnotation, DIGITS_PER_COUNTER};
use crate::imaging;

/// `permutation[p]` is the source digit placed at position `p`.
pub type Permutation = [usize; DIGITS_PER_COUNTER];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("no source annotations")]
    EmptyDataset,
    #[error("empty range: {0}")]
    EmptyRange(String),
    #[error("geometry error: {0}")]
    GeometryError(String),
    #[error("no image for source {0:?}")]
    MissingImage(String),
    #[error("generated annotation is invalid: {0}")]
    InvalidOutput(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn draw(&self, rng: &mut impl Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterRanges {
    /// Multiplicative pixel scaling.
    pub brightness: Interval,
    /// Degrees, counter-clockwise.
    pub rotation_deg: Interval,
    /// Per-side fraction of the counter size; negative grows the crop.
    pub crop: Interval,
}

impl Default for JitterRanges {
    fn default() -> Self {
        JitterRanges {
            brightness: Interval::new(0.5, 2.0),
            rotation_deg: Interval::new(-5.0, 5.0),
            crop: Interval::new(-0.02, 0.08),
        }
    }
}

impl JitterRanges {
    /// No jitter at all.
    pub fn identity() -> Self {
        JitterRanges {
            brightness: Interval::point(1.0),
            rotation_deg: Interval::point(0.0),
            crop: Interval::point(0.0),
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, i) in [
            ("brightness", self.brightness),
            ("rotation", self.rotation_deg),
            ("crop", self.crop),
        ] {
            if !(i.lo.is_finite() && i.hi.is_finite()) || i.lo > i.hi {
                return Err(AugmentError::EmptyRange(format!("{name} [{}, {}]", i.lo, i.hi)));
            }
        }
        if self.brightness.lo <= 0.0 {
            return Err(AugmentError::EmptyRange(format!(
                "brightness must stay positive, got lower bound {}",
                self.brightness.lo
            )));
        }
        if self.crop.lo <= -0.5 || self.crop.hi >= 0.5 {
            return Err(AugmentError::EmptyRange(format!(
                "crop [{}, {}] would remove the whole counter",
                self.crop.lo, self.crop.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropFractions {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl CropFractions {
    pub fn sides(&self) -> [f64; 4] {
        [self.left, self.top, self.right, self.bottom]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedJitter {
    pub brightness: f64,
    pub rotation_deg: f64,
    pub crop: CropFractions,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub source_id: String,
    pub permutation: Permutation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub source_id: String,
    pub permutation: Permutation,
    pub reading: String,
    pub applied: AppliedJitter,
    /// Digit boxes in output-image pixels, left to right.
    pub digits: Vec<BBox>,
    pub image: RgbImage,
}

impl AugmentedSample {
    /// Annotation for the generated image, whose counter spans the whole raster.
    pub fn to_annotation(&self, image_id: &str, camera: &str) -> Result<MeterAnnotation, AugmentError> {
        let (w, h) = self.image.dimensions();
        let counter = BBox::new(0.0, 0.0, w as f64, h as f64)?;
        Ok(MeterAnnotation::new(
            image_id,
            camera,
            counter,
            self.digits.clone(),
            self.reading.clone(),
        )?)
    }
}

/// All 120 permutations of five positions, in lexicographic order.
pub fn all_permutations() -> Vec<Permutation> {
    fn extend(prefix: &mut Vec<usize>, out: &mut Vec<Permutation>) {
        if prefix.len() == DIGITS_PER_COUNTER {
            out.push(prefix.as_slice().try_into().expect("five entries"));
            return;
        }
        for v in 0..DIGITS_PER_COUNTER {
            if !prefix.contains(&v) {
                prefix.push(v);
                extend(prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::with_capacity(120);
    extend(&mut Vec::new(), &mut out);
    out
}

/// `reading[p] = source[permutation[p]]`.
pub fn apply_permutation(source: &str, permutation: &Permutation) -> String {
    let bytes = source.as_bytes();
    permutation.iter().map(|&i| bytes[i] as char).collect()
}

/// Class-by-position counts of a set of readings.
pub fn class_position_counts<'a>(
    readings: impl IntoIterator<Item = &'a str>,
) -> [[u64; DIGITS_PER_COUNTER]; 10] {
    let mut counts = [[0u64; DIGITS_PER_COUNTER]; 10];
    for r in readings {
        for (p, b) in r.bytes().enumerate() {
            counts[(b - b'0') as usize][p] += 1;
        }
    }
    counts
}

/// Chooses `total` (source, permutation) pairs.
///
/// Sources are visited round-robin in a seeded order. For each sample the
/// permutation is the one minimizing, in order: how often this source has
/// already used it, the max-min spread of the class-by-position counts over
/// the classes present in the source, and its lexicographic rank.
pub fn plan_permutations(
    annotations: &[MeterAnnotation],
    total: usize,
    seed: u64,
) -> Result<Vec<PermutationPlan>, AugmentError> {
    if annotations.is_empty() {
        return Err(AugmentError::EmptyDataset);
    }
    if total == 0 {
        return Ok(Vec::new());
    }
    let mut sources: Vec<&MeterAnnotation> = annotations.iter().collect();
    sources.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut order: Vec<usize> = (0..sources.len()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));

    let perms = all_permutations();
    let mut counts = [[0u64; DIGITS_PER_COUNTER]; 10];
    let mut used = vec![[0u32; 120]; sources.len()];
    let mut plans = Vec::with_capacity(total);

    for n in 0..total {
        let si = order[n % order.len()];
        let classes = sources[si].digit_classes();
        let mut present = [false; 10];
        for &c in &classes {
            present[c as usize] = true;
        }

        let mut best: Option<(u32, u64, usize)> = None;
        for (pi, perm) in perms.iter().enumerate() {
            let mut trial = counts;
            for (p, &src) in perm.iter().enumerate() {
                trial[classes[src] as usize][p] += 1;
            }
            let (mut lo, mut hi) = (u64::MAX, 0u64);
            for (c, row) in trial.iter().enumerate() {
                if present[c] {
                    for &v in row {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            let key = (used[si][pi], hi - lo, pi);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
        let pi = best.expect("120 candidates").2;
        used[si][pi] += 1;
        for (p, &src) in perms[pi].iter().enumerate() {
            counts[classes[src] as usize][p] += 1;
        }
        plans.push(PermutationPlan {
            source_id: sources[si].image_id.clone(),
            permutation: perms[pi],
        });
    }
    Ok(plans)
}

/// A raster holding a counter, possibly with surrounding context.
#[derive(Debug, Clone, Copy)]
pub struct CounterCrop<'a> {
    pub image: &'a RgbImage,
    /// Position of the counter's top-left corner inside `image`.
    pub origin: (f64, f64),
}

/// Renders one augmented counter.
///
/// Steps: digit patches are pasted per `permutation` (bilinear resize into
/// each destination box), pixels are scaled by the brightness factor, the
/// raster is rotated about the counter center, then the counter is cropped
/// with per-side offsets. Negative offsets use context pixels from `crop`;
/// where none exist the offset is clamped and the clamped value recorded.
pub fn render_sample(
    annotation: &MeterAnnotation,
    crop: CounterCrop<'_>,
    permutation: &Permutation,
    ranges: &JitterRanges,
    seed: u64,
) -> Result<AugmentedSample, AugmentError> {
    ranges.validate()?;
    let mut seen = [false; DIGITS_PER_COUNTER];
    for &i in permutation {
        if i >= DIGITS_PER_COUNTER || std::mem::replace(&mut seen[i], true) {
            return Err(AugmentError::GeometryError(format!(
                "{permutation:?} is not a permutation"
            )));
        }
    }

    let counter = annotation.counter;
    let (img_w, img_h) = (crop.image.width() as f64, crop.image.height() as f64);
    let (ox, oy) = crop.origin;
    if ox < 0.0 || oy < 0.0 || ox + counter.w > img_w + 1e-9 || oy + counter.h > img_h + 1e-9 {
        return Err(AugmentError::GeometryError(format!(
            "counter {}x{} at ({ox}, {oy}) does not fit the {img_w}x{img_h} crop",
            counter.w, counter.h
        )));
    }
    let local: Vec<BBox> = annotation
        .digits
        .iter()
        .map(|d| BBox {
            x: d.x - counter.x + ox,
            y: d.y - counter.y + oy,
            w: d.w,
            h: d.h,
        })
        .collect();
    if local.len() != DIGITS_PER_COUNTER {
        return Err(AugmentError::GeometryError(format!(
            "expected {DIGITS_PER_COUNTER} digit boxes, got {}",
            local.len()
        )));
    }
    for (i, d) in local.iter().enumerate() {
        let eps = 1e-9;
        if d.x < ox - eps || d.y < oy - eps || d.x_max() > ox + counter.w + eps || d.y_max() > oy + counter.h + eps {
            return Err(AugmentError::GeometryError(format!(
                "digit {i} of {:?} exceeds the counter",
                annotation.image_id
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let brightness = ranges.brightness.draw(&mut rng);
    let rotation_deg = ranges.rotation_deg.draw(&mut rng);
    let mut sides = [0.0; 4];
    for s in sides.iter_mut() {
        *s = ranges.crop.draw(&mut rng);
    }

    let mut work = crop.image.clone();
    for (dst, &src) in permutation.iter().enumerate() {
        if dst != src {
            imaging::paste_resized(crop.image, &local[src], &mut work, &local[dst]);
        }
    }
    if brightness != 1.0 {
        work = imaging::scale_brightness(&work, brightness);
    }
    let (cx, cy) = (ox + counter.w / 2.0, oy + counter.h / 2.0);
    work = imaging::rotate_about(&work, cx, cy, rotation_deg);

    // per side: positive shrinks, negative grows into context
    let [l, t, r, b] = sides;
    let x0 = (ox + l * counter.w).max(0.0);
    let y0 = (oy + t * counter.h).max(0.0);
    let x1 = (ox + counter.w - r * counter.w).min(img_w);
    let y1 = (oy + counter.h - b * counter.h).min(img_h);
    // record the draw itself unless the edge had to be clamped
    let record = |drawn: f64, exact: f64, got: f64, recomputed: f64| if got == exact { drawn } else { recomputed };
    let applied_crop = CropFractions {
        left: record(l, ox + l * counter.w, x0, (x0 - ox) / counter.w),
        top: record(t, oy + t * counter.h, y0, (y0 - oy) / counter.h),
        right: record(r, ox + counter.w - r * counter.w, x1, (ox + counter.w - x1) / counter.w),
        bottom: record(b, oy + counter.h - b * counter.h, y1, (oy + counter.h - y1) / counter.h),
    };
    let rect = BBox::from_corners(x0, y0, x1, y1)
        .map_err(|e| AugmentError::GeometryError(e.to_string()))?;
    let out_w = rect.w.round().max(1.0) as u32;
    let out_h = rect.h.round().max(1.0) as u32;
    let image = imaging::resize_region(&work, &rect, out_w, out_h);

    let sx = out_w as f64 / rect.w;
    let sy = out_h as f64 / rect.h;
    let digits = local
        .iter()
        .map(|d| {
            let corners = [
                (d.x, d.y),
                (d.x_max(), d.y),
                (d.x, d.y_max()),
                (d.x_max(), d.y_max()),
            ]
            .map(|(x, y)| imaging::rotate_point(x, y, cx, cy, rotation_deg));
            let (mut x_lo, mut y_lo) = (f64::INFINITY, f64::INFINITY);
            let (mut x_hi, mut y_hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (x, y) in corners {
                x_lo = x_lo.min(x);
                x_hi = x_hi.max(x);
                y_lo = y_lo.min(y);
                y_hi = y_hi.max(y);
            }
            let moved = BBox {
                x: (x_lo - rect.x) * sx,
                y: (y_lo - rect.y) * sy,
                w: (x_hi - x_lo) * sx,
                h: (y_hi - y_lo) * sy,
            };
            moved.clamp_to(out_w as f64, out_h as f64).unwrap_or(moved)
        })
        .collect();

    Ok(AugmentedSample {
        source_id: annotation.image_id.clone(),
        permutation: *permutation,
        reading: apply_permutation(&annotation.reading, permutation),
        applied: AppliedJitter {
            brightness,
            rotation_deg,
            crop: applied_crop,
        },
        digits,
        image,
    })
}

/// Seed for sample `index` of a set generated with `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(seed ^ splitmix(index))
}

/// Counter raster with enough context for the most negative crop, and the
/// counter's origin inside it.
pub fn extract_counter(
    annotation: &MeterAnnotation,
    image: &RgbImage,
    ranges: &JitterRanges,
) -> (RgbImage, (f64, f64)) {
    let c = annotation.counter;
    let grow = (-ranges.crop.lo).max(0.0);
    let mx = (grow * c.w).ceil() + 1.0;
    let my = (grow * c.h).ceil() + 1.0;
    let x0 = (c.x - mx).floor().max(0.0);
    let y0 = (c.y - my).floor().max(0.0);
    let x1 = (c.x_max() + mx).ceil().min(image.width() as f64);
    let y1 = (c.y_max() + my).ceil().min(image.height() as f64);
    let crop = image::imageops::crop_imm(
        image,
        x0 as u32,
        y0 as u32,
        (x1 - x0).max(1.0) as u32,
        (y1 - y0).max(1.0) as u32,
    )
    .to_image();
    (crop, (c.x - x0, c.y - y0))
}

/// Renders a set of `plans` in parallel. Sample `i` uses
/// [`sample_seed`]`(seed, i)`.
pub fn render_plans(
    annotations: &[MeterAnnotation],
    images: &HashMap<String, RgbImage>,
    plans: &[PermutationPlan],
    first_index: u64,
    ranges: &JitterRanges,
    seed: u64,
) -> Result<Vec<AugmentedSample>, AugmentError> {
    let by_id: HashMap<&str, &MeterAnnotation> =
        annotations.iter().map(|a| (a.image_id.as_str(), a)).collect();
    let mut crops: HashMap<&str, (RgbImage, (f64, f64))> = HashMap::new();
    for plan in plans {
        if crops.contains_key(plan.source_id.as_str()) {
            continue;
        }
        let a = by_id
            .get(plan.source_id.as_str())
            .ok_or_else(|| AugmentError::MissingImage(plan.source_id.clone()))?;
        let img = images
            .get(&plan.source_id)
            .ok_or_else(|| AugmentError::MissingImage(plan.source_id.clone()))?;
        crops.insert(a.image_id.as_str(), extract_counter(a, img, ranges));
    }
    plans
        .par_iter()
        .enumerate()
        .map(|(i, plan)| {
            let a = by_id[plan.source_id.as_str()];
            let (img, origin) = &crops[plan.source_id.as_str()];
            render_sample(
                a,
                CounterCrop {
                    image: img,
                    origin: *origin,
                },
                &plan.permutation,
                ranges,
                sample_seed(seed, first_index + i as u64),
            )
        })
        .collect()
}

/// Plans `total` permutations and renders them. `images` maps image ids to
/// full images.
pub fn generate_set(
    annotations: &[MeterAnnotation],
    images: &HashMap<String, RgbImage>,
    total: usize,
    ranges: &JitterRanges,
    seed: u64,
) -> Result<Vec<AugmentedSample>, AugmentError> {
    ranges.validate()?;
    if total == 0 {
        return Ok(Vec::new());
    }
    let plans = plan_permutations(annotations, total, seed)?;
    render_plans(annotations, images, &plans, 0, ranges, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn annotation(id: &str, reading: &str) -> MeterAnnotation {
        let digits = (0..5)
            .map(|i| BBox::new(4.0 + 12.0 * i as f64, 4.0, 10.0, 16.0).unwrap())
            .collect();
        MeterAnnotation::new(id, "cam", BBox::new(0.0, 0.0, 64.0, 24.0).unwrap(), digits, reading)
            .unwrap()
    }

    fn counter_image() -> RgbImage {
        RgbImage::from_fn(64, 24, |x, y| Rgb([(x * 4) as u8, (y * 10) as u8, ((x ^ y) * 3) as u8]))
    }

    #[test]
    fn permutations_are_lexicographic() {
        let p = all_permutations();
        assert_eq!(p.len(), 120);
        assert_eq!(p[0], [0, 1, 2, 3, 4]);
        assert_eq!(p[1], [0, 1, 2, 4, 3]);
        assert_eq!(p[119], [4, 3, 2, 1, 0]);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn degenerate_source() {
        let plans = plan_permutations(&[annotation("a", "00000")], 7, 3).unwrap();
        assert_eq!(plans.len(), 7);
        let readings: Vec<String> = plans
            .iter()
            .map(|p| apply_permutation("00000", &p.permutation))
            .collect();
        assert!(readings.iter().all(|r| r == "00000"));
        assert_eq!(class_position_counts(readings.iter().map(|s| s.as_str()))[0], [7; 5]);
    }

    #[test]
    fn plan_errors_and_empty() {
        assert_eq!(plan_permutations(&[], 3, 0), Err(AugmentError::EmptyDataset));
        assert!(plan_permutations(&[annotation("a", "01234")], 0, 0).unwrap().is_empty());
    }

    #[test]
    fn identity_render_is_pixel_equal() {
        let a = annotation("a", "01234");
        let img = counter_image();
        let s = render_sample(
            &a,
            CounterCrop { image: &img, origin: (0.0, 0.0) },
            &[0, 1, 2, 3, 4],
            &JitterRanges::identity(),
            9,
        )
        .unwrap();
        assert_eq!(s.image, img);
        assert_eq!(s.digits, a.digits);
        assert_eq!(s.reading, "01234");
    }

    #[test]
    fn brightness_doubles() {
        let a = annotation("a", "01234");
        let img = RgbImage::from_pixel(64, 24, Rgb([128, 100, 60]));
        let ranges = JitterRanges {
            brightness: Interval::point(2.0),
            ..JitterRanges::identity()
        };
        let s = render_sample(&a, CounterCrop { image: &img, origin: (0.0, 0.0) }, &[0, 1, 2, 3, 4], &ranges, 1)
            .unwrap();
        assert!(s.image.pixels().all(|p| p.0 == [255, 200, 120]));
    }

    #[test]
    fn swapped_digits_move_pixels() {
        let a = annotation("a", "01234");
        let img = counter_image();
        let s = render_sample(
            &a,
            CounterCrop { image: &img, origin: (0.0, 0.0) },
            &[1, 0, 2, 3, 4],
            &JitterRanges::identity(),
            0,
        )
        .unwrap();
        assert_eq!(s.reading, "10234");
        // same-size boxes: pasting is an exact pixel copy
        assert_eq!(s.image.get_pixel(4, 4), img.get_pixel(16, 4));
        assert_eq!(s.image.get_pixel(16, 10), img.get_pixel(4, 10));
        assert_eq!(s.image.get_pixel(30, 10), img.get_pixel(30, 10));
    }

    #[test]
    fn bad_inputs() {
        let a = annotation("a", "01234");
        let img = counter_image();
        let crop = CounterCrop { image: &img, origin: (0.0, 0.0) };
        let bad = JitterRanges {
            rotation_deg: Interval::new(5.0, -5.0),
            ..JitterRanges::default()
        };
        assert!(matches!(
            render_sample(&a, crop, &[0, 1, 2, 3, 4], &bad, 0),
            Err(AugmentError::EmptyRange(_))
        ));
        assert!(matches!(
            render_sample(&a, crop, &[0, 0, 2, 3, 4], &JitterRanges::default(), 0),
            Err(AugmentError::GeometryError(_))
        ));
        let small = RgbImage::new(30, 24);
        assert!(matches!(
            render_sample(&a, CounterCrop { image: &small, origin: (0.0, 0.0) }, &[0, 1, 2, 3, 4], &JitterRanges::default(), 0),
            Err(AugmentError::GeometryError(_))
        ));
    }

    #[test]
    fn negative_crop_without_context_is_clamped() {
        let a = annotation("a", "01234");
        let img = counter_image();
        let ranges = JitterRanges {
            crop: Interval::point(-0.02),
            ..JitterRanges::identity()
        };
        let s = render_sample(&a, CounterCrop { image: &img, origin: (0.0, 0.0) }, &[0, 1, 2, 3, 4], &ranges, 0)
            .unwrap();
        assert_eq!(s.applied.crop.sides(), [0.0; 4]);
        assert_eq!(s.image.dimensions(), (64, 24));
    }
}
