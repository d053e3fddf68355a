//! Raster helpers shared by augmentation and the pipeline. Pixel centers sit
//! at integer coordinates; sampling outside the raster replicates the edge.

use image::{Rgb, RgbImage};

use crate::dataset::BBox;

fn to_channel(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Bilinear sample at `(x, y)` with edge replication.
pub fn sample_bilinear(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = img.dimensions();
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;
    let x = x.clamp(0.0, max_x);
    let y = y.clamp(0.0, max_y);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as u32, y0 as u32);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let p00 = img.get_pixel(x0, y0).0;
    let p10 = img.get_pixel(x1, y0).0;
    let p01 = img.get_pixel(x0, y1).0;
    let p11 = img.get_pixel(x1, y1).0;
    let mut out = [0.0; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Resamples `region` of `img` (which may extend past the raster) to
/// `out_w x out_h` with bilinear interpolation.
pub fn resize_region(img: &RgbImage, region: &BBox, out_w: u32, out_h: u32) -> RgbImage {
    let sx = region.w / out_w as f64;
    let sy = region.h / out_h as f64;
    RgbImage::from_fn(out_w, out_h, |i, j| {
        let x = region.x + (i as f64 + 0.5) * sx - 0.5;
        let y = region.y + (j as f64 + 0.5) * sy - 0.5;
        let v = sample_bilinear(img, x, y);
        Rgb([to_channel(v[0]), to_channel(v[1]), to_channel(v[2])])
    })
}

/// Pastes `src` region of `from` into the `dst` region of `into`, resampling
/// bilinearly. Destination pixels whose centers fall inside `dst` are written.
pub fn paste_resized(from: &RgbImage, src: &BBox, into: &mut RgbImage, dst: &BBox) {
    let (w, h) = into.dimensions();
    let i0 = (dst.x - 0.5).ceil().max(0.0) as u32;
    let j0 = (dst.y - 0.5).ceil().max(0.0) as u32;
    let i1 = ((dst.x_max() - 0.5).ceil().max(0.0) as u32).min(w);
    let j1 = ((dst.y_max() - 0.5).ceil().max(0.0) as u32).min(h);
    let sx = src.w / dst.w;
    let sy = src.h / dst.h;
    for j in j0..j1 {
        for i in i0..i1 {
            let x = src.x + (i as f64 + 0.5 - dst.x) * sx - 0.5;
            let y = src.y + (j as f64 + 0.5 - dst.y) * sy - 0.5;
            let v = sample_bilinear(from, x, y);
            into.put_pixel(i, j, Rgb([to_channel(v[0]), to_channel(v[1]), to_channel(v[2])]));
        }
    }
}

/// Linear per-channel scaling, clamped to the channel range.
pub fn scale_brightness(img: &RgbImage, factor: f64) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = to_channel(*c as f64 * factor);
        }
    }
    out
}

/// Rotates counter-clockwise by `degrees` about `(cx, cy)` (continuous
/// coordinates, top-left corner of the raster at 0) with edge replication.
pub fn rotate_about(img: &RgbImage, cx: f64, cy: f64, degrees: f64) -> RgbImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    RgbImage::from_fn(img.width(), img.height(), |i, j| {
        // inverse map: output point rotated back by -angle (y axis points down)
        let dx = i as f64 + 0.5 - cx;
        let dy = j as f64 + 0.5 - cy;
        let x = cos * dx - sin * dy + cx - 0.5;
        let y = sin * dx + cos * dy + cy - 0.5;
        let v = sample_bilinear(img, x, y);
        Rgb([to_channel(v[0]), to_channel(v[1]), to_channel(v[2])])
    })
}

/// Maps a point through the forward rotation used by [`rotate_about`].
pub fn rotate_point(x: f64, y: f64, cx: f64, cy: f64, degrees: f64) -> (f64, f64) {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let dx = x - cx;
    let dy = y - cy;
    (cos * dx + sin * dy + cx, -sin * dx + cos * dy + cy)
}
