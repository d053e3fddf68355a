use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use amr_core::detect::{decode_grid, nms};
use amr_core::tensorio::write_tensor;
use amr_core::{GridSpec, PredictionTensor};
use amr_ffi::*;

fn last_error() -> String {
    let p = amr_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tensor(dims: &[usize], data: &[f32]) -> *mut AmrTensor {
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { amr_tensor_new(dims.as_ptr(), dims.len(), data.as_ptr(), data.len(), &mut t) }, AmrStatus::Ok);
    t
}

/// Detector head with one confident box in cell (row 6, col 4), anchor 2.
fn detector_head() -> PredictionTensor {
    let spec = GridSpec::detector_default();
    let c = spec.channels();
    let mut data = vec![-12.0f32; spec.grid_h * spec.grid_w * c];
    let base = (6 * spec.grid_w + 4) * c + 2 * 6;
    data[base..base + 6].copy_from_slice(&[0.3, -0.2, 0.1, 0.05, 4.0, 6.0]);
    // a weaker, overlapping duplicate from the neighbouring anchor
    let dup = (6 * spec.grid_w + 4) * c + 3 * 6;
    data[dup..dup + 6].copy_from_slice(&[0.3, -0.2, -0.2, -0.2, 2.0, 6.0]);
    PredictionTensor::new(vec![spec.grid_h, spec.grid_w, c], data).unwrap()
}

#[test]
fn tensor_handles_round_trip() {
    let t = tensor(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.5]);
    unsafe {
        assert_eq!(amr_tensor_ndim(t), 2);
        assert_eq!(std::slice::from_raw_parts(amr_tensor_dims(t), 2), &[2, 3]);
        let mut n = 0;
        let data = amr_tensor_data(t, &mut n);
        assert_eq!(std::slice::from_raw_parts(data, n), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.5]);

        let (mut bytes, mut len) = (ptr::null_mut(), 0);
        assert_eq!(amr_tensor_encode(t, &mut bytes, &mut len), AmrStatus::Ok);
        let encoded = std::slice::from_raw_parts(bytes, len).to_vec();
        let core = PredictionTensor::new(vec![2, 3], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
        assert_eq!(encoded, write_tensor(&core));
        let mut back = ptr::null_mut();
        assert_eq!(amr_tensor_decode(bytes, len, &mut back), AmrStatus::Ok);
        amr_bytes_free(bytes, len);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("x.amrt").to_str().unwrap()).unwrap();
        assert_eq!(amr_tensor_write_file(back, path.as_ptr()), AmrStatus::Ok);
        let mut from_file = ptr::null_mut();
        assert_eq!(amr_tensor_read_file(path.as_ptr(), &mut from_file), AmrStatus::Ok);
        assert_eq!(amr_tensor_ndim(from_file), 2);
        amr_tensor_free(from_file);
        amr_tensor_free(back);
        amr_tensor_free(t);
        amr_tensor_free(ptr::null_mut());
    }
}

#[test]
fn tensor_errors_map_to_status() {
    unsafe {
        let mut t = ptr::null_mut();
        assert_eq!(amr_tensor_decode(b"NOPE".as_ptr(), 4, &mut t), AmrStatus::Format);
        assert!(t.is_null());
        let dims = [2usize, 2];
        let data = [1.0f32; 3];
        assert_eq!(amr_tensor_new(dims.as_ptr(), 2, data.as_ptr(), 3, &mut t), AmrStatus::Shape);
        assert!(!last_error().is_empty());
        assert_eq!(amr_tensor_new(ptr::null(), 2, data.as_ptr(), 3, &mut t), AmrStatus::NullPointer);
        let missing = CString::new("/nonexistent/dir/x.amrt").unwrap();
        assert_eq!(amr_tensor_read_file(missing.as_ptr(), &mut t), AmrStatus::Io);
        assert!(last_error().contains("nonexistent"));
    }
}

#[test]
fn geometry_matches_core() {
    assert_eq!(amr_filter_count(1, 5), 30);
    assert_eq!(amr_filter_count(10, 5), 75);
    let a = AmrBox { x: 0.0, y: 0.0, w: 4.0, h: 4.0 };
    let b = AmrBox { x: 2.0, y: 2.0, w: 4.0, h: 4.0 };
    let mut v = 0.0;
    unsafe {
        assert_eq!(amr_iou(&a, &b, &mut v), AmrStatus::Ok);
        assert!((v - 4.0 / 28.0).abs() < 1e-12);
        let bad = AmrBox { x: 0.0, y: 0.0, w: -1.0, h: 1.0 };
        assert_eq!(amr_iou(&a, &bad, &mut v), AmrStatus::InvalidArgument);

        let mut out = AmrBox { x: 0.0, y: 0.0, w: 0.0, h: 0.0 };
        let c = AmrBox { x: 10.0, y: 10.0, w: 100.0, h: 20.0 };
        assert_eq!(amr_expand_margin(&c, 0.2, 1000.0, 1000.0, &mut out), AmrStatus::Ok);
        assert_eq!(out, AmrBox { x: 0.0, y: 8.0, w: 120.0, h: 24.0 });
        assert_eq!(amr_expand_margin(&c, -0.1, 1000.0, 1000.0, &mut out), AmrStatus::InvalidArgument);
    }
}

#[test]
fn grid_decode_matches_core() {
    let head = detector_head();
    let spec = GridSpec::detector_default();
    let want: Vec<_> = nms(&decode_grid(&head, &spec, 0.25).unwrap(), 0.5);
    assert_eq!(want.len(), 1);
    let t = tensor(head.dims(), head.data());
    let s = amr_grid_spec_detector();
    unsafe {
        let (mut p, mut n) = (ptr::null_mut(), 0);
        assert_eq!(amr_decode_grid(t, s, 0.25, 0.0, &mut p, &mut n), AmrStatus::Ok);
        assert_eq!(n, 2, "both anchors decode before suppression");
        let raw = std::slice::from_raw_parts(p, n).to_vec();
        amr_detections_free(p, n);

        let (mut q, mut m) = (ptr::null_mut(), 0);
        assert_eq!(amr_nms(raw.as_ptr(), raw.len(), 0.5, &mut q, &mut m), AmrStatus::Ok);
        let kept = std::slice::from_raw_parts(q, m);
        assert_eq!(m, 1);
        assert_eq!(kept[0].bbox, AmrBox { x: want[0].bbox.x, y: want[0].bbox.y, w: want[0].bbox.w, h: want[0].bbox.h });
        assert_eq!(kept[0].confidence, want[0].confidence);
        amr_detections_free(q, m);

        assert_eq!(amr_decode_grid(t, s, 0.25, 0.5, &mut p, &mut n), AmrStatus::Ok);
        assert_eq!(n, 1);
        amr_detections_free(p, n);

        // the CR-NET layout expects 75 channels, not 30
        let crnet = amr_grid_spec_crnet();
        assert_eq!(amr_decode_grid(t, crnet, 0.25, 0.5, &mut p, &mut n), AmrStatus::Shape);
        amr_grid_spec_free(crnet);
        amr_grid_spec_free(s);
        amr_tensor_free(t);
    }
}

#[test]
fn custom_grid_spec_is_validated() {
    let anchors = [1.0, 1.0, 2.0, 2.0];
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(amr_grid_spec_new(4, 4, anchors.as_ptr(), 2, 3, 128, 128, &mut s), AmrStatus::Ok);
        amr_grid_spec_free(s);
        s = ptr::null_mut();
        assert_eq!(amr_grid_spec_new(0, 4, anchors.as_ptr(), 2, 3, 128, 128, &mut s), AmrStatus::InvalidArgument);
        assert!(s.is_null());
    }
}

#[test]
fn readings_decode_through_handles() {
    unsafe {
        // multi-task: one-hot logits spelling 90210
        let mut logits = vec![0.0f32; 50];
        for (p, d) in [9, 0, 2, 1, 0].into_iter().enumerate() {
            logits[p * 10 + d] = 8.0;
        }
        let t = tensor(&[5, 10], &logits);
        let mut r = ptr::null_mut();
        assert_eq!(amr_decode_multitask(t, &mut r), AmrStatus::Ok);
        assert_eq!(CStr::from_ptr(amr_reading_text(r)).to_str().unwrap(), "90210");
        assert_eq!(amr_reading_status(r), AmrReadingStatus::Accepted);
        let mut n = 0;
        let conf = std::slice::from_raw_parts(amr_reading_confidences(r, &mut n), n);
        assert_eq!(n, 5);
        assert!(conf.iter().all(|&c| c > 0.99 && c <= 1.0));
        amr_reading_free(r);
        amr_tensor_free(t);

        // CTC: 7 7 blank 7 3 -> "773"
        let frames = [7usize, 7, 10, 7, 3];
        let mut probs = vec![0.0f32; frames.len() * 11];
        for (f, &l) in frames.iter().enumerate() {
            probs[f * 11 + l] = 1.0;
        }
        let t = tensor(&[frames.len(), 11], &probs);
        assert_eq!(amr_decode_ctc(t, &mut r), AmrStatus::Ok);
        assert_eq!(CStr::from_ptr(amr_reading_text(r)).to_str().unwrap(), "773");
        amr_reading_free(r);

        // a CTC matrix is not a CR-NET head
        let s = amr_grid_spec_crnet();
        assert_eq!(amr_decode_crnet(t, s, AmrCrnetMode::Fixed5, 0.25, 0.5, &mut r), AmrStatus::Shape);
        amr_tensor_free(t);

        // an empty CR-NET head is rejected in fixed mode, empty in variable mode
        let spec = GridSpec::crnet_default();
        let empty = vec![-12.0f32; spec.grid_h * spec.grid_w * spec.channels()];
        let t = tensor(&[spec.grid_h, spec.grid_w, spec.channels()], &empty);
        assert_eq!(amr_decode_crnet(t, s, AmrCrnetMode::Fixed5, 0.25, 0.5, &mut r), AmrStatus::Ok);
        assert_eq!(amr_reading_status(r), AmrReadingStatus::RejectedTooFew);
        amr_reading_free(r);
        assert_eq!(amr_decode_crnet(t, s, AmrCrnetMode::Variable, 0.5, 0.5, &mut r), AmrStatus::Ok);
        assert_eq!(amr_reading_status(r), AmrReadingStatus::Accepted);
        assert_eq!(CStr::from_ptr(amr_reading_text(r)).to_bytes(), b"");
        amr_reading_free(r);
        amr_grid_spec_free(s);
        amr_tensor_free(t);
    }
}

#[test]
fn annotations_round_trip() {
    let text = "camera: cam one\n\
                counter: 100 50 250 60\n\
                reading: 04063\n\
                digit: 105 55 40 50\n\
                digit: 155 55 40 50\n\
                digit: 205 55 40 50\n\
                digit: 255 55 40 50\n\
                digit: 305 55 40 50\n";
    let id = CString::new("m1").unwrap();
    let text = CString::new(text).unwrap();
    unsafe {
        let mut a = ptr::null_mut();
        let status = amr_annotation_parse(id.as_ptr(), text.as_ptr(), &mut a);
        assert_eq!(status, AmrStatus::Ok, "{}", if status == AmrStatus::Ok { String::new() } else { last_error() });
        assert_eq!(CStr::from_ptr(amr_annotation_reading(a)).to_str().unwrap(), "04063");
        assert_eq!(CStr::from_ptr(amr_annotation_camera(a)).to_str().unwrap(), "cam one");
        let mut b = AmrBox { x: 0.0, y: 0.0, w: 0.0, h: 0.0 };
        assert_eq!(amr_annotation_counter(a, &mut b), AmrStatus::Ok);
        assert_eq!(b, AmrBox { x: 100.0, y: 50.0, w: 250.0, h: 60.0 });
        assert_eq!(amr_annotation_digit(a, 4, &mut b), AmrStatus::Ok);
        assert_eq!(b.x, 305.0);
        assert_eq!(amr_annotation_digit(a, 5, &mut b), AmrStatus::InvalidArgument);

        let mut s = ptr::null_mut();
        assert_eq!(amr_annotation_serialize(a, &mut s), AmrStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(amr_annotation_parse(id.as_ptr(), s, &mut again), AmrStatus::Ok);
        assert_eq!(CStr::from_ptr(amr_annotation_reading(again)).to_str().unwrap(), "04063");
        amr_string_free(s);
        amr_annotation_free(again);
        amr_annotation_free(a);

        let broken = CString::new("reading: 12\n").unwrap();
        assert_eq!(amr_annotation_parse(id.as_ptr(), broken.as_ptr(), &mut a), AmrStatus::Format);
    }
}

#[test]
fn transition_digits_and_t_test() {
    let mut d = 0u8;
    unsafe {
        // a 9 rolling over to 0 stays 9
        assert_eq!(amr_transition_digit(9, 0, &mut d), AmrStatus::Ok);
        assert_eq!(d, 9);
        assert_eq!(amr_transition_digit(3, 4, &mut d), AmrStatus::Ok);
        assert_eq!(d, 3);
        assert_eq!(amr_transition_digit(3, 5, &mut d), AmrStatus::InvalidArgument);

        let first = [0.90, 0.91, 0.92];
        let second = [0.92, 0.94, 0.93];
        let mut r = AmrPairedT { t: 0.0, dof: 0, mean_difference: 0.0, p_value: 0.0 };
        assert_eq!(amr_paired_t_test(first.as_ptr(), second.as_ptr(), 3, &mut r), AmrStatus::Ok);
        // d = (0.02, 0.03, 0.01): mean 0.02, sd 0.01, t = 0.02 / (0.01 / sqrt 3)
        assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-9, "{r:?}");
        assert_eq!(r.dof, 2);
        let same = [0.5, 0.75, 1.0];
        let shifted = [0.75, 1.0, 1.25];
        assert_eq!(amr_paired_t_test(same.as_ptr(), shifted.as_ptr(), 3, &mut r), AmrStatus::Degenerate);
        assert_eq!(amr_paired_t_test(same.as_ptr(), shifted.as_ptr(), 1, &mut r), AmrStatus::InvalidArgument);
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/amr.h");
    assert!(std::path::Path::new(header).exists(), "{header} was not generated");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"amr.h\"\n\
         int main(void) { AmrTensor *t = 0; AmrStatus s = amr_iou(0, 0, 0);\n\
         amr_tensor_free(t); return s == AMR_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I", include])
            .arg(&src)
            .output()
        else {
            eprintln!("{compiler} not available; skipping");
            continue;
        };
        assert!(out.status.success(), "{compiler}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
