//! C ABI over `amr-core`.
//!
//! Every fallible call returns an [`AmrStatus`]; on failure the message is
//! available from [`amr_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that must be released with their `_free`
//! function. Arrays returned through out-pointers are owned by the caller and
//! released with the matching `_free` function, passing back the same length.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use amr_core::dataset::{self, DatasetError};
use amr_core::detect::{self, Anchor, DetectError};
use amr_core::metrics::{self, MetricsError};
use amr_core::recognize::{self, CrnetMode, CrnetOptions, CtcFrameMatrix, RecognizeError};
use amr_core::tensorio::{self, TensorError};
use amr_core::{BBox, DecodedBox, GridSpec, MeterAnnotation, PredictionTensor, ReadingResult, ReadingStatus};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Malformed `.amrt` stream or annotation text.
    Format = 3,
    Shape = 4,
    Io = 5,
    /// The statistic is undefined for this input (e.g. zero variance).
    Degenerate = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmrBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmrDetection {
    pub bbox: AmrBox,
    pub confidence: f64,
    pub class_id: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmrReadingStatus {
    Accepted = 0,
    RejectedTooFew = 1,
    NegativeNoCounter = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmrCrnetMode {
    Fixed5 = 0,
    Variable = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmrPairedT {
    pub t: f64,
    pub dof: u32,
    pub mean_difference: f64,
    pub p_value: f64,
}

/// Opaque `.amrt` tensor.
pub struct AmrTensor(PredictionTensor);

/// Opaque grid layout (grid size, anchors, classes, input size).
pub struct AmrGridSpec(GridSpec);

/// Opaque decoded reading.
pub struct AmrReading {
    text: CString,
    confidences: Vec<f64>,
    status: AmrReadingStatus,
}

/// Opaque parsed annotation.
pub struct AmrAnnotation {
    inner: MeterAnnotation,
    reading: CString,
    camera: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(AmrStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(AmrStatus::NullPointer, format!("{what} is null"))
    }

    fn arg(msg: impl Into<String>) -> Self {
        Failure(AmrStatus::InvalidArgument, msg.into())
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        let status = match e {
            TensorError::InvalidShape(_) => AmrStatus::Shape,
            _ => AmrStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<DetectError> for Failure {
    fn from(e: DetectError) -> Self {
        let status = match e {
            DetectError::ShapeMismatch(_) => AmrStatus::Shape,
            _ => AmrStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<RecognizeError> for Failure {
    fn from(e: RecognizeError) -> Self {
        match e {
            RecognizeError::Detect(d) => d.into(),
            RecognizeError::ShapeMismatch(_) => Failure(AmrStatus::Shape, e.to_string()),
            _ => Failure(AmrStatus::InvalidArgument, e.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let status = match e {
            DatasetError::Io { .. } => AmrStatus::Io,
            DatasetError::InvalidPair { .. } | DatasetError::InvalidRatios(_) => AmrStatus::InvalidArgument,
            _ => AmrStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        let status = match e {
            MetricsError::ZeroVariance => AmrStatus::Degenerate,
            _ => AmrStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AmrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmrStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AmrStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::arg(format!("{what} is not valid UTF-8")))
}

fn to_bbox(b: &AmrBox) -> Result<BBox, Failure> {
    BBox::new(b.x, b.y, b.w, b.h).map_err(|e| Failure::arg(e.to_string()))
}

fn from_bbox(b: &BBox) -> AmrBox {
    AmrBox {
        x: b.x,
        y: b.y,
        w: b.w,
        h: b.h,
    }
}

fn from_decoded(d: &DecodedBox) -> AmrDetection {
    AmrDetection {
        bbox: from_bbox(&d.bbox),
        confidence: d.confidence,
        class_id: d.class_id as u32,
    }
}

/// Hands a vector to the caller as pointer + length.
fn export<T>(v: Vec<T>, out_ptr: &mut *mut T, out_len: &mut usize) {
    let boxed = v.into_boxed_slice();
    *out_len = boxed.len();
    *out_ptr = if boxed.is_empty() {
        ptr::null_mut()
    } else {
        Box::into_raw(boxed) as *mut T
    };
}

unsafe fn reclaim<T>(p: *mut T, len: usize) {
    if !p.is_null() && len > 0 {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)));
    }
}

fn reading_handle(r: ReadingResult) -> Box<AmrReading> {
    Box::new(AmrReading {
        // readings are digit strings, never contain NUL
        text: CString::new(r.reading).unwrap_or_default(),
        confidences: r.digit_confidences,
        status: match r.status {
            ReadingStatus::Accepted => AmrReadingStatus::Accepted,
            ReadingStatus::RejectedTooFew => AmrReadingStatus::RejectedTooFew,
            ReadingStatus::NegativeNoCounter => AmrReadingStatus::NegativeNoCounter,
        },
    })
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn amr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn amr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Releases a byte buffer returned by [`amr_tensor_encode`].
///
/// # Safety
/// `p`/`len` must be exactly what this library returned.
#[no_mangle]
pub unsafe extern "C" fn amr_bytes_free(p: *mut u8, len: usize) {
    reclaim(p, len);
}

// --- tensors -------------------------------------------------------------

/// Builds a tensor from `ndim` dims and `len` row-major values.
///
/// # Safety
/// `dims` must point to `ndim` values, `data` to `len` values.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_new(
    dims: *const usize,
    ndim: usize,
    data: *const f32,
    len: usize,
    out_tensor: *mut *mut AmrTensor,
) -> AmrStatus {
    guard(|| {
        let out_tensor = out(out_tensor, "out_tensor")?;
        let dims = slice(dims, ndim, "dims")?.to_vec();
        let data = slice(data, len, "data")?.to_vec();
        let t = PredictionTensor::new(dims, data)?;
        *out_tensor = Box::into_raw(Box::new(AmrTensor(t)));
        Ok(())
    })
}

/// Parses an in-memory `.amrt` stream.
///
/// # Safety
/// `bytes` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_decode(bytes: *const u8, len: usize, out_tensor: *mut *mut AmrTensor) -> AmrStatus {
    guard(|| {
        let out_tensor = out(out_tensor, "out_tensor")?;
        let t = tensorio::read_tensor(slice(bytes, len, "bytes")?)?;
        *out_tensor = Box::into_raw(Box::new(AmrTensor(t)));
        Ok(())
    })
}

/// Reads a `.amrt` file.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_read_file(path: *const c_char, out_tensor: *mut *mut AmrTensor) -> AmrStatus {
    guard(|| {
        let out_tensor = out(out_tensor, "out_tensor")?;
        let path = string(path, "path")?;
        let bytes = std::fs::read(path).map_err(|e| Failure(AmrStatus::Io, format!("{path}: {e}")))?;
        let t = tensorio::read_tensor(&bytes)?;
        *out_tensor = Box::into_raw(Box::new(AmrTensor(t)));
        Ok(())
    })
}

/// Serializes to a `.amrt` stream; free with [`amr_bytes_free`].
///
/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_encode(t: *const AmrTensor, out_bytes: *mut *mut u8, out_len: *mut usize) -> AmrStatus {
    guard(|| {
        let t = reference(t, "tensor")?;
        let (p, l) = (out(out_bytes, "out_bytes")?, out(out_len, "out_len")?);
        export(tensorio::write_tensor(&t.0), p, l);
        Ok(())
    })
}

/// Writes a `.amrt` file.
///
/// # Safety
/// `t` must be a live tensor handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_write_file(t: *const AmrTensor, path: *const c_char) -> AmrStatus {
    guard(|| {
        let t = reference(t, "tensor")?;
        let path = string(path, "path")?;
        tensorio::write_tensor_file(path.as_ref(), &t.0).map_err(|e| Failure(AmrStatus::Io, format!("{path}: {e}")))
    })
}

/// Number of dimensions, 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_ndim(t: *const AmrTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.dims().len())
}

/// Dimension array (length [`amr_tensor_ndim`]), borrowed from the handle.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_dims(t: *const AmrTensor) -> *const usize {
    t.as_ref().map_or(ptr::null(), |t| t.0.dims().as_ptr())
}

/// Row-major values, borrowed from the handle; `out_len` receives the count.
///
/// # Safety
/// `t` must be null or a live tensor handle; `out_len` may be null.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_data(t: *const AmrTensor, out_len: *mut usize) -> *const f32 {
    let Some(t) = t.as_ref() else {
        return ptr::null();
    };
    if let Some(l) = out_len.as_mut() {
        *l = t.0.numel();
    }
    t.0.data().as_ptr()
}

/// # Safety
/// `t` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn amr_tensor_free(t: *mut AmrTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

// --- geometry and detection ------------------------------------------------

/// Filters in the last convolution of a head with `classes` classes and
/// `anchors` anchors.
#[no_mangle]
pub extern "C" fn amr_filter_count(classes: usize, anchors: usize) -> usize {
    detect::filter_count(classes, anchors)
}

/// # Safety
/// `a`, `b` and `out_iou` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn amr_iou(a: *const AmrBox, b: *const AmrBox, out_iou: *mut f64) -> AmrStatus {
    guard(|| {
        let a = to_bbox(reference(a, "a")?)?;
        let b = to_bbox(reference(b, "b")?)?;
        *out(out_iou, "out_iou")? = detect::iou(&a, &b);
        Ok(())
    })
}

/// Grows `b` by `margin` about its center and clamps it to the image.
///
/// # Safety
/// `b` and `out_box` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn amr_expand_margin(
    b: *const AmrBox,
    margin: f64,
    image_w: f64,
    image_h: f64,
    out_box: *mut AmrBox,
) -> AmrStatus {
    guard(|| {
        let b = to_bbox(reference(b, "box")?)?;
        if !(margin.is_finite() && margin >= 0.0) {
            return Err(Failure::arg(format!("margin {margin} must be finite and >= 0")));
        }
        if !(image_w > 0.0 && image_h > 0.0 && image_w.is_finite() && image_h.is_finite()) {
            return Err(Failure::arg(format!("image size {image_w}x{image_h} must be positive")));
        }
        *out(out_box, "out_box")? = from_bbox(&detect::expand_margin(&b, margin, image_w, image_h));
        Ok(())
    })
}

/// 13x13 single-class counter detector layout.
#[no_mangle]
pub extern "C" fn amr_grid_spec_detector() -> *mut AmrGridSpec {
    Box::into_raw(Box::new(AmrGridSpec(GridSpec::detector_default())))
}

/// 50x13 ten-class CR-NET layout.
#[no_mangle]
pub extern "C" fn amr_grid_spec_crnet() -> *mut AmrGridSpec {
    Box::into_raw(Box::new(AmrGridSpec(GridSpec::crnet_default())))
}

/// Custom layout; `anchors` holds `num_anchors` (width, height) pairs in grid
/// cells.
///
/// # Safety
/// `anchors` must point to `2 * num_anchors` values.
#[no_mangle]
pub unsafe extern "C" fn amr_grid_spec_new(
    grid_w: usize,
    grid_h: usize,
    anchors: *const f64,
    num_anchors: usize,
    num_classes: usize,
    input_w: u32,
    input_h: u32,
    out_spec: *mut *mut AmrGridSpec,
) -> AmrStatus {
    guard(|| {
        let out_spec = out(out_spec, "out_spec")?;
        let flat = slice(anchors, num_anchors.checked_mul(2).ok_or_else(|| Failure::arg("too many anchors"))?, "anchors")?;
        let spec = GridSpec {
            grid_w,
            grid_h,
            anchors: flat.chunks_exact(2).map(|p| Anchor { pw: p[0], ph: p[1] }).collect(),
            num_classes,
            input_w,
            input_h,
        };
        spec.validate()?;
        *out_spec = Box::into_raw(Box::new(AmrGridSpec(spec)));
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn amr_grid_spec_free(s: *mut AmrGridSpec) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Decodes a grid head into boxes (in network-input pixels) scoring at least
/// `threshold`. When `nms_iou` is positive, per-class NMS is applied at that
/// IoU. Free the result with [`amr_detections_free`].
///
/// # Safety
/// `t` and `spec` must be live handles; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn amr_decode_grid(
    t: *const AmrTensor,
    spec: *const AmrGridSpec,
    threshold: f64,
    nms_iou: f64,
    out_boxes: *mut *mut AmrDetection,
    out_len: *mut usize,
) -> AmrStatus {
    guard(|| {
        let (t, spec) = (reference(t, "tensor")?, reference(spec, "spec")?);
        let (p, l) = (out(out_boxes, "out_boxes")?, out(out_len, "out_len")?);
        if nms_iou > 1.0 || nms_iou.is_nan() {
            return Err(Failure::arg(format!("NMS IoU {nms_iou} outside (0, 1]")));
        }
        let mut boxes = detect::decode_grid(&t.0, &spec.0, threshold)?;
        if nms_iou > 0.0 {
            boxes = detect::nms(&boxes, nms_iou);
        }
        export(boxes.iter().map(from_decoded).collect(), p, l);
        Ok(())
    })
}

/// Per-class non-maximum suppression; survivors come back in priority order.
///
/// # Safety
/// `boxes` must point to `len` detections; the out-pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn amr_nms(
    boxes: *const AmrDetection,
    len: usize,
    iou_threshold: f64,
    out_boxes: *mut *mut AmrDetection,
    out_len: *mut usize,
) -> AmrStatus {
    guard(|| {
        let (p, l) = (out(out_boxes, "out_boxes")?, out(out_len, "out_len")?);
        if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
            return Err(Failure::arg(format!("NMS IoU {iou_threshold} outside (0, 1]")));
        }
        let input = slice(boxes, len, "boxes")?
            .iter()
            .map(|d| {
                Ok(DecodedBox {
                    bbox: to_bbox(&d.bbox)?,
                    confidence: d.confidence,
                    class_id: d.class_id as usize,
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        export(detect::nms(&input, iou_threshold).iter().map(from_decoded).collect(), p, l);
        Ok(())
    })
}

/// # Safety
/// `p`/`len` must be exactly what this library returned.
#[no_mangle]
pub unsafe extern "C" fn amr_detections_free(p: *mut AmrDetection, len: usize) {
    reclaim(p, len);
}

// --- recognition -------------------------------------------------------------

/// CR-NET reading from a digit-detector head.
///
/// # Safety
/// `t` and `spec` must be live handles; `out_reading` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amr_decode_crnet(
    t: *const AmrTensor,
    spec: *const AmrGridSpec,
    mode: AmrCrnetMode,
    threshold: f64,
    nms_iou: f64,
    out_reading: *mut *mut AmrReading,
) -> AmrStatus {
    guard(|| {
        let (t, spec) = (reference(t, "tensor")?, reference(spec, "spec")?);
        let out_reading = out(out_reading, "out_reading")?;
        if !(nms_iou > 0.0 && nms_iou <= 1.0) {
            return Err(Failure::arg(format!("NMS IoU {nms_iou} outside (0, 1]")));
        }
        let options = CrnetOptions {
            mode: match mode {
                AmrCrnetMode::Fixed5 => CrnetMode::Fixed5,
                AmrCrnetMode::Variable => CrnetMode::Variable,
            },
            threshold,
            nms_iou,
        };
        let r = recognize::decode_crnet(&t.0, &spec.0, &options)?;
        *out_reading = Box::into_raw(reading_handle(r));
        Ok(())
    })
}

/// Multi-task reading from a `[5, 10]` tensor of per-position logits.
///
/// # Safety
/// `t` must be a live handle; `out_reading` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amr_decode_multitask(t: *const AmrTensor, out_reading: *mut *mut AmrReading) -> AmrStatus {
    guard(|| {
        let t = reference(t, "tensor")?;
        let out_reading = out(out_reading, "out_reading")?;
        let r = recognize::decode_multitask_tensor(&t.0)?;
        *out_reading = Box::into_raw(reading_handle(r));
        Ok(())
    })
}

/// Greedy CTC reading from a `[frames, 11]` probability tensor.
///
/// # Safety
/// `t` must be a live handle; `out_reading` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amr_decode_ctc(t: *const AmrTensor, out_reading: *mut *mut AmrReading) -> AmrStatus {
    guard(|| {
        let t = reference(t, "tensor")?;
        let out_reading = out(out_reading, "out_reading")?;
        let m = CtcFrameMatrix::from_tensor(&t.0)?;
        *out_reading = Box::into_raw(reading_handle(recognize::decode_ctc_greedy(&m)));
        Ok(())
    })
}

/// The reading as a NUL-terminated digit string, borrowed from the handle.
///
/// # Safety
/// `r` must be null or a live reading handle.
#[no_mangle]
pub unsafe extern "C" fn amr_reading_text(r: *const AmrReading) -> *const c_char {
    r.as_ref().map_or(ptr::null(), |r| r.text.as_ptr())
}

/// # Safety
/// `r` must be a live reading handle.
#[no_mangle]
pub unsafe extern "C" fn amr_reading_status(r: *const AmrReading) -> AmrReadingStatus {
    r.as_ref().map_or(AmrReadingStatus::RejectedTooFew, |r| r.status)
}

/// Per-digit confidences, borrowed from the handle.
///
/// # Safety
/// `r` must be null or a live reading handle; `out_len` may be null.
#[no_mangle]
pub unsafe extern "C" fn amr_reading_confidences(r: *const AmrReading, out_len: *mut usize) -> *const f64 {
    let Some(r) = r.as_ref() else {
        return ptr::null();
    };
    if let Some(l) = out_len.as_mut() {
        *l = r.confidences.len();
    }
    r.confidences.as_ptr()
}

/// # Safety
/// `r` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn amr_reading_free(r: *mut AmrReading) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

// --- annotations -------------------------------------------------------------

/// Parses annotation text.
///
/// # Safety
/// `image_id` and `text` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn amr_annotation_parse(
    image_id: *const c_char,
    text: *const c_char,
    out_annotation: *mut *mut AmrAnnotation,
) -> AmrStatus {
    guard(|| {
        let out_annotation = out(out_annotation, "out_annotation")?;
        let a = dataset::parse_annotation(string(image_id, "image_id")?, string(text, "text")?)?;
        let handle = AmrAnnotation {
            reading: CString::new(a.reading.as_str()).unwrap_or_default(),
            camera: CString::new(a.camera.as_str()).map_err(|_| Failure::arg("camera contains NUL"))?,
            inner: a,
        };
        *out_annotation = Box::into_raw(Box::new(handle));
        Ok(())
    })
}

/// Canonical annotation text; free with [`amr_string_free`].
///
/// # Safety
/// `a` must be a live handle; `out_text` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amr_annotation_serialize(a: *const AmrAnnotation, out_text: *mut *mut c_char) -> AmrStatus {
    guard(|| {
        let a = reference(a, "annotation")?;
        let out_text = out(out_text, "out_text")?;
        let text = CString::new(dataset::serialize_annotation(&a.inner))
            .map_err(|_| Failure::arg("annotation text contains NUL"))?;
        *out_text = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `a` must be null or a live annotation handle.
#[no_mangle]
pub unsafe extern "C" fn amr_annotation_reading(a: *const AmrAnnotation) -> *const c_char {
    a.as_ref().map_or(ptr::null(), |a| a.reading.as_ptr())
}

/// # Safety
/// `a` must be null or a live annotation handle.
#[no_mangle]
pub unsafe extern "C" fn amr_annotation_camera(a: *const AmrAnnotation) -> *const c_char {
    a.as_ref().map_or(ptr::null(), |a| a.camera.as_ptr())
}

/// # Safety
/// `a` and `out_box` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn amr_annotation_counter(a: *const AmrAnnotation, out_box: *mut AmrBox) -> AmrStatus {
    guard(|| {
        let a = reference(a, "annotation")?;
        *out(out_box, "out_box")? = from_bbox(&a.inner.counter);
        Ok(())
    })
}

/// Digit box `index` (0..5, left to right).
///
/// # Safety
/// `a` and `out_box` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn amr_annotation_digit(a: *const AmrAnnotation, index: usize, out_box: *mut AmrBox) -> AmrStatus {
    guard(|| {
        let a = reference(a, "annotation")?;
        let d = a
            .inner
            .digits
            .get(index)
            .ok_or_else(|| Failure::arg(format!("digit index {index} out of range")))?;
        *out(out_box, "out_box")? = from_bbox(d);
        Ok(())
    })
}

/// # Safety
/// `a` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn amr_annotation_free(a: *mut AmrAnnotation) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Label for a digit caught between `lower` and `upper` (upper = lower + 1 mod 10).
///
/// # Safety
/// `out_digit` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amr_transition_digit(lower: u8, upper: u8, out_digit: *mut u8) -> AmrStatus {
    guard(|| {
        *out(out_digit, "out_digit")? = dataset::resolve_transition_digit(lower, upper)?;
        Ok(())
    })
}

// --- statistics --------------------------------------------------------------

/// Paired t-test on `second - first` over `n` runs.
///
/// # Safety
/// `first` and `second` must each point to `n` values.
#[no_mangle]
pub unsafe extern "C" fn amr_paired_t_test(
    first: *const f64,
    second: *const f64,
    n: usize,
    out_result: *mut AmrPairedT,
) -> AmrStatus {
    guard(|| {
        let out_result = out(out_result, "out_result")?;
        let r = metrics::paired_t_test(slice(first, n, "first")?, slice(second, n, "second")?)?;
        *out_result = AmrPairedT {
            t: r.t,
            dof: r.dof,
            mean_difference: r.mean_difference,
            p_value: r.p_value,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_error_tracks_failures() {
        let mut v = 0.0;
        let b = AmrBox { x: 0.0, y: 0.0, w: 2.0, h: 2.0 };
        assert_eq!(unsafe { amr_iou(&b, ptr::null(), &mut v) }, AmrStatus::NullPointer);
        let msg = unsafe { CStr::from_ptr(amr_last_error()) }.to_str().unwrap();
        assert!(msg.contains("null"), "{msg}");
        assert_eq!(unsafe { amr_iou(&b, &b, &mut v) }, AmrStatus::Ok);
        assert!(amr_last_error().is_null());
        assert_eq!(v, 1.0);
    }

    #[test]
    fn panics_become_status() {
        assert_eq!(guard(|| panic!("boom")), AmrStatus::Panic);
        let msg = unsafe { CStr::from_ptr(amr_last_error()) }.to_str().unwrap();
        assert!(msg.contains("boom"));
    }

    #[test]
    fn empty_export_is_null() {
        let (mut p, mut l) = (ptr::NonNull::<AmrDetection>::dangling().as_ptr(), 7);
        export(Vec::new(), &mut p, &mut l);
        assert!(p.is_null());
        assert_eq!(l, 0);
        unsafe { amr_detections_free(p, l) };
    }
}
