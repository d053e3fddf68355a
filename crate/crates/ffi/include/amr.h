#ifndef AMR_H
#define AMR_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AmrStatus {
  AMR_STATUS_OK = 0,
  AMR_STATUS_NULL_POINTER = 1,
  AMR_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed `.amrt` stream or annotation text.
   */
  AMR_STATUS_FORMAT = 3,
  AMR_STATUS_SHAPE = 4,
  AMR_STATUS_IO = 5,
  /**
   * The statistic is undefined for this input (e.g. zero variance).
   */
  AMR_STATUS_DEGENERATE = 6,
  AMR_STATUS_PANIC = 7,
} AmrStatus;

typedef enum AmrCrnetMode {
  AMR_CRNET_MODE_FIXED5 = 0,
  AMR_CRNET_MODE_VARIABLE = 1,
} AmrCrnetMode;

typedef enum AmrReadingStatus {
  AMR_READING_STATUS_ACCEPTED = 0,
  AMR_READING_STATUS_REJECTED_TOO_FEW = 1,
  AMR_READING_STATUS_NEGATIVE_NO_COUNTER = 2,
} AmrReadingStatus;

/**
 * Opaque parsed annotation.
 */
typedef struct AmrAnnotation AmrAnnotation;

/**
 * Opaque grid layout (grid size, anchors, classes, input size).
 */
typedef struct AmrGridSpec AmrGridSpec;

/**
 * Opaque decoded reading.
 */
typedef struct AmrReading AmrReading;

/**
 * Opaque `.amrt` tensor.
 */
typedef struct AmrTensor AmrTensor;

typedef struct AmrBox {
  double x;
  double y;
  double w;
  double h;
} AmrBox;

typedef struct AmrDetection {
  struct AmrBox bbox;
  double confidence;
  uint32_t class_id;
} AmrDetection;

typedef struct AmrPairedT {
  double t;
  uint32_t dof;
  double mean_difference;
  double p_value;
} AmrPairedT;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *amr_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void amr_string_free(char *s);

/**
 * Releases a byte buffer returned by [`amr_tensor_encode`].
 *
 * # Safety
 * `p`/`len` must be exactly what this library returned.
 */
void amr_bytes_free(uint8_t *p, size_t len);

/**
 * Builds a tensor from `ndim` dims and `len` row-major values.
 *
 * # Safety
 * `dims` must point to `ndim` values, `data` to `len` values.
 */
enum AmrStatus amr_tensor_new(const size_t *dims,
                              size_t ndim,
                              const float *data,
                              size_t len,
                              struct AmrTensor **out_tensor);

/**
 * Parses an in-memory `.amrt` stream.
 *
 * # Safety
 * `bytes` must point to `len` readable bytes.
 */
enum AmrStatus amr_tensor_decode(const uint8_t *bytes, size_t len, struct AmrTensor **out_tensor);

/**
 * Reads a `.amrt` file.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum AmrStatus amr_tensor_read_file(const char *path, struct AmrTensor **out_tensor);

/**
 * Serializes to a `.amrt` stream; free with [`amr_bytes_free`].
 *
 * # Safety
 * `t` must be a live tensor handle.
 */
enum AmrStatus amr_tensor_encode(const struct AmrTensor *t, uint8_t **out_bytes, size_t *out_len);

/**
 * Writes a `.amrt` file.
 *
 * # Safety
 * `t` must be a live tensor handle, `path` a NUL-terminated string.
 */
enum AmrStatus amr_tensor_write_file(const struct AmrTensor *t, const char *path);

/**
 * Number of dimensions, 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
size_t amr_tensor_ndim(const struct AmrTensor *t);

/**
 * Dimension array (length [`amr_tensor_ndim`]), borrowed from the handle.
 *
 * # Safety
 * `t` must be null or a live tensor handle.
 */
const size_t *amr_tensor_dims(const struct AmrTensor *t);

/**
 * Row-major values, borrowed from the handle; `out_len` receives the count.
 *
 * # Safety
 * `t` must be null or a live tensor handle; `out_len` may be null.
 */
const float *amr_tensor_data(const struct AmrTensor *t, size_t *out_len);

/**
 * # Safety
 * `t` must be null or a handle from this library, not yet freed.
 */
void amr_tensor_free(struct AmrTensor *t);

/**
 * Filters in the last convolution of a head with `classes` classes and
 * `anchors` anchors.
 */
size_t amr_filter_count(size_t classes, size_t anchors);

/**
 * # Safety
 * `a`, `b` and `out_iou` must be valid pointers.
 */
enum AmrStatus amr_iou(const struct AmrBox *a, const struct AmrBox *b, double *out_iou);

/**
 * Grows `b` by `margin` about its center and clamps it to the image.
 *
 * # Safety
 * `b` and `out_box` must be valid pointers.
 */
enum AmrStatus amr_expand_margin(const struct AmrBox *b,
                                 double margin,
                                 double image_w,
                                 double image_h,
                                 struct AmrBox *out_box);

/**
 * 13x13 single-class counter detector layout.
 */
struct AmrGridSpec *amr_grid_spec_detector(void);

/**
 * 50x13 ten-class CR-NET layout.
 */
struct AmrGridSpec *amr_grid_spec_crnet(void);

/**
 * Custom layout; `anchors` holds `num_anchors` (width, height) pairs in grid
 * cells.
 *
 * # Safety
 * `anchors` must point to `2 * num_anchors` values.
 */
enum AmrStatus amr_grid_spec_new(size_t grid_w,
                                 size_t grid_h,
                                 const double *anchors,
                                 size_t num_anchors,
                                 size_t num_classes,
                                 uint32_t input_w,
                                 uint32_t input_h,
                                 struct AmrGridSpec **out_spec);

/**
 * # Safety
 * `s` must be null or a handle from this library, not yet freed.
 */
void amr_grid_spec_free(struct AmrGridSpec *s);

/**
 * Decodes a grid head into boxes (in network-input pixels) scoring at least
 * `threshold`. When `nms_iou` is positive, per-class NMS is applied at that
 * IoU. Free the result with [`amr_detections_free`].
 *
 * # Safety
 * `t` and `spec` must be live handles; the out-pointers must be valid.
 */
enum AmrStatus amr_decode_grid(const struct AmrTensor *t,
                               const struct AmrGridSpec *spec,
                               double threshold,
                               double nms_iou,
                               struct AmrDetection **out_boxes,
                               size_t *out_len);

/**
 * Per-class non-maximum suppression; survivors come back in priority order.
 *
 * # Safety
 * `boxes` must point to `len` detections; the out-pointers must be valid.
 */
enum AmrStatus amr_nms(const struct AmrDetection *boxes,
                       size_t len,
                       double iou_threshold,
                       struct AmrDetection **out_boxes,
                       size_t *out_len);

/**
 * # Safety
 * `p`/`len` must be exactly what this library returned.
 */
void amr_detections_free(struct AmrDetection *p, size_t len);

/**
 * CR-NET reading from a digit-detector head.
 *
 * # Safety
 * `t` and `spec` must be live handles; `out_reading` must be valid.
 */
enum AmrStatus amr_decode_crnet(const struct AmrTensor *t,
                                const struct AmrGridSpec *spec,
                                enum AmrCrnetMode mode,
                                double threshold,
                                double nms_iou,
                                struct AmrReading **out_reading);

/**
 * Multi-task reading from a `[5, 10]` tensor of per-position logits.
 *
 * # Safety
 * `t` must be a live handle; `out_reading` must be valid.
 */
enum AmrStatus amr_decode_multitask(const struct AmrTensor *t, struct AmrReading **out_reading);

/**
 * Greedy CTC reading from a `[frames, 11]` probability tensor.
 *
 * # Safety
 * `t` must be a live handle; `out_reading` must be valid.
 */
enum AmrStatus amr_decode_ctc(const struct AmrTensor *t, struct AmrReading **out_reading);

/**
 * The reading as a NUL-terminated digit string, borrowed from the handle.
 *
 * # Safety
 * `r` must be null or a live reading handle.
 */
const char *amr_reading_text(const struct AmrReading *r);

/**
 * # Safety
 * `r` must be a live reading handle.
 */
enum AmrReadingStatus amr_reading_status(const struct AmrReading *r);

/**
 * Per-digit confidences, borrowed from the handle.
 *
 * # Safety
 * `r` must be null or a live reading handle; `out_len` may be null.
 */
const double *amr_reading_confidences(const struct AmrReading *r, size_t *out_len);

/**
 * # Safety
 * `r` must be null or a handle from this library, not yet freed.
 */
void amr_reading_free(struct AmrReading *r);

/**
 * Parses annotation text.
 *
 * # Safety
 * `image_id` and `text` must be NUL-terminated strings.
 */
enum AmrStatus amr_annotation_parse(const char *image_id,
                                    const char *text,
                                    struct AmrAnnotation **out_annotation);

/**
 * Canonical annotation text; free with [`amr_string_free`].
 *
 * # Safety
 * `a` must be a live handle; `out_text` must be valid.
 */
enum AmrStatus amr_annotation_serialize(const struct AmrAnnotation *a, char **out_text);

/**
 * # Safety
 * `a` must be null or a live annotation handle.
 */
const char *amr_annotation_reading(const struct AmrAnnotation *a);

/**
 * # Safety
 * `a` must be null or a live annotation handle.
 */
const char *amr_annotation_camera(const struct AmrAnnotation *a);

/**
 * # Safety
 * `a` and `out_box` must be valid pointers.
 */
enum AmrStatus amr_annotation_counter(const struct AmrAnnotation *a, struct AmrBox *out_box);

/**
 * Digit box `index` (0..5, left to right).
 *
 * # Safety
 * `a` and `out_box` must be valid pointers.
 */
enum AmrStatus amr_annotation_digit(const struct AmrAnnotation *a,
                                    size_t index,
                                    struct AmrBox *out_box);

/**
 * # Safety
 * `a` must be null or a handle from this library, not yet freed.
 */
void amr_annotation_free(struct AmrAnnotation *a);

/**
 * Label for a digit caught between `lower` and `upper` (upper = lower + 1 mod 10).
 *
 * # Safety
 * `out_digit` must be valid.
 */
enum AmrStatus amr_transition_digit(uint8_t lower, uint8_t upper, uint8_t *out_digit);

/**
 * Paired t-test on `second - first` over `n` runs.
 *
 * # Safety
 * `first` and `second` must each point to `n` values.
 */
enum AmrStatus amr_paired_t_test(const double *first,
                                 const double *second,
                                 size_t n,
                                 struct AmrPairedT *out_result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AMR_H */
