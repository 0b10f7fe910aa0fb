#ifndef FPSNET_H
#define FPSNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FpsnStatus {
  FPSN_STATUS_OK = 0,
  FPSN_STATUS_NULL_POINTER = 1,
  FPSN_STATUS_INVALID_ARGUMENT = 2,
  FPSN_STATUS_IO = 3,
  FPSN_STATUS_CHECKPOINT = 4,
  FPSN_STATUS_SHAPE = 5,
  FPSN_STATUS_RUNTIME = 6,
  FPSN_STATUS_PANIC = 7,
} FpsnStatus;

/**
 * Opaque model handle.
 */
typedef struct FpsnModel FpsnModel;

/**
 * A detection box in input pixels, centre/size form.
 */
typedef struct FpsnBox {
  double x_c;
  double y_c;
  double w;
  double h;
  double score;
  uint16_t class_id;
} FpsnBox;

/**
 * Aggregate panoptic quality of one prediction.
 */
typedef struct FpsnPq {
  double pq;
  double sq;
  double rq;
  double pq_things;
  double pq_stuff;
} FpsnPq;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *fpsn_version(void);

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *fpsn_last_error(void);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must point to writable storage for one pointer.
 */
enum FpsnStatus fpsn_model_load(const char *path, struct FpsnModel **out);

/**
 * Freshly initialized model from a JSON model configuration (`NULL` or `"{}"` for defaults).
 *
 * # Safety
 * `config_json` must be NULL or NUL-terminated; `out` must point to writable storage for one pointer.
 */
enum FpsnStatus fpsn_model_new(const char *config_json,
                               uint64_t seed,
                               struct FpsnModel **out);

/**
 * Save a model to a checkpoint file.
 *
 * # Safety
 * `model` must be a live handle; `path` must be NUL-terminated.
 */
enum FpsnStatus fpsn_model_save(struct FpsnModel *model, const char *path);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void fpsn_model_free(struct FpsnModel *model);

/**
 * Number of things and stuff classes the model predicts. Things use class
 * ids `0..things`, stuff `things..things + stuff`.
 *
 * # Safety
 * `model` must be a live handle; the outputs must be writable.
 */
enum FpsnStatus fpsn_model_classes(const struct FpsnModel *model, size_t *things, size_t *stuff);

/**
 * Segment one image with the model's own detector.
 *
 * # Safety
 * `rgb` must hold `height * width * 3` bytes; `class_out` and
 * `instance_out` must hold `height * width` elements each.
 */
enum FpsnStatus fpsn_predict(struct FpsnModel *model,
                             const uint8_t *rgb,
                             size_t height,
                             size_t width,
                             uint16_t *class_out,
                             uint32_t *instance_out);

/**
 * Segment one image using caller-provided boxes instead of the detector.
 *
 * # Safety
 * As [`fpsn_predict`]; `boxes` must hold `n_boxes` elements (may be NULL when `n_boxes` is 0).
 */
enum FpsnStatus fpsn_predict_with_boxes(struct FpsnModel *model,
                                        const uint8_t *rgb,
                                        size_t height,
                                        size_t width,
                                        const struct FpsnBox *boxes,
                                        size_t n_boxes,
                                        uint16_t *class_out,
                                        uint32_t *instance_out);

/**
 * Panoptic quality of one predicted map against ground truth. `gt_crowd`
 * may be NULL (no crowd regions).
 *
 * # Safety
 * Every non-NULL array must hold `height * width` elements; `out` must be writable.
 */
enum FpsnStatus fpsn_pq(const uint16_t *pred_class,
                        const uint32_t *pred_instance,
                        const uint16_t *gt_class,
                        const uint32_t *gt_instance,
                        const uint8_t *gt_crowd,
                        size_t height,
                        size_t width,
                        size_t num_things,
                        size_t num_stuff,
                        struct FpsnPq *out);

/**
 * COCO-panoptic color of a segment id: `rgb_out[0] + 256 * rgb_out[1] + 65536 * rgb_out[2] == id`.
 *
 * # Safety
 * `rgb_out` must hold 3 bytes.
 */
enum FpsnStatus fpsn_encode_id(uint32_t id, uint8_t *rgb_out);

uint32_t fpsn_decode_id(uint8_t r, uint8_t g, uint8_t b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FPSNET_H */
