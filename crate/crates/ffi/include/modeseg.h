/* modeseg C API: water-body segmentation with mode normalization. */

#ifndef MODESEG_H
#define MODESEG_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible entry point.
 */
typedef enum MsStatus {
  MS_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  MS_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MS_STATUS_INVALID_UTF8 = 2,
  /**
   * Invalid configuration or argument value.
   */
  MS_STATUS_CONFIG = 3,
  MS_STATUS_IO = 4,
  /**
   * Malformed on-disk artifact (raster, checkpoint, config document).
   */
  MS_STATUS_FORMAT = 5,
  MS_STATUS_RUNTIME = 6,
} MsStatus;

/**
 * Opaque handle to a loaded model plus its training-set standardization.
 */
typedef struct MsModel MsModel;

/**
 * The six confusion-count metrics.
 */
typedef struct MsMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  double iou;
  double dsc;
  /**
   * 1 when a zero denominator forced some metric to 0.
   */
  uint8_t degenerate;
} MsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *ms_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ms_version(void);

/**
 * Load a model checkpoint produced by training. On success writes a handle
 * to `out`; release it with `ms_model_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum MsStatus ms_model_load(const char *path, struct MsModel **out);

/**
 * Release a model handle. NULL is a no-op.
 *
 * # Safety
 * `model` must be a pointer returned by `ms_model_load`, not yet freed.
 */
void ms_model_free(struct MsModel *model);

/**
 * Segment a raw backscatter raster (row-major dB values, `width*height`).
 * The raster is tiled with `tile_size`, standardized with the transform
 * stored in the checkpoint, and stitched back. `mask_out` (caller-allocated,
 * `width*height`) receives 1 = water, 0 = non-water, 255 = no prediction
 * (grid margin).
 *
 * # Safety
 * `model`, `values`, `mask_out` must be valid for the stated extents.
 */
enum MsStatus ms_model_predict(const struct MsModel *model,
                               const float *values,
                               uintptr_t width,
                               uintptr_t height,
                               uintptr_t tile_size,
                               double threshold,
                               uint8_t *mask_out);

/**
 * Generate a synthetic bimodal scene. `image_out` receives `width*height`
 * dB values and `mask_out` the 0/1 water mask.
 *
 * # Safety
 * Output buffers must hold `width*height` elements.
 */
enum MsStatus ms_synth_scene(uintptr_t width,
                             uintptr_t height,
                             double coverage,
                             uint64_t seed,
                             float *image_out,
                             uint8_t *mask_out);

/**
 * Score predicted probabilities against a 0/1 mask at `threshold`.
 *
 * # Safety
 * `pred` and `target` must hold `len` elements; `out` must be valid.
 */
enum MsStatus ms_metrics(const float *pred,
                         const uint8_t *target,
                         uintptr_t len,
                         double threshold,
                         struct MsMetrics *out);

/**
 * Run a full training experiment from a JSON config document (same schema
 * as the CLI `--config` file) writing run artifacts into `run_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum MsStatus ms_run_experiment(const char *config_json, const char *run_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MODESEG_H */
