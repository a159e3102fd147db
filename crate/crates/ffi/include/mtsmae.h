#ifndef MTSMAE_H
#define MTSMAE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Values 2 to 5 match the command-line exit codes.
 */
typedef enum MtsmaeStatus {
  MTSMAE_STATUS_OK = 0,
  /**
   * A required pointer was null or a length did not match.
   */
  MTSMAE_STATUS_INVALID_ARGUMENT = 1,
  MTSMAE_STATUS_CONFIG = 2,
  MTSMAE_STATUS_DATA = 3,
  MTSMAE_STATUS_TRAINING = 4,
  MTSMAE_STATUS_IO = 5,
  /**
   * The library panicked; the handle involved should be freed.
   */
  MTSMAE_STATUS_INTERNAL = 6,
} MtsmaeStatus;

/**
 * Opaque model handle.
 */
typedef struct MtsmaeModel MtsmaeModel;

/**
 * Sizes a caller needs to lay out buffers for [`mtsmae_model_forecast`].
 */
typedef struct MtsmaeDims {
  size_t input_len;
  size_t label_len;
  size_t pred_len;
  size_t d_x;
  size_t d_y;
} MtsmaeDims;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *mtsmae_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *mtsmae_last_error(void);

/**
 * Loads a checkpoint written by fine-tuning and stores a new handle in
 * `*out`. Free it with [`mtsmae_model_free`].
 *
 * # Safety
 * `path` must be a nul-terminated UTF-8 string; `out` must be writable.
 */
enum MtsmaeStatus mtsmae_model_load(const char *path, struct MtsmaeModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`mtsmae_model_load`] and not be used afterwards.
 */
void mtsmae_model_free(struct MtsmaeModel *model);

/**
 * Writes the model's window sizes into `*dims`.
 *
 * # Safety
 * `model` must be a live handle; `dims` must be writable.
 */
enum MtsmaeStatus mtsmae_model_dims(const struct MtsmaeModel *model, struct MtsmaeDims *dims);

/**
 * Forecasts `pred_len` steps after an observed window.
 *
 * `x` holds `x_len = input_len * d_x` values (the model's own scale, so
 * standardized if it was trained that way). The first row is observed at
 * `start_unix` (seconds, UTC) and rows are `interval_minutes` apart; the
 * calendar of the forecast horizon continues that grid. The last
 * `label_len` rows of `x` serve as the decoder's known segment. `out`
 * receives `pred_len * d_y` values and `out_len` must equal that.
 *
 * # Safety
 * `model` must be a live handle, `x` valid for `x_len` reads and `out`
 * valid for `out_len` writes.
 */
enum MtsmaeStatus mtsmae_model_forecast(const struct MtsmaeModel *model,
                                        const double *x,
                                        size_t x_len,
                                        int64_t start_unix,
                                        uint32_t interval_minutes,
                                        double *out,
                                        size_t out_len);

/**
 * `(1/n) Σ_i Σ_j (y - ŷ)² / d` over two `n x d` arrays.
 *
 * # Safety
 * `y` and `yhat` must be valid for `n * d` reads, `out` writable.
 */
enum MtsmaeStatus mtsmae_mse(const double *y, const double *yhat, size_t n, size_t d, double *out);

/**
 * `(1/n) Σ_i Σ_j |y - ŷ| / d` over two `n x d` arrays.
 *
 * # Safety
 * `y` and `yhat` must be valid for `n * d` reads, `out` writable.
 */
enum MtsmaeStatus mtsmae_mae(const double *y, const double *yhat, size_t n, size_t d, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MTSMAE_H */
