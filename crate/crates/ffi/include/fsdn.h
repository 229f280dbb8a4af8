#ifndef FSDN_H
#define FSDN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum FsdnStatus {
  FSDN_STATUS_OK = 0,
  FSDN_STATUS_NULL_POINTER = 1,
  FSDN_STATUS_INVALID_ARGUMENT = 2,
  FSDN_STATUS_IO = 3,
  FSDN_STATUS_NUMERIC = 4,
  FSDN_STATUS_PANIC = 5,
} FsdnStatus;

/**
 * A loaded network. Create with [`fsdn_model_load`], release with
 * [`fsdn_model_free`].
 */
typedef struct FsdnModel FsdnModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *fsdn_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fsdn_version(void);

/**
 * Loads a checkpoint and stores a new handle in `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` a writable pointer.
 */
enum FsdnStatus fsdn_model_load(const char *path, struct FsdnModel **out);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`fsdn_model_load`] not yet freed.
 */
void fsdn_model_free(struct FsdnModel *model);

/**
 * Number of trainable parameters.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum FsdnStatus fsdn_model_parameter_count(const struct FsdnModel *model, size_t *out);

/**
 * Receptive field side length in pixels.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum FsdnStatus fsdn_model_receptive_field(const struct FsdnModel *model, size_t *out);

/**
 * Writes 1 to `*out` if the network predicts the noise, 0 if it predicts
 * the clean signal.
 *
 * # Safety
 * `model` must be a live handle and `out` a writable pointer.
 */
enum FsdnStatus fsdn_model_is_residual(const struct FsdnModel *model, int32_t *out);

/**
 * Denoises with a low/high network pair; the result is clamped to `[0, 1]`.
 *
 * # Safety
 * `low` and `high` must be live handles; `noisy` and `out` must each hold
 * `width * height` floats.
 */
enum FsdnStatus fsdn_denoise_dual(const struct FsdnModel *low,
                                  const struct FsdnModel *high,
                                  const float *noisy,
                                  size_t width,
                                  size_t height,
                                  float *out);

/**
 * Denoises with one network, subtracting its output for residual models.
 *
 * # Safety
 * `model` must be a live handle; `noisy` and `out` must each hold
 * `width * height` floats.
 */
enum FsdnStatus fsdn_denoise_single(const struct FsdnModel *model,
                                    const float *noisy,
                                    size_t width,
                                    size_t height,
                                    float *out);

/**
 * Splits `image` into a Gaussian-blurred low part and the high residual.
 *
 * # Safety
 * `image`, `low_out` and `high_out` must each hold `width * height` floats.
 */
enum FsdnStatus fsdn_decompose(const float *image,
                               size_t width,
                               size_t height,
                               double sigma,
                               float *low_out,
                               float *high_out);

/**
 * Peak signal-to-noise ratio in dB for unit peak.
 *
 * # Safety
 * `reference` and `test` must each hold `width * height` floats; `out`
 * must be writable.
 */
enum FsdnStatus fsdn_psnr(const float *reference,
                          const float *test,
                          size_t width,
                          size_t height,
                          double *out);

/**
 * Mean structural similarity.
 *
 * # Safety
 * `reference` and `test` must each hold `width * height` floats; `out`
 * must be writable.
 */
enum FsdnStatus fsdn_ssim(const float *reference,
                          const float *test,
                          size_t width,
                          size_t height,
                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSDN_H */
