#ifndef FSDEHAZE_H
#define FSDEHAZE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum FsdStatus {
  FSD_STATUS_OK = 0,
  FSD_STATUS_INVALID_ARGUMENT = 1,
  FSD_STATUS_CONFIG = 2,
  FSD_STATUS_DATASET_INTEGRITY = 3,
  FSD_STATUS_FINGERPRINT = 4,
  FSD_STATUS_NON_FINITE = 5,
  FSD_STATUS_PARSE = 6,
  FSD_STATUS_FORMAT = 7,
  FSD_STATUS_IO = 8,
  FSD_STATUS_IMAGE = 9,
  /**
   * A required pointer argument was null.
   */
  FSD_STATUS_NULL_POINTER = 10,
  /**
   * The library panicked; this indicates a bug.
   */
  FSD_STATUS_INTERNAL = 11,
} FsdStatus;

/**
 * Opaque handle to a loaded generator network.
 */
typedef struct FsdGenerator FsdGenerator;

/**
 * SSIM options; zero-initialize for the defaults (global statistics on luma).
 */
typedef struct FsdSsimOptions {
  /**
   * Non-zero for sliding-window SSIM.
   */
  uint8_t windowed;
  /**
   * Window side in windowed mode; 0 means 11.
   */
  size_t window;
  /**
   * Non-zero to average per-channel SSIM instead of comparing luma.
   */
  uint8_t per_channel;
} FsdSsimOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a successful call.
 *
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *fsd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fsd_version(void);

/**
 * Creates a generator with seeded random weights.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum FsdStatus fsd_generator_new_random(uint64_t seed, struct FsdGenerator **out);

/**
 * Loads a generator from a generator or training checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer to writable storage.
 */
enum FsdStatus fsd_generator_load(const char *path, struct FsdGenerator **out);

/**
 * Writes the generator's weights to `path`.
 *
 * # Safety
 * `generator` must be a live handle and `path` a NUL-terminated string.
 */
enum FsdStatus fsd_generator_save(const struct FsdGenerator *generator, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `generator` must be null or a handle not yet freed.
 */
void fsd_generator_free(struct FsdGenerator *generator);

/**
 * Dehazes an RGB image of any size. `tile` 0 processes the whole image at once; otherwise larger
 * images are processed in overlapping tiles of that side (a multiple of 4 above 64).
 *
 * # Safety
 * `input` and `output` must each hold `height * width * 3` floats.
 */
enum FsdStatus fsd_generator_dehaze(const struct FsdGenerator *generator,
                                    const float *input,
                                    size_t height,
                                    size_t width,
                                    size_t tile,
                                    float *output);

/**
 * Renders haze: `I = J·t + A·(1 − t)`, clamped to [0,1].
 *
 * # Safety
 * `clean` and `output` hold `height * width * channels` floats, `transmission` holds
 * `height * width` and `light` holds 3.
 */
enum FsdStatus fsd_synthesize_haze(const float *clean,
                                   size_t height,
                                   size_t width,
                                   size_t channels,
                                   const float *transmission,
                                   const float *light,
                                   float *output);

/**
 * Inverts the scattering model with transmission floored at 0.05, clamped to [0,1].
 *
 * # Safety
 * As for [`fsd_synthesize_haze`].
 */
enum FsdStatus fsd_recover_clear(const float *hazy,
                                 size_t height,
                                 size_t width,
                                 size_t channels,
                                 const float *transmission,
                                 const float *light,
                                 float *output);

/**
 * PSNR in dB of `test` against `reference` for pixel values scaled to `peak`. Identical images
 * give positive infinity.
 *
 * # Safety
 * Both images hold `height * width * channels` floats; `out` is writable.
 */
enum FsdStatus fsd_psnr(const float *reference,
                        const float *test,
                        size_t height,
                        size_t width,
                        size_t channels,
                        double peak,
                        double *out);

/**
 * SSIM of `test` against `reference`. `options` may be null for the defaults.
 *
 * # Safety
 * Both images hold `height * width * channels` floats; `out` is writable.
 */
enum FsdStatus fsd_ssim(const float *reference,
                        const float *test,
                        size_t height,
                        size_t width,
                        size_t channels,
                        const struct FsdSsimOptions *options,
                        double *out);

/**
 * mAP over every category present in either detection file.
 *
 * # Safety
 * Paths are NUL-terminated strings; `out` is writable.
 */
enum FsdStatus fsd_map_from_files(const char *predictions,
                                  const char *truths,
                                  double iou_threshold,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSDEHAZE_H */
