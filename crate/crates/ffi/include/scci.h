#ifndef SCCI_H
#define SCCI_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum ScciStatus {
  SCCI_STATUS_OK = 0,
  SCCI_STATUS_NULL_POINTER = 1,
  SCCI_STATUS_INVALID_ARGUMENT = 2,
  SCCI_STATUS_IO = 3,
  SCCI_STATUS_MODEL = 4,
  SCCI_STATUS_SHAPE = 5,
  SCCI_STATUS_INTERNAL = 6,
  SCCI_STATUS_PANIC = 7,
} ScciStatus;

/**
 * An RGB image with channels in [0, 1].
 */
typedef struct ScciImage ScciImage;

/**
 * A loaded model snapshot.
 */
typedef struct ScciModel ScciModel;

/**
 * Message of the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *scci_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *scci_version(void);

/**
 * Number of entries in every embedding (256).
 */
size_t scci_embedding_dim(void);

/**
 * Loads a model snapshot from `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ScciStatus scci_model_load(const char *path, struct ScciModel **out);

/**
 * # Safety
 * `model` must come from [`scci_model_load`] and not be used afterwards. Null is ignored.
 */
void scci_model_free(struct ScciModel *model);

/**
 * Loads a PNG into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ScciStatus scci_image_load(const char *path, struct ScciImage **out);

/**
 * Builds an image from `height * width * 3` interleaved 8-bit RGB values.
 *
 * # Safety
 * `rgb` must point to `height * width * 3` readable bytes and `out` be valid.
 */
enum ScciStatus scci_image_from_rgb8(size_t height,
                                     size_t width,
                                     const uint8_t *rgb,
                                     struct ScciImage **out);

/**
 * Writes the image as PNG.
 *
 * # Safety
 * `image` must be a live handle and `path` a NUL-terminated string.
 */
enum ScciStatus scci_image_save(const struct ScciImage *image, const char *path);

/**
 * # Safety
 * `image` must be a live handle; `height` and `width` valid pointers.
 */
enum ScciStatus scci_image_dims(const struct ScciImage *image, size_t *height, size_t *width);

/**
 * Copies the image as interleaved 8-bit RGB into `buf` of `len` bytes;
 * `len` must be exactly `height * width * 3`.
 *
 * # Safety
 * `image` must be a live handle and `buf` point to `len` writable bytes.
 */
enum ScciStatus scci_image_to_rgb8(const struct ScciImage *image, uint8_t *buf, size_t len);

/**
 * # Safety
 * `image` must come from this library and not be used afterwards. Null is ignored.
 */
void scci_image_free(struct ScciImage *image);

/**
 * Encodes `image` into `out` (`len` must equal [`scci_embedding_dim`]).
 *
 * # Safety
 * Handles must be live and `out` point to `len` writable doubles.
 */
enum ScciStatus scci_encode(const struct ScciModel *model,
                            const struct ScciImage *image,
                            double *out,
                            size_t len);

/**
 * Bits needed for an embedding under the model's rate model.
 *
 * # Safety
 * `model` must be live, `values` point to `len` doubles, `bits` be valid.
 */
enum ScciStatus scci_estimate_rate(const struct ScciModel *model,
                                   const double *values,
                                   size_t len,
                                   double *bits);

/**
 * Re-colours `structure` with the colour of `colour`.
 *
 * # Safety
 * Handles must be live and `out` a valid pointer.
 */
enum ScciStatus scci_transfer(const struct ScciModel *model,
                              const struct ScciImage *structure,
                              const struct ScciImage *colour,
                              uint64_t seed,
                              bool post_enabled,
                              struct ScciImage **out);

/**
 * Sets `values[i]` at entry `indices[i]` for `n` edits and re-synthesizes.
 *
 * # Safety
 * Handles must be live, `indices` and `values` point to `n` elements (may be
 * null when `n` is 0) and `out` be valid.
 */
enum ScciStatus scci_edit(const struct ScciModel *model,
                          const struct ScciImage *image,
                          const size_t *indices,
                          const double *values,
                          size_t n,
                          uint64_t seed,
                          bool post_enabled,
                          struct ScciImage **out);

#endif  /* SCCI_H */
