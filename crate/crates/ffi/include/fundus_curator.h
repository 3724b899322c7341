/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef FUNDUS_CURATOR_H
#define FUNDUS_CURATOR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_NOT_FOUND = 3,
  FC_STATUS_UNSUPPORTED_FORMAT = 4,
  FC_STATUS_CORRUPT_DATA = 5,
  FC_STATUS_IO = 6,
  FC_STATUS_DIMENSION_MISMATCH = 7,
  FC_STATUS_MODEL = 8,
  FC_STATUS_INTERNAL = 9,
} FcStatus;

typedef enum FcLesion {
  FC_LESION_EX = 0,
  FC_LESION_HA = 1,
  FC_LESION_MA = 2,
  FC_LESION_SE = 3,
} FcLesion;

// Decoded 8-bit image, gray or RGB.
typedef struct FcImage FcImage;

// Binary lesion mask.
typedef struct FcMask FcMask;

// Trained quality classifier.
typedef struct FcModel FcModel;

typedef struct FcFeatures {
  double brightness;
  double vesselness;
  double sharpness;
  double entropy;
  double peak_to_mean;
  // Nothing brighter than the dark threshold; the full frame was used.
  bool degenerate_crop;
  // All-zero luma; `peak_to_mean` is reported as 1.
  bool zero_mean;
} FcFeatures;

typedef struct FcEnhanceParams {
  double clahe_clip;
  uint32_t tile_cols;
  uint32_t tile_rows;
  double gamma;
} FcEnhanceParams;

typedef struct FcPairMetrics {
  double kappa;
  double weighted_kappa;
  double dsc;
  double weighted_dsc;
  // Chance agreement was 1 and kappa fell back to its convention.
  bool degenerate;
} FcPairMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fc_version(void);

// Message of the last failed call on this thread, or NULL after a
// successful one. Valid until the next `fc_*` call on the same thread.
const char *fc_last_error(void);

// Decodes a PNG, JPEG, TIFF or BMP file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum FcStatus fc_image_load(const char *path, struct FcImage **out);

// Copies `len` interleaved samples; `channels` is 1 (gray) or 3 (RGB).
//
// # Safety
// `data` must point to `len` readable bytes; `out` must be writable.
enum FcStatus fc_image_from_raw(const uint8_t *data,
                                size_t len,
                                uint32_t width,
                                uint32_t height,
                                uint32_t channels,
                                struct FcImage **out);

// Dimensions and channel count; any pointer may be NULL to skip it.
//
// # Safety
// `img` must be a live handle.
enum FcStatus fc_image_info(const struct FcImage *img,
                            uint32_t *width,
                            uint32_t *height,
                            uint32_t *channels);

// Borrowed view of the samples, valid while the handle lives.
//
// # Safety
// `img` must be a live handle; `data` and `len` must be writable.
enum FcStatus fc_image_data(const struct FcImage *img, const uint8_t **data, size_t *len);

// # Safety
// `img` must be NULL or a handle not yet freed.
void fc_image_free(struct FcImage *img);

// Quality features with the default configuration.
//
// # Safety
// `img` must be a live handle; `out` must be writable.
enum FcStatus fc_extract_features(const struct FcImage *img, struct FcFeatures *out);

// Default enhancement parameters.
struct FcEnhanceParams fc_enhance_params_default(void);

// Crop, CLAHE on lightness and gamma; `params` NULL means defaults. The
// result is a new RGB image.
//
// # Safety
// `img` must be a live handle; `params` NULL or readable; `out` writable.
enum FcStatus fc_enhance(const struct FcImage *img,
                         const struct FcEnhanceParams *params,
                         struct FcImage **out);

// Mask from one byte per pixel, foreground above 127.
//
// # Safety
// `data` must point to `width * height` readable bytes; `out` writable.
enum FcStatus fc_mask_from_raw(const uint8_t *data,
                               uint32_t width,
                               uint32_t height,
                               struct FcMask **out);

// Reads a single-channel mask file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum FcStatus fc_mask_load(const char *path, struct FcMask **out);

// Writes 0 or 255 per pixel into `buf`, which must hold `width * height`
// bytes; `count` (nullable) receives the foreground size.
//
// # Safety
// `mask` must be a live handle; `buf` must point to `len` writable bytes.
enum FcStatus fc_mask_copy(const struct FcMask *mask, uint8_t *buf, size_t len, size_t *count);

// # Safety
// `mask` must be NULL or a handle not yet freed.
void fc_mask_free(struct FcMask *mask);

// Cleans a predicted mask against its image with the default parameters;
// `min_area` overrides the smallest kept component.
//
// # Safety
// `img` and `mask` must be live handles; `out` writable.
enum FcStatus fc_postprocess(const struct FcImage *img,
                             const struct FcMask *mask,
                             enum FcLesion lesion,
                             size_t min_area,
                             struct FcMask **out);

// Plain and weighted kappa and DSC of two masks whose foreground pixels
// carry the weights `p_i` and `p_j` (confidence times expertise).
//
// # Safety
// Both masks must be live handles; `out` writable.
enum FcStatus fc_agreement_pair(const struct FcMask *mask_i,
                                double p_i,
                                const struct FcMask *mask_j,
                                double p_j,
                                struct FcPairMetrics *out);

// Loads a `model.json` written by the `train` command.
//
// # Safety
// `path` must be a NUL-terminated string; `out` writable.
enum FcStatus fc_model_load(const char *path, struct FcModel **out);

// Number of features the model expects.
//
// # Safety
// `model` must be a live handle; `dim` writable.
enum FcStatus fc_model_dim(const struct FcModel *model, size_t *dim);

// Probability of good quality for `len` raw feature values in schema
// order; `good` (nullable) receives the thresholded label.
//
// # Safety
// `model` must be a live handle; `x` must point to `len` doubles;
// `p_good` writable.
enum FcStatus fc_model_predict(const struct FcModel *model,
                               const double *x,
                               size_t len,
                               double *p_good,
                               bool *good);

// # Safety
// `model` must be NULL or a handle not yet freed.
void fc_model_free(struct FcModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FUNDUS_CURATOR_H */
