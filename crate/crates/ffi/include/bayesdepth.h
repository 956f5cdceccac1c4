#ifndef BAYESDEPTH_H
#define BAYESDEPTH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum BdStatus {
  BD_STATUS_OK = 0,
  BD_STATUS_NULL_POINTER = 1,
  BD_STATUS_INVALID_ARGUMENT = 2,
  BD_STATUS_DIMENSION_MISMATCH = 3,
  BD_STATUS_IO = 4,
  BD_STATUS_PARSE = 5,
  BD_STATUS_NO_VALID_PIXELS = 6,
  BD_STATUS_PANIC = 7,
} BdStatus;

/**
 * Whether an uncertainty map holds standard deviations or variances.
 */
typedef enum BdUncKind {
  BD_UNC_KIND_STD = 0,
  BD_UNC_KIND_VARIANCE = 1,
} BdUncKind;

/**
 * Selects one of the fused maps.
 */
typedef enum BdEnsembleMap {
  BD_ENSEMBLE_MAP_MEAN = 0,
  BD_ENSEMBLE_MAP_VAR_A = 1,
  BD_ENSEMBLE_MAP_VAR_E = 2,
  BD_ENSEMBLE_MAP_VAR_T = 3,
} BdEnsembleMap;

/**
 * Opaque depth map.
 */
typedef struct BdDepthMap BdDepthMap;

/**
 * Opaque fused ensemble output.
 */
typedef struct BdEnsemble BdEnsemble;

/**
 * Opaque uncertainty map.
 */
typedef struct BdUncMap BdUncMap;

typedef struct BdDepthMetrics {
  double abs_rel;
  double sq_rel;
  double rmse;
  double rmse_log;
  double delta1;
  double delta2;
  double delta3;
} BdDepthMetrics;

typedef struct BdAuce {
  /**
   * Positive when the intervals are too narrow.
   */
  double signed_area;
  double absolute_area;
} BdAuce;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the message of the last failure on this thread into `buf`
 * (NUL-terminated, truncated to `len`) and returns its full length in
 * bytes without the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t bd_last_error(char *buf, size_t len);

/**
 * New depth map from `width * height` row-major values, all positive.
 *
 * # Safety
 * `data` must point to `width * height` readable doubles; `out` must be writable.
 */
enum BdStatus bd_depth_map_new(size_t width,
                               size_t height,
                               const double *data,
                               struct BdDepthMap **out);

/**
 * Reads a single-channel PFM file as depth.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BdStatus bd_depth_map_read_pfm(const char *path, struct BdDepthMap **out);

/**
 * # Safety
 * `map` must be a live handle; `path` a NUL-terminated string.
 */
enum BdStatus bd_depth_map_write_pfm(const struct BdDepthMap *map, const char *path);

/**
 * # Safety
 * `map` must be a live handle; `width` and `height` writable.
 */
enum BdStatus bd_depth_map_dims(const struct BdDepthMap *map, size_t *width, size_t *height);

/**
 * Copies the `width * height` values into `out`; `len` must match exactly.
 *
 * # Safety
 * `map` must be a live handle; `out` must hold `len` doubles.
 */
enum BdStatus bd_depth_map_data(const struct BdDepthMap *map, double *out, size_t len);

/**
 * # Safety
 * `map` must be null or a handle not yet freed.
 */
void bd_depth_map_free(struct BdDepthMap *map);

/**
 * New uncertainty map from `width * height` non-negative values.
 *
 * # Safety
 * `data` must point to `width * height` readable doubles; `out` must be writable.
 */
enum BdStatus bd_unc_map_new(size_t width,
                             size_t height,
                             enum BdUncKind unc_kind,
                             const double *data,
                             struct BdUncMap **out);

/**
 * Reads a single-channel PFM file as uncertainty of the given kind.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum BdStatus bd_unc_map_read_pfm(const char *path, enum BdUncKind unc_kind, struct BdUncMap **out);

/**
 * # Safety
 * `map` must be a live handle; `path` a NUL-terminated string.
 */
enum BdStatus bd_unc_map_write_pfm(const struct BdUncMap *map, const char *path);

/**
 * # Safety
 * `map` must be a live handle; `out` must hold `len` doubles.
 */
enum BdStatus bd_unc_map_data(const struct BdUncMap *map, double *out, size_t len);

/**
 * # Safety
 * `map` must be null or a handle not yet freed.
 */
void bd_unc_map_free(struct BdUncMap *map);

/**
 * Fuses `m` members (depth, aleatoric uncertainty, seed) into mean and
 * aleatoric, epistemic and total variance. The result does not depend on
 * the order of the members.
 *
 * # Safety
 * `depths`, `sigmas` and `seeds` must each point to `m` entries; every
 * map handle must be live; `out` must be writable.
 */
enum BdStatus bd_fuse(const struct BdDepthMap *const *depths,
                      const struct BdUncMap *const *sigmas,
                      const uint64_t *seeds,
                      size_t m,
                      struct BdEnsemble **out);

/**
 * # Safety
 * `ens` must be a live handle; `width` and `height` writable.
 */
enum BdStatus bd_ensemble_dims(const struct BdEnsemble *ens, size_t *width, size_t *height);

/**
 * Copies one fused map; variances are returned as variances.
 *
 * # Safety
 * `ens` must be a live handle; `out` must hold `len` doubles.
 */
enum BdStatus bd_ensemble_data(const struct BdEnsemble *ens,
                               enum BdEnsembleMap which,
                               double *out,
                               size_t len);

/**
 * Writes `mean.pfm`, `var_a.pfm`, `var_e.pfm`, `var_t.pfm` and
 * `ensemble.json` into `dir`.
 *
 * # Safety
 * `ens` must be a live handle; `dir` a NUL-terminated string.
 */
enum BdStatus bd_ensemble_save(const struct BdEnsemble *ens, const char *dir);

/**
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum BdStatus bd_ensemble_load(const char *dir, struct BdEnsemble **out);

/**
 * # Safety
 * `ens` must be null or a handle not yet freed.
 */
void bd_ensemble_free(struct BdEnsemble *ens);

/**
 * Ratio of the median reference depth to the median predicted depth over
 * the masked pixels.
 *
 * # Safety
 * Handles must be live; `mask` null or `width * height` bytes; `out` writable.
 */
enum BdStatus bd_scale_correction(const struct BdDepthMap *gt,
                                  const struct BdDepthMap *pred,
                                  const uint8_t *mask,
                                  double *out);

/**
 * Depth error metrics of `pred` against `gt`, optionally after median
 * scale correction.
 *
 * # Safety
 * Handles must be live; `mask` null or `width * height` bytes; `out` writable.
 */
enum BdStatus bd_depth_metrics(const struct BdDepthMap *gt,
                               const struct BdDepthMap *pred,
                               const uint8_t *mask,
                               bool median_scale,
                               struct BdDepthMetrics *out);

/**
 * Signed and absolute area under the calibration error of Gaussian
 * prediction intervals, over confidence levels 0.01 to 0.99.
 *
 * # Safety
 * Handles must be live; `mask` null or `width * height` bytes; `out` writable.
 */
enum BdStatus bd_auce(const struct BdDepthMap *gt,
                      const struct BdDepthMap *pred,
                      const struct BdUncMap *sigma,
                      const uint8_t *mask,
                      struct BdAuce *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAYESDEPTH_H */
