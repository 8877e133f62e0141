#ifndef UNIT_INSIGHT_H
#define UNIT_INSIGHT_H

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes; zero means success.
 */
typedef enum ui_status {
  UI_STATUS_OK = 0,
  UI_STATUS_NULL_POINTER = 1,
  UI_STATUS_INVALID_ARGUMENT = 2,
  UI_STATUS_IO = 3,
  UI_STATUS_FORMAT = 4,
  UI_STATUS_DIMENSION_MISMATCH = 5,
  UI_STATUS_BUFFER_TOO_SMALL = 6,
  UI_STATUS_PANIC = 7,
} ui_status;

typedef enum ui_merge_method {
  UI_MERGE_METHOD_KK = 0,
  UI_MERGE_METHOD_KH = 1,
  UI_MERGE_METHOD_KWH = 2,
} ui_merge_method;

/**
 * Opaque codebook handle.
 */
typedef struct ui_codebook ui_codebook;

/**
 * Scores on a 0-100 scale.
 */
typedef struct ui_v_measure_t {
  double homogeneity;
  double completeness;
  double v;
} ui_v_measure_t;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ui_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next call into the library on the same thread.
 */
const char *ui_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum ui_status ui_codebook_load(const char *path, struct ui_codebook **out);

/**
 * # Safety
 * `cb` must be a live handle and `path` a NUL-terminated string.
 */
enum ui_status ui_codebook_save(const struct ui_codebook *cb, const char *path);

/**
 * Builds a codebook from `k * dim` row-major centroids and optional `k` counts (NULL for zeros).
 *
 * # Safety
 * Buffers must hold the stated number of elements; `out` must be writable.
 */
enum ui_status ui_codebook_new(const double *centroids,
                               size_t k,
                               size_t dim,
                               const uint64_t *counts,
                               struct ui_codebook **out);

/**
 * # Safety
 * `cb` must be NULL or a handle not yet freed.
 */
void ui_codebook_free(struct ui_codebook *cb);

/**
 * Number of centroids, or 0 for NULL.
 *
 * # Safety
 * `cb` must be NULL or a live handle.
 */
size_t ui_codebook_k(const struct ui_codebook *cb);

/**
 * Centroid dimension, or 0 for NULL.
 *
 * # Safety
 * `cb` must be NULL or a live handle.
 */
size_t ui_codebook_dim(const struct ui_codebook *cb);

/**
 * Copies the `k * dim` centroids into `out` (capacity `len`).
 *
 * # Safety
 * `out` must hold `len` doubles.
 */
enum ui_status ui_codebook_centroids(const struct ui_codebook *cb, double *out, size_t len);

/**
 * Copies the `k` training counts into `out` (capacity `len`).
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum ui_status ui_codebook_counts(const struct ui_codebook *cb, uint64_t *out, size_t len);

/**
 * k-means++ / Lloyd on `n * dim` row-major points.
 *
 * # Safety
 * `points` must hold `n * dim` doubles; `out` must be writable.
 */
enum ui_status ui_kmeans_fit(const double *points,
                             size_t n,
                             size_t dim,
                             size_t k,
                             uint64_t seed,
                             struct ui_codebook **out);

/**
 * Nearest-centroid unit for each of `frames` rows of `dim` features; writes `frames` units.
 *
 * # Safety
 * `features` must hold `frames * dim` doubles and `out_units` `frames` values.
 */
enum ui_status ui_quantize(const struct ui_codebook *cb,
                           const double *features,
                           size_t frames,
                           size_t dim,
                           uint32_t *out_units);

/**
 * Collapses runs in `units[0..n]`; `out_units` and `out_durations` need room
 * for `n` values and `out_len` receives the run count.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum ui_status ui_dedup(const uint32_t *units,
                        size_t n,
                        uint32_t *out_units,
                        uint32_t *out_durations,
                        size_t *out_len);

/**
 * Unit edit distance of `b` against reference `a`, in percent of `len(a)`.
 *
 * # Safety
 * `a` and `b` must hold `na` and `nb` values; `out` must be writable.
 */
enum ui_status ui_ued(const uint32_t *a, size_t na, const uint32_t *b, size_t nb, double *out);

/**
 * V-measure of a `units x categories` row-major count table.
 *
 * # Safety
 * `counts` must hold `units * categories` values; `out` must be writable.
 */
enum ui_status ui_v_measure(const uint64_t *counts,
                            size_t units,
                            size_t categories,
                            struct ui_v_measure_t *out);

/**
 * Merges `cb` down to `target` units. `cr_rates` is a row-major `k x k`
 * swap-rate matrix, required for `Kwh` and ignored otherwise; `seed` is used
 * by `Kk`. `out_mapping` receives `k` merged unit IDs.
 *
 * # Safety
 * `cr_rates` must hold `k * k` doubles when used, `out_mapping` `k` values,
 * and `out` must be writable.
 */
enum ui_status ui_merge(const struct ui_codebook *cb,
                        enum ui_merge_method method,
                        size_t target,
                        const double *cr_rates,
                        uint64_t seed,
                        struct ui_codebook **out,
                        uint32_t *out_mapping);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNIT_INSIGHT_H */
