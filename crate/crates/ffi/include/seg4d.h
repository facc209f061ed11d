#ifndef SEG4D_H
#define SEG4D_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum Seg4dStatus {
  SEG4D_STATUS_OK = 0,
  SEG4D_STATUS_NULL_POINTER = 1,
  SEG4D_STATUS_INVALID_ARGUMENT = 2,
  SEG4D_STATUS_SHAPE_MISMATCH = 3,
  SEG4D_STATUS_IO = 4,
  SEG4D_STATUS_UNDEFINED_METRIC = 5,
  SEG4D_STATUS_DEGENERATE_GEOMETRY = 6,
  SEG4D_STATUS_CAPACITY = 7,
  SEG4D_STATUS_INTERNAL = 99,
} Seg4dStatus;

/**
 * Accumulates labeled scans and computes association scores.
 */
typedef struct Seg4dEvaluator Seg4dEvaluator;

/**
 * Online tracker state.
 */
typedef struct Seg4dTracker Seg4dTracker;

typedef struct Seg4dScores {
  double s_assoc_temporal;
  double s_assoc_scanwise;
  double best_iou;
  size_t num_gt;
  size_t num_pred;
} Seg4dScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. Valid until the next
 * failing call on the same thread; never null.
 */
const char *seg4d_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *seg4d_version(void);

/**
 * Minimum-cost assignment on a `rows x cols` cost matrix (rows = queries,
 * columns = objects). `out_query_of_object[o]` receives the query matched
 * to object `o`, or -1. `out_total` may be null.
 *
 * # Safety
 * `cost` holds `rows * cols` doubles; `out_query_of_object` holds `cols`.
 */
enum Seg4dStatus seg4d_hungarian(const double *cost,
                                 size_t rows,
                                 size_t cols,
                                 int64_t *out_query_of_object,
                                 double *out_total);

/**
 * HDBSCAN over `n` points of dimension `dim`. Writes one label per point,
 * -1 for noise.
 *
 * # Safety
 * `data` holds `n * dim` doubles; `out_labels` holds `n` ints.
 */
enum Seg4dStatus seg4d_hdbscan(const double *data,
                               size_t n,
                               size_t dim,
                               size_t min_samples,
                               size_t min_cluster_size,
                               int32_t *out_labels);

/**
 * Monte-Carlo IoU between the convex hulls of two point sets (`xyz`
 * triples). Returns `SEG4D_STATUS_DEGENERATE_GEOMETRY` if either set is
 * flat or has fewer than four points.
 *
 * # Safety
 * `a` holds `3 * a_len` doubles, `b` holds `3 * b_len`; `out` is writable.
 */
enum Seg4dStatus seg4d_mc_iou(const double *a,
                              size_t a_len,
                              const double *b,
                              size_t b_len,
                              size_t samples,
                              uint64_t seed,
                              double *out);

struct Seg4dEvaluator *seg4d_evaluator_new(void);

/**
 * Releases an evaluator. Null is ignored.
 *
 * # Safety
 * `ev` comes from [`seg4d_evaluator_new`] and is not used afterwards.
 */
void seg4d_evaluator_free(struct Seg4dEvaluator *ev);

/**
 * Appends one scan. Ids use the `.label` convention: 0 unknown, 0xFFFF
 * ground, anything else an instance.
 *
 * # Safety
 * `gt` and `pred` hold `n` ids each; `ev` is a live evaluator.
 */
enum Seg4dStatus seg4d_evaluator_add_scan(struct Seg4dEvaluator *ev,
                                          const uint32_t *gt,
                                          const uint32_t *pred,
                                          size_t n);

/**
 * Scores of all scans added so far. `min_points > 0` applies the per-scan
 * small ground-truth filter.
 *
 * # Safety
 * `ev` is a live evaluator; `out` is writable.
 */
enum Seg4dStatus seg4d_evaluator_compute(const struct Seg4dEvaluator *ev,
                                         size_t min_points,
                                         struct Seg4dScores *out);

/**
 * Creates a tracker from `num_queries x dim` initial queries. Writes null
 * to `out` on failure.
 *
 * # Safety
 * `queries` holds `num_queries * dim` doubles; `out` is writable.
 */
enum Seg4dStatus seg4d_tracker_new(const double *queries,
                                   size_t num_queries,
                                   size_t dim,
                                   double recycle_distance,
                                   struct Seg4dTracker **out);

/**
 * Releases a tracker. Null is ignored.
 *
 * # Safety
 * `tr` comes from [`seg4d_tracker_new`] and is not used afterwards.
 */
void seg4d_tracker_free(struct Seg4dTracker *tr);

/**
 * Processes one scan of `n` points. `xyz` are sensor-frame coordinates,
 * `features` the `n x dim` point features. `next_queries` (nullable)
 * replaces the query embeddings before assignment, as a network's output
 * queries would. Object ids are written to `out_ids`.
 *
 * # Safety
 * Array lengths as described; `tr` is a live tracker.
 */
enum Seg4dStatus seg4d_tracker_step(struct Seg4dTracker *tr,
                                    const double *xyz,
                                    const double *features,
                                    size_t n,
                                    const double *next_queries,
                                    uint32_t timestep,
                                    uint32_t *out_ids);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEG4D_H */
