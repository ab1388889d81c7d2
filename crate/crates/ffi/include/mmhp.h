#ifndef MMHP_H
#define MMHP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MmhpStatus {
  MMHP_STATUS_OK = 0,
  MMHP_STATUS_INVALID_INPUT = 1,
  /**
   * A numerical diagnostic (instability, degenerate posterior, ...).
   */
  MMHP_STATUS_NUMERICAL = 2,
  MMHP_STATUS_NULL_POINTER = 3,
  MMHP_STATUS_PANIC = 4,
} MmhpStatus;

typedef struct MmhpEvents MmhpEvents;

typedef struct MmhpModel MmhpModel;

typedef struct MmhpPath MmhpPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes) and returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
uintptr_t mmhp_last_error_message(char *buf, uintptr_t len);

/**
 * Builds a model. `rate_matrix` holds `n·n` entries row-major, entry
 * `(i, j)` being the rate `j → i`. `zeta` may be null (all ones). `q0` may
 * be null: the stationary law, or uniform when it is not unique.
 *
 * # Safety
 * Non-null pointers must reference arrays of the stated lengths.
 */
enum MmhpStatus mmhp_model_new(uintptr_t n,
                               const double *rate_matrix,
                               const double *alpha,
                               const double *beta,
                               const double *gamma,
                               const double *zeta,
                               const double *q0,
                               struct MmhpModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`mmhp_model_new`] not yet freed.
 */
void mmhp_model_free(struct MmhpModel *model);

/**
 * # Safety
 * `model` must be a live handle.
 */
uintptr_t mmhp_model_n_states(const struct MmhpModel *model);

/**
 * Wraps strictly increasing event times.
 *
 * # Safety
 * `times` must reference `len` values (or be null when `len` is 0).
 */
enum MmhpStatus mmhp_events_new(const double *times, uintptr_t len, struct MmhpEvents **out);

/**
 * # Safety
 * `events` must be null or a live handle.
 */
void mmhp_events_free(struct MmhpEvents *events);

/**
 * # Safety
 * `events` must be null or a live handle.
 */
uintptr_t mmhp_events_len(const struct MmhpEvents *events);

/**
 * Copies up to `len` event times into `buf`; returns the number copied.
 *
 * # Safety
 * `events` must be a live handle; `buf` must hold `len` values.
 */
uintptr_t mmhp_events_copy(const struct MmhpEvents *events, double *buf, uintptr_t len);

/**
 * Simulates events on `[0, horizon]`. With `n_changepoints > 0` the chain
 * is fixed: `labels` holds `n_changepoints + 1` states. Otherwise the chain
 * is drawn from the model, starting from `q0`.
 *
 * # Safety
 * `model` must be a live handle; arrays must have the stated lengths.
 */
enum MmhpStatus mmhp_simulate_events(const struct MmhpModel *model,
                                     const double *changepoints,
                                     const uintptr_t *labels,
                                     uintptr_t n_changepoints,
                                     double horizon,
                                     uint64_t seed,
                                     struct MmhpEvents **out);

/**
 * Filters bin counts on the grid `]t0 + (i-1)dt, t0 + i dt]`; the path has
 * `n_bins + 1` points.
 *
 * # Safety
 * `model` must be a live handle; `counts` must hold `n_bins` values.
 */
enum MmhpStatus mmhp_filter_counts(const struct MmhpModel *model,
                                   double t0,
                                   double dt,
                                   const double *counts,
                                   uintptr_t n_bins,
                                   struct MmhpPath **out);

/**
 * Smoothed posterior for bin counts; same layout as [`mmhp_filter_counts`].
 *
 * # Safety
 * `model` must be a live handle; `counts` must hold `n_bins` values.
 */
enum MmhpStatus mmhp_smooth_counts(const struct MmhpModel *model,
                                   double t0,
                                   double dt,
                                   const double *counts,
                                   uintptr_t n_bins,
                                   struct MmhpPath **out);

/**
 * Filters exact event times on `[0, horizon]`, recording time 0, each event
 * and the horizon. `max_substep <= 0` selects the default.
 *
 * # Safety
 * `model` and `events` must be live handles.
 */
enum MmhpStatus mmhp_filter_events(const struct MmhpModel *model,
                                   const struct MmhpEvents *events,
                                   double horizon,
                                   double max_substep,
                                   struct MmhpPath **out);

/**
 * # Safety
 * `path` must be null or a live handle.
 */
void mmhp_path_free(struct MmhpPath *path);

/**
 * # Safety
 * `path` must be null or a live handle.
 */
uintptr_t mmhp_path_len(const struct MmhpPath *path);

/**
 * # Safety
 * `path` must be null or a live handle.
 */
uintptr_t mmhp_path_n_states(const struct MmhpPath *path);

/**
 * Log-evidence of the forward pass; NaN for a null handle.
 *
 * # Safety
 * `path` must be null or a live handle.
 */
double mmhp_path_log_evidence(const struct MmhpPath *path);

/**
 * Copies the `len` path times into `buf`.
 *
 * # Safety
 * `path` must be a live handle; `buf` must hold `len` values.
 */
enum MmhpStatus mmhp_path_times(const struct MmhpPath *path, double *buf, uintptr_t len);

/**
 * Copies the probabilities row-major into `buf` of `len = path_len · n_states`.
 *
 * # Safety
 * `path` must be a live handle; `buf` must hold `len` values.
 */
enum MmhpStatus mmhp_path_probs(const struct MmhpPath *path, double *buf, uintptr_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMHP_H */
