#ifndef RELKAL_H
#define RELKAL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define RELKAL_MODEL_A 0

#define RELKAL_MODEL_B 1

#define RELKAL_MODEL_C 2

typedef enum RelkalStatus {
  RELKAL_STATUS_OK = 0,
  RELKAL_STATUS_NULL_POINTER = 1,
  RELKAL_STATUS_INVALID_ARGUMENT = 2,
  RELKAL_STATUS_CONFIG = 3,
  RELKAL_STATUS_DIMENSION = 4,
  RELKAL_STATUS_DEGENERATE_SPEED = 5,
  RELKAL_STATUS_SINGULAR_INNOVATION = 6,
  RELKAL_STATUS_NUMERICAL = 7,
  RELKAL_STATUS_NOT_INITIALIZED = 8,
  RELKAL_STATUS_PANIC = 99,
} RelkalStatus;

// Opaque target tracker for one model.
typedef struct RelkalTracker RelkalTracker;

// Ego motion over one step: speed, acceleration, yaw rate and the row-major
// covariance of `(v, a, psidot)`.
typedef struct RelkalEgoInput {
  double v;
  double a;
  double psidot;
  double cov[9];
} RelkalEgoInput;

typedef struct RelkalGramianReport {
  double det;
  double min_singular_value;
  size_t n_blocks;
  bool observable;
} RelkalGramianReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *relkal_version(void);

// Message of the last failed call on this thread, empty after a success.
// The pointer stays valid until the next library call on this thread.
const char *relkal_last_error_message(void);

// Propagates a global CTRA state over `dt` with constant yaw acceleration and jerk.
//
// # Safety
// `state` and `out` must point to 6 doubles.
enum RelkalStatus relkal_ctra_propagate(const double *state,
                                        double dt,
                                        double nu_psidd,
                                        double nu_adot,
                                        double *out);

// Relative coordinates of `target` as seen from `ego` (both global CTRA states).
//
// # Safety
// `target`, `ego` and `out` must point to 6 doubles.
enum RelkalStatus relkal_to_relative(int model,
                                     const double *target,
                                     const double *ego,
                                     double *out);

// Global CTRA target state from relative coordinates and the global ego state.
//
// # Safety
// `rel`, `ego` and `out` must point to 6 doubles.
enum RelkalStatus relkal_from_relative(int model,
                                       const double *rel,
                                       const double *ego,
                                       double *out);

// Propagates a relative state over `dt`. `noise` is the stacked
// `(target, target, ego yaw acceleration, ego jerk)` sample and may be null for zero.
//
// # Safety
// `rel` and `out` must point to 6 doubles, `noise` to 4 doubles or be null.
enum RelkalStatus relkal_propagate_relative(int model,
                                            const double *rel,
                                            const struct RelkalEgoInput *ego,
                                            double dt,
                                            const double *noise,
                                            double *out);

// Jacobians of one step: `a_out` 6×6 (state), `b_out` 6×3 (ego `v, a, psidot`),
// `g_out` 6×4 (stacked noise), all row-major. Any output may be null to skip it.
//
// # Safety
// `rel` must point to 6 doubles; non-null outputs to 36, 18 and 24 doubles.
enum RelkalStatus relkal_discrete_jacobians(int model,
                                            const double *rel,
                                            const struct RelkalEgoInput *ego,
                                            double dt,
                                            double *a_out,
                                            double *b_out,
                                            double *g_out);

// Observability Gramian report for position measurements with covariance `w` (2×2).
//
// # Safety
// `rel` must point to 6 doubles, `w` to 4, `out` to a report.
enum RelkalStatus relkal_gramian(int model,
                                 const double *rel,
                                 const struct RelkalEgoInput *ego,
                                 double dt,
                                 const double *w,
                                 struct RelkalGramianReport *out);

// Creates a tracker. `extero_cov` (2×2) and `process_cov` (4×4, stacked target and ego
// process noise) may be null for the library defaults.
//
// # Safety
// Non-null inputs must point to 4 and 16 doubles; `out` must be writable.
enum RelkalStatus relkal_tracker_new(int model,
                                     const double *extero_cov,
                                     const double *process_cov,
                                     struct RelkalTracker **out);

// Releases a tracker; null is ignored.
//
// # Safety
// `tracker` must come from [`relkal_tracker_new`] and not be used afterwards.
void relkal_tracker_free(struct RelkalTracker *tracker);

// Starts (or restarts) the track from a first position measurement `z` (2 doubles).
//
// # Safety
// `tracker` must be valid, `z` must point to 2 doubles.
enum RelkalStatus relkal_tracker_initialize(struct RelkalTracker *tracker, const double *z);

// Prediction step over `dt` given the ego input.
//
// # Safety
// `tracker` and `ego` must be valid.
enum RelkalStatus relkal_tracker_predict(struct RelkalTracker *tracker,
                                         const struct RelkalEgoInput *ego,
                                         double dt);

// Update with a relative position measurement `z` (2 doubles).
//
// # Safety
// `tracker` must be valid, `z` must point to 2 doubles.
enum RelkalStatus relkal_tracker_update(struct RelkalTracker *tracker, const double *z);

// Update with relative position and velocity `z = (x, y, vx, vy)` in the ego frame.
// `ego` is the ego motion at the measurement time; `velocity_cov` (2×2) may be null
// for the library default.
//
// # Safety
// `tracker` and `ego` must be valid, `z` must point to 4 doubles, `velocity_cov` to 4 or be null.
enum RelkalStatus relkal_tracker_update_position_velocity(struct RelkalTracker *tracker,
                                                          const double *z,
                                                          const struct RelkalEgoInput *ego,
                                                          const double *velocity_cov);

// Copies the current mean (6) and, if `cov_out` is non-null, the covariance (36, row-major).
//
// # Safety
// `tracker` must be valid, `mean_out` must point to 6 doubles, `cov_out` to 36 or be null.
enum RelkalStatus relkal_tracker_state(const struct RelkalTracker *tracker,
                                       double *mean_out,
                                       double *cov_out);

// Runs a Monte-Carlo study from a JSON configuration (null or `"{}"` for defaults) and
// returns the metrics and divergences as a JSON string to release with
// [`relkal_string_free`]. `threads` of 0 uses the global pool.
//
// # Safety
// `config_json` must be null or NUL-terminated; `out_json` must be writable.
enum RelkalStatus relkal_study_run_json(const char *config_json, size_t threads, char **out_json);

// Releases a string returned by the library; null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void relkal_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELKAL_H */
