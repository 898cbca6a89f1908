#ifndef PIKS_H
#define PIKS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a piks call.
 */
typedef enum {
  /**
   * Success.
   */
  PIKS_STATUS_OK = 0,
  /**
   * Numerical failure inside the smoother (singular innovation,
   * degenerate geometry).
   */
  PIKS_STATUS_NUMERICAL_ERROR = 1,
  /**
   * Null pointer, zero length, or otherwise invalid argument.
   */
  PIKS_STATUS_INVALID_ARGUMENT = 2,
} PiksStatus;

/**
 * Linearization strategy of the iterated smoother.
 */
typedef enum {
  /**
   * Iterated extended Kalman smoother (Taylor linearization).
   */
  PIKS_METHOD_IEKS = 0,
  /**
   * Iterated posterior linearization smoother (cubature SLR).
   */
  PIKS_METHOD_IPLS = 1,
} PiksMethod;

/**
 * Filter/smoother execution engine.
 */
typedef enum {
  /**
   * Classical sequential recursions.
   */
  PIKS_ENGINE_SEQUENTIAL = 0,
  /**
   * Parallel-in-time scan engine.
   */
  PIKS_ENGINE_PARALLEL = 1,
} PiksEngine;

/**
 * Opaque coordinated-turn / bearings-only model handle.
 */
typedef struct PiksCtModel PiksCtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build the benchmark model with its default parameters. Free with
 * [`piks_ct_model_free`].
 */
PiksCtModel *piks_ct_model_default(void);

/**
 * Build a coordinated-turn model from explicit parameters.
 *
 * `sensors_xy` holds `n_sensors` (x, y) pairs, `prior_mean` 5 entries,
 * `prior_cov` 25 entries row-major. Returns null on invalid input.
 *
 * # Safety
 * `sensors_xy` must point to `2*n_sensors` readable doubles and
 * `prior_mean`/`prior_cov` to 5 and 25 readable doubles respectively.
 */
PiksCtModel *piks_ct_model_new(double dt,
                               double q1,
                               double q2,
                               double r_std,
                               const double *sensors_xy,
                               size_t n_sensors,
                               const double *prior_mean,
                               const double *prior_cov);

/**
 * Release a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a pointer from a `piks_ct_model_*`
 * constructor that has not been freed yet.
 */
void piks_ct_model_free(PiksCtModel *model);

/**
 * Number of bearing sensors (the measurement dimension); 0 for null.
 *
 * # Safety
 * `model` must be null or a valid handle.
 */
size_t piks_ct_model_sensor_count(const PiksCtModel *model);

/**
 * Simulate an `n`-step trajectory from a seed.
 *
 * Writes `(n+1)*5` doubles to `out_states` and `n*n_sensors` doubles
 * to `out_measurements`.
 *
 * # Safety
 * Output buffers must be writable for the stated lengths.
 */
PiksStatus piks_simulate(const PiksCtModel *model,
                         size_t n,
                         uint64_t seed,
                         double *out_states,
                         double *out_measurements);

/**
 * Run an iterated smoother over `n` measurements (`n*n_sensors`
 * doubles, row-major).
 *
 * Writes smoothed means for steps `0..=n` as `(n+1)*5` doubles; when
 * `out_covariances` is non-null, also the `(n+1)*25` row-major
 * smoothed covariances. `workers = 0` selects the default budget
 * (`PIKS_WORKERS` or the available parallelism).
 *
 * # Safety
 * `measurements` must be readable for `n*n_sensors` doubles and the
 * output buffers writable for the stated lengths.
 */
PiksStatus piks_smooth(const PiksCtModel *model,
                       const double *measurements,
                       size_t n,
                       PiksMethod method,
                       PiksEngine engine,
                       size_t iterations,
                       size_t workers,
                       double *out_means,
                       double *out_covariances);

/**
 * Static description of a status code.
 */
const char *piks_status_message(PiksStatus status);

/**
 * Crate version as a static C string.
 */
const char *piks_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIKS_H */
