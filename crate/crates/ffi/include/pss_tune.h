#ifndef PSS_TUNE_H
#define PSS_TUNE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum PssStatus {
  PSS_STATUS_OK = 0,
  PSS_STATUS_NULL_POINTER = 1,
  PSS_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed scenario or arguments.
   */
  PSS_STATUS_INVALID_INPUT = 3,
  /**
   * Newton, power flow or sensitivity failure.
   */
  PSS_STATUS_NUMERICAL = 4,
  PSS_STATUS_IO = 5,
  /**
   * Buffer too small or index out of range.
   */
  PSS_STATUS_OUT_OF_RANGE = 6,
  /**
   * The tuner stopped on a failed line search; outputs hold the best point.
   */
  PSS_STATUS_LINE_SEARCH_FAILURE = 7,
  PSS_STATUS_PANIC = 8,
} PssStatus;

/**
 * A loaded scenario with its built model.
 */
typedef struct PssScenario PssScenario;

/**
 * A simulated trajectory.
 */
typedef struct PssTrajectory PssTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null. Valid until the next call.
 */
const char *pss_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pss_version(void);

/**
 * Loads a scenario TOML file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PssStatus pss_scenario_load(const char *path, struct PssScenario **out);

/**
 * Parses a scenario from TOML text. Relative case paths resolve against
 * the working directory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be writable.
 */
enum PssStatus pss_scenario_from_toml(const char *text, struct PssScenario **out);

/**
 * The bundled 9-bus bus-9 fault scenario, with or without the reference
 * stabilizers on G2 and G3.
 *
 * # Safety
 * `out` must be writable.
 */
enum PssStatus pss_scenario_nominal(bool with_pss, struct PssScenario **out);

/**
 * # Safety
 * `scenario` must come from a `pss_scenario_*` constructor or be null.
 */
void pss_scenario_free(struct PssScenario *scenario);

/**
 * Number of tunable parameters.
 *
 * # Safety
 * `scenario` must be a live handle; `out` must be writable.
 */
enum PssStatus pss_scenario_param_count(const struct PssScenario *scenario, size_t *out);

/**
 * Copies the scenario's parameter vector into `buf`.
 *
 * # Safety
 * `buf` must hold `len` writable doubles.
 */
enum PssStatus pss_scenario_params(const struct PssScenario *scenario, double *buf, size_t len);

/**
 * Simulates with parameters `lambda` (null for the scenario's own).
 *
 * # Safety
 * `lambda` is null or holds `len` doubles; `out` must be writable.
 */
enum PssStatus pss_simulate(const struct PssScenario *scenario,
                            const double *lambda,
                            size_t len,
                            struct PssTrajectory **out);

/**
 * # Safety
 * `traj` must come from [`pss_simulate`] or be null.
 */
void pss_trajectory_free(struct PssTrajectory *traj);

/**
 * Number of samples, including duplicated junction samples.
 *
 * # Safety
 * `traj` must be a live handle; `out` must be writable.
 */
enum PssStatus pss_trajectory_len(const struct PssTrajectory *traj, size_t *out);

/**
 * Length of the augmented state vector.
 *
 * # Safety
 * `traj` must be a live handle; `out` must be writable.
 */
enum PssStatus pss_trajectory_state_dim(const struct PssTrajectory *traj, size_t *out);

/**
 * Copies the sample times into `buf`.
 *
 * # Safety
 * `buf` must hold `len` writable doubles.
 */
enum PssStatus pss_trajectory_times(const struct PssTrajectory *traj, double *buf, size_t len);

/**
 * Copies the time series of augmented-state entry `index` into `buf`.
 *
 * # Safety
 * `buf` must hold `len` writable doubles.
 */
enum PssStatus pss_trajectory_state(const struct PssTrajectory *traj,
                                    size_t index,
                                    double *buf,
                                    size_t len);

/**
 * Objective value and, when `grad` is non-null, its gradient.
 *
 * # Safety
 * `lambda` is null or holds `len` doubles; `grad` is null or holds
 * `grad_len` writable doubles; `value` must be writable.
 */
enum PssStatus pss_objective(const struct PssScenario *scenario,
                             const double *lambda,
                             size_t len,
                             double *value,
                             double *grad,
                             size_t grad_len);

/**
 * Tunes from the scenario's parameters with its tuner settings; writes the
 * final parameters and objective value.
 *
 * # Safety
 * `lambda_out` must hold `len` writable doubles; `value` must be writable.
 */
enum PssStatus pss_tune(const struct PssScenario *scenario,
                        double *lambda_out,
                        size_t len,
                        double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSS_TUNE_H */
