#ifndef DRGBT_H
#define DRGBT_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum DrgbtStatus {
  DRGBT_STATUS_OK = 0,
  DRGBT_STATUS_NULL_POINTER = 1,
  DRGBT_STATUS_INVALID_ARGUMENT = 2,
  DRGBT_STATUS_CONFIG = 3,
  DRGBT_STATUS_INFEASIBLE = 4,
  DRGBT_STATUS_IO = 5,
  DRGBT_STATUS_SCENARIO_FAILED = 6,
  DRGBT_STATUS_PANIC = 7,
} DrgbtStatus;

/**
 * How a simulated run ended.
 */
typedef enum DrgbtOutcome {
  DRGBT_OUTCOME_GOAL = 0,
  DRGBT_OUTCOME_COLLISION_I = 1,
  DRGBT_OUTCOME_COLLISION_II = 2,
  DRGBT_OUTCOME_TIMEOUT = 3,
} DrgbtOutcome;

/**
 * Run configuration.
 */
typedef struct DrgbtConfig DrgbtConfig;

/**
 * Serial-chain robot model.
 */
typedef struct DrgbtModel DrgbtModel;

/**
 * Time-parameterized joint trajectory.
 */
typedef struct DrgbtSpline DrgbtSpline;

/**
 * Summary of one simulated run.
 */
typedef struct DrgbtRunMetrics {
  enum DrgbtOutcome outcome;
  bool success;
  double algorithm_time;
  double path_length;
  uint64_t iterations;
  uint64_t deadline_overruns;
  uint64_t replans_requested;
  uint64_t replans_succeeded;
} DrgbtRunMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *drgbt_last_error(void);

/**
 * Built-in model: `"xarm6"`, `"planar2"` or `"planar3"`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrgbtStatus drgbt_model_from_preset(const char *name, struct DrgbtModel **out);

/**
 * Model from a TOML description.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrgbtStatus drgbt_model_from_toml(const char *text, struct DrgbtModel **out);

/**
 * # Safety
 * `model` must come from this library or be NULL.
 */
void drgbt_model_free(struct DrgbtModel *model);

/**
 * Number of joints, 0 for NULL.
 *
 * # Safety
 * `model` must come from this library or be NULL.
 */
uintptr_t drgbt_model_dof(const struct DrgbtModel *model);

/**
 * Writes the `dof + 1` skeleton points (joint origins, then the tool
 * tip) of configuration `q` to `points`, three coordinates each.
 *
 * # Safety
 * `q` must hold `n` values and `points` room for `3 * (n + 1)`.
 */
enum DrgbtStatus drgbt_forward_kinematics(const struct DrgbtModel *model,
                                          const double *q,
                                          uintptr_t n,
                                          double *points);

/**
 * Shortest quintic within the model's kinematic limits from state
 * `(q0, v0, a0)` to `qf` with final velocity `vf` and zero final
 * acceleration. `v0`, `a0` and `vf` may be NULL for zeros.
 *
 * # Safety
 * Non-NULL arrays must hold `n` values; `out` must be valid.
 */
enum DrgbtStatus drgbt_fit_quintic(const struct DrgbtModel *model,
                                   const double *q0,
                                   const double *v0,
                                   const double *a0,
                                   const double *qf,
                                   const double *vf,
                                   uintptr_t n,
                                   struct DrgbtSpline **out);

/**
 * # Safety
 * `spline` must come from this library or be NULL.
 */
void drgbt_spline_free(struct DrgbtSpline *spline);

/**
 * Duration in seconds, NaN for NULL.
 *
 * # Safety
 * `spline` must come from this library or be NULL.
 */
double drgbt_spline_duration(const struct DrgbtSpline *spline);

/**
 * Position, velocity and acceleration at `t` seconds from the start.
 * Any output pointer may be NULL.
 *
 * # Safety
 * Non-NULL outputs must have room for `n` values.
 */
enum DrgbtStatus drgbt_spline_evaluate(const struct DrgbtSpline *spline,
                                       double t,
                                       uintptr_t n,
                                       double *q,
                                       double *v,
                                       double *a);

/**
 * Number of horizon nodes for critical distance `d_c`.
 */
uintptr_t drgbt_horizon_size(double d_c, uintptr_t n_h0, uintptr_t dof, double d_crit);

/**
 * Configuration from TOML text; an empty string gives the defaults.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrgbtStatus drgbt_config_from_toml(const char *text, struct DrgbtConfig **out);

/**
 * # Safety
 * `config` must come from this library or be NULL.
 */
void drgbt_config_free(struct DrgbtConfig *config);

/**
 * Generates the scenario for `seed` and runs it to completion.
 *
 * # Safety
 * `config` must come from this library and `out` be valid.
 */
enum DrgbtStatus drgbt_run_scenario(const struct DrgbtConfig *config,
                                    uint64_t seed,
                                    struct DrgbtRunMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRGBT_H */
