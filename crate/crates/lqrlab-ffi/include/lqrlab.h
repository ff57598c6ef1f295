#ifndef LQRLAB_H
#define LQRLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every API call.
 */
enum LqrlabStatus
#ifdef __cplusplus
  : int32_t
#endif // __cplusplus
 {
  LqrlabStatus_Ok = 0,
  /**
   * A pointer argument was null.
   */
  LqrlabStatus_NullPointer = 1,
  /**
   * Bad dimensions, horizon, window, or non-UTF-8 path.
   */
  LqrlabStatus_InvalidArgument = 2,
  /**
   * Divergence, loss of positive definiteness, or ill-conditioning.
   */
  LqrlabStatus_NumericalFailure = 3,
  /**
   * A configured size cap was exceeded.
   */
  LqrlabStatus_SizeExceeded = 4,
  /**
   * File could not be read, written, or parsed.
   */
  LqrlabStatus_Io = 5,
  /**
   * Internal panic caught at the boundary.
   */
  LqrlabStatus_Panic = 6,
};
#ifndef __cplusplus
typedef int32_t LqrlabStatus;
#endif // __cplusplus

/**
 * Opaque problem instance: system, cost schedule, bounds, disturbances.
 */
typedef struct LqrlabInstance LqrlabInstance;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Generate a seeded random instance with the default two-state profile.
 *
 * On success `*out` owns the handle; release it with
 * [`lqrlab_instance_free`].
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
LqrlabStatus lqrlab_instance_generate(uint64_t seed,
                                      uintptr_t horizon,
                                      struct LqrlabInstance **out);

/**
 * Load an instance from the documented text format.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for a pointer
 * write.
 */
LqrlabStatus lqrlab_instance_load(const char *path, struct LqrlabInstance **out);

/**
 * Write an instance to the documented text format.
 *
 * # Safety
 * `inst` must be a live handle from this library and `path` a
 * NUL-terminated string.
 */
LqrlabStatus lqrlab_instance_save(const struct LqrlabInstance *inst, const char *path);

/**
 * Release a handle. Null is a no-op.
 *
 * # Safety
 * `inst` must be null or a handle from this library not freed before.
 */
void lqrlab_instance_free(struct LqrlabInstance *inst);

/**
 * Horizon `T` of the instance.
 *
 * # Safety
 * `inst` must be a live handle; `out` valid for a write.
 */
LqrlabStatus lqrlab_instance_horizon(const struct LqrlabInstance *inst, uintptr_t *out);

/**
 * Stability constants `τ`, `ρ`, `γ` of the instance's cost bounds.
 *
 * # Safety
 * `inst` must be a live handle; the out-pointers valid for writes.
 */
LqrlabStatus lqrlab_constants(const struct LqrlabInstance *inst,
                              double *tau,
                              double *rho,
                              double *gamma);

/**
 * Hindsight-optimal total cost `J*`.
 *
 * # Safety
 * `inst` must be a live handle; `out` valid for a write.
 */
LqrlabStatus lqrlab_optimal_cost(const struct LqrlabInstance *inst, double *out);

/**
 * Run the windowed controller with lookahead `w` and prediction-noise
 * amplitude `snr` (0 means accurate predictions), writing the realized
 * cost, the optimal cost and their difference.
 *
 * # Safety
 * `inst` must be a live handle; the out-pointers valid for writes.
 */
LqrlabStatus lqrlab_mpc_regret(const struct LqrlabInstance *inst,
                               uintptr_t w,
                               double snr,
                               double *j_mpc,
                               double *j_star,
                               double *regret);

/**
 * Static description of a status code.
 */
const char *lqrlab_status_message(LqrlabStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LQRLAB_H */
