#ifndef BUSTIME_H
#define BUSTIME_H

/* Generated by cbindgen from the bustime-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum BustimeStatus {
  BUSTIME_STATUS_OK = 0,
  BUSTIME_STATUS_NULL_POINTER = 1,
  BUSTIME_STATUS_INVALID_UTF8 = 2,
  BUSTIME_STATUS_LOAD_FAILED = 3,
  BUSTIME_STATUS_BAD_ARGUMENT = 4,
  BUSTIME_STATUS_UNTRAINED_STOP = 5,
  BUSTIME_STATUS_PREDICT_FAILED = 6,
} BustimeStatus;

/**
 * Opaque handle to a loaded model bank.
 */
typedef struct BustimeBank BustimeBank;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bustime_version(void);

/**
 * Copy the current thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
size_t bustime_last_error(char *buf, size_t len);

/**
 * Load a model bank from a model file written by `bustime train`.
 *
 * On success writes a new handle into `out`; free it with
 * [`bustime_bank_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BustimeStatus bustime_bank_load(const char *path, struct BustimeBank **out);

/**
 * Release a bank handle. A null handle is a no-op.
 *
 * # Safety
 * `bank` must be null or a handle from [`bustime_bank_load`], not yet freed.
 */
void bustime_bank_free(struct BustimeBank *bank);

/**
 * Number of per-stop models in the bank (stops 0..count-1), or -1 on null.
 *
 * # Safety
 * `bank` must be null or a live handle from [`bustime_bank_load`].
 */
int64_t bustime_bank_stop_count(const struct BustimeBank *bank);

/**
 * Copy the bank's route id into `buf` (NUL-terminated, truncated). Returns
 * the full id length in bytes, or -1 on null.
 *
 * # Safety
 * `bank` must be a live handle; `buf` null or at least `len` writable bytes.
 */
int64_t bustime_bank_route_id(const struct BustimeBank *bank, char *buf, size_t len);

/**
 * Distance from origin of stop `k` in meters, written to `out`.
 *
 * # Safety
 * `bank` must be a live handle and `out` a valid pointer.
 */
enum BustimeStatus bustime_bank_stop_distance(const struct BustimeBank *bank,
                                              size_t k,
                                              double *out);

/**
 * Predict cumulative travel times from stop `k`.
 *
 * `departure_epoch_s` is the bus's interpolated passage of the stop, as
 * local civil seconds since 1970-01-01. `obs_dist`/`obs_t` carry `n_obs`
 * observations beyond the stop (meters, minutes); the mixed-model kind
 * requires at least one. Predictions for the `n_targets` target distances
 * (meters beyond the stop) are written to `out` in minutes. The
 * previous-bus feature is imputed from the training table.
 *
 * # Safety
 * `bank` must be a live handle; `obs_dist`/`obs_t` must hold `n_obs`
 * doubles (or be null when `n_obs` is 0); `targets` must hold `n_targets`
 * doubles and `out` must have room for `n_targets` doubles.
 */
enum BustimeStatus bustime_predict(const struct BustimeBank *bank,
                                   size_t k,
                                   int64_t departure_epoch_s,
                                   const double *obs_dist,
                                   const double *obs_t,
                                   size_t n_obs,
                                   const double *targets,
                                   size_t n_targets,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BUSTIME_H */
