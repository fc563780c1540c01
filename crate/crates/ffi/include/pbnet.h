#ifndef PBNET_H
#define PBNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

#define PBNET_ENGINE_STANDARD 0

#define PBNET_ENGINE_MEMEFF 1

#define PBNET_ENGINE_CHECKPOINT 2

typedef enum PbnetStatus {
  PBNET_STATUS_OK = 0,
  PBNET_STATUS_NULL_POINTER = 1,
  PBNET_STATUS_INVALID_UTF8 = 2,
  PBNET_STATUS_DIMENSION = 3,
  PBNET_STATUS_ARGUMENT = 4,
  PBNET_STATUS_CONFIG = 5,
  PBNET_STATUS_NUMERIC = 6,
  PBNET_STATUS_STATE = 7,
  PBNET_STATUS_TRAINING = 8,
  PBNET_STATUS_IO = 9,
  PBNET_STATUS_PANIC = 10,
} PbnetStatus;

/**
 * Parameter store for one problem (measurement matrix and scalars).
 */
typedef struct PbnetParams PbnetParams;

/**
 * Compressed-sensing problem: dimensions, algorithm and layer settings.
 */
typedef struct PbnetProblem PbnetProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *pbnet_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length including the NUL,
 * or 0 when there is no error.
 *
 * # Safety
 * `buf` must be NULL or valid for `len` bytes.
 */
size_t pbnet_last_error_message(char *buf, size_t len);

/**
 * Parses a problem description (JSON object with the keys of the `problem`
 * section of a run config; `"{}"` gives the defaults).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum PbnetStatus pbnet_problem_from_json(const char *json, struct PbnetProblem **out);

/**
 * # Safety
 * `problem` must be NULL or a handle from [`pbnet_problem_from_json`] not yet freed.
 */
void pbnet_problem_free(struct PbnetProblem *problem);

/**
 * Writes the measurement count `m`, signal length `n` and layer count.
 *
 * # Safety
 * `problem` must be a live handle; output pointers must be valid for writes.
 */
enum PbnetStatus pbnet_problem_dims(const struct PbnetProblem *problem,
                                    size_t *m,
                                    size_t *n,
                                    size_t *n_layers);

/**
 * Initial parameters: Gaussian measurement matrix drawn from `seed`.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be valid for writes.
 */
enum PbnetStatus pbnet_params_init(const struct PbnetProblem *problem,
                                   uint64_t seed,
                                   struct PbnetParams **out);

/**
 * # Safety
 * `params` must be NULL or a handle from [`pbnet_params_init`] not yet freed.
 */
void pbnet_params_free(struct PbnetParams *params);

/**
 * Copies the row-major `m × n` measurement matrix into `out` (`len = m·n`).
 *
 * # Safety
 * `params` must be a live handle; `out` must be valid for `len` doubles.
 */
enum PbnetStatus pbnet_params_matrix(const struct PbnetParams *params, double *out, size_t len);

/**
 * Replaces the measurement matrix with `len = m·n` row-major values.
 *
 * # Safety
 * `params` must be a live handle; `values` must be valid for `len` doubles.
 */
enum PbnetStatus pbnet_params_set_matrix(struct PbnetParams *params,
                                         const double *values,
                                         size_t len);

/**
 * Measures `x_true` with the current matrix and runs the unrolled network;
 * writes the `n`-vector reconstruction to `out`.
 *
 * # Safety
 * Handles must be live; `x_true` and `out` must be valid for `n` doubles.
 */
enum PbnetStatus pbnet_reconstruct(const struct PbnetProblem *problem,
                                   const struct PbnetParams *params,
                                   const double *x_true,
                                   size_t n,
                                   double *out);

/**
 * Loss `(1/n)‖x̂ − x_true‖²` and its gradient with respect to the
 * measurement matrix through the chosen engine (`PBNET_ENGINE_*`).
 * `peak_signals` (nullable) receives the engine's peak stored-signal count.
 *
 * # Safety
 * Handles must be live; `x_true` valid for `n` doubles, `grad_a` for
 * `grad_len = m·n` doubles, `loss` for one double.
 */
enum PbnetStatus pbnet_sample_gradient(const struct PbnetProblem *problem,
                                       const struct PbnetParams *params,
                                       const double *x_true,
                                       size_t n,
                                       uint32_t engine,
                                       size_t checkpoints,
                                       double *loss,
                                       double *grad_a,
                                       size_t grad_len,
                                       size_t *peak_signals);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PBNET_H */
