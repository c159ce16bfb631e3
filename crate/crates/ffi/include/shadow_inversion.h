#ifndef SHADOW_INVERSION_H
#define SHADOW_INVERSION_H

#pragma once

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SiStatus {
  SI_STATUS_OK = 0,
  SI_STATUS_NULL_POINTER = 1,
  SI_STATUS_INVALID_ARGUMENT = 2,
  SI_STATUS_DIMENSION = 3,
  SI_STATUS_SIZE_CAP = 4,
  SI_STATUS_NUMERICAL = 5,
  SI_STATUS_IO = 6,
  SI_STATUS_FORMAT = 7,
  SI_STATUS_PANIC = 8,
} SiStatus;

typedef enum SiArchitecture {
  SI_ARCHITECTURE_SEQUENTIAL = 0,
  SI_ARCHITECTURE_PARALLEL = 1,
} SiArchitecture;

/**
 * Comb Choi operator.
 */
typedef struct SiComb SiComb;

/**
 * Assembled comb optimization problem.
 */
typedef struct SiProblem SiProblem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *si_version(void);

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *si_last_error_message(void);

void si_clear_error(void);

/**
 * Reduced variable count for an observable with the given eigenvalue
 * multiplicities and `t` queries.
 *
 * # Safety
 * `multiplicities` must point to `len` values; `out` must be writable.
 */
enum SiStatus si_variable_count(const size_t *multiplicities, size_t len, size_t t, uint64_t *out);

/**
 * `(t+1)! t! d^{t+1}`.
 *
 * # Safety
 * `out` must be writable.
 */
enum SiStatus si_variable_count_bound(size_t d, size_t t, uint64_t *out);

/**
 * Run the qubit circuit checks; reports the worst shadow residual and
 * whether every check passed.
 *
 * # Safety
 * Output pointers must be writable.
 */
enum SiStatus si_verify_circuit(size_t trials,
                                size_t states,
                                uint64_t seed,
                                double tol,
                                double *out_max_residual,
                                bool *out_passed);

/**
 * Assemble a problem for a diagonal observable. `full` selects the
 * unreduced formulation.
 *
 * # Safety
 * `obs_diag` must point to `d` values; `out` must be writable.
 */
enum SiStatus si_problem_assemble(size_t d,
                                  size_t t,
                                  enum SiArchitecture architecture,
                                  const double *obs_diag,
                                  size_t obs_len,
                                  size_t samples,
                                  uint64_t seed,
                                  bool full,
                                  struct SiProblem **out);

/**
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum SiStatus si_problem_variable_count(const struct SiProblem *problem, size_t *out);

/**
 * Write the conic problem as JSON.
 *
 * # Safety
 * `problem` must be a live handle; `path` a NUL-terminated string.
 */
enum SiStatus si_problem_export_conic(const struct SiProblem *problem, const char *path);

/**
 * Write the block-level problem description as JSON.
 *
 * # Safety
 * `problem` must be a live handle; `path` a NUL-terminated string.
 */
enum SiStatus si_problem_export_reduced(const struct SiProblem *problem, const char *path);

/**
 * # Safety
 * `problem` must be NULL or a handle not yet freed.
 */
void si_problem_free(struct SiProblem *problem);

/**
 * Solve to tolerance `eps` and return the reconstructed comb together with
 * the sample-mean objective. A run that stops short of the tolerance still
 * returns its best iterate, with `out_converged` false.
 *
 * # Safety
 * `problem` must be a live handle; output pointers must be writable.
 */
enum SiStatus si_solve(const struct SiProblem *problem,
                       double eps,
                       size_t max_iter,
                       struct SiComb **out_comb,
                       double *out_objective,
                       bool *out_converged);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SiStatus si_comb_load(const char *path, struct SiComb **out);

/**
 * # Safety
 * `comb` must be a live handle; `path` a NUL-terminated string.
 */
enum SiStatus si_comb_save(const struct SiComb *comb, const char *path);

/**
 * # Safety
 * `comb` must be a live handle; output pointers must be writable.
 */
enum SiStatus si_comb_shape(const struct SiComb *comb,
                            size_t *out_d,
                            size_t *out_t,
                            enum SiArchitecture *out_architecture);

/**
 * Check the comb constraints at tolerance `tol`.
 *
 * # Safety
 * `comb` must be a live handle; output pointers must be writable.
 */
enum SiStatus si_comb_validate(const struct SiComb *comb,
                               double tol,
                               bool *out_valid,
                               double *out_max_residual);

/**
 * Monte-Carlo estimate of the mean shadow residual for a diagonal observable.
 *
 * # Safety
 * `comb` must be a live handle; `obs_diag` must point to `obs_len` values.
 */
enum SiStatus si_comb_objective(const struct SiComb *comb,
                                const double *obs_diag,
                                size_t obs_len,
                                size_t samples,
                                uint64_t seed,
                                double *out);

/**
 * # Safety
 * `comb` must be NULL or a handle not yet freed.
 */
void si_comb_free(struct SiComb *comb);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHADOW_INVERSION_H */
