#ifndef INTERLACE_H
#define INTERLACE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum InterlaceStatus {
  INTERLACE_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  INTERLACE_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  INTERLACE_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument is outside the operation's domain.
   */
  INTERLACE_STATUS_INVALID_ARGUMENT = 3,
  /**
   * An experiment config failed validation.
   */
  INTERLACE_STATUS_VALIDATION = 4,
  /**
   * A walk exceeded its step budget.
   */
  INTERLACE_STATUS_TRUNCATED = 5,
  /**
   * A linear solve failed.
   */
  INTERLACE_STATUS_NUMERICAL = 6,
  /**
   * Reading or writing failed.
   */
  INTERLACE_STATUS_IO = 7,
  /**
   * The library panicked; the message says where.
   */
  INTERLACE_STATUS_PANIC = 8,
  /**
   * Any other library error.
   */
  INTERLACE_STATUS_OTHER = 9,
} InterlaceStatus;

/**
 * Experiment configuration.
 */
typedef struct InterlaceConfig InterlaceConfig;

/**
 * Potential-kernel table.
 */
typedef struct InterlacePotential InterlacePotential;

/**
 * Finished experiment run.
 */
typedef struct InterlaceResult InterlaceResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into the library on this thread.
 */
const char *interlace_last_error(void);

/**
 * Library version and build, e.g. `0.1.0+abc1234`. Static; do not free.
 */
const char *interlace_version(void);

/**
 * Release a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void interlace_string_free(char *s);

/**
 * Solve the potential-kernel table on the disk of the given radius.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum InterlaceStatus interlace_potential_new(uint32_t radius,
                                             double tol,
                                             struct InterlacePotential **out);

/**
 * Release a table. Null is ignored.
 *
 * # Safety
 * `p` must come from [`interlace_potential_new`] and not have been freed.
 */
void interlace_potential_free(struct InterlacePotential *p);

/**
 * Potential kernel a(x, y).
 *
 * # Safety
 * `p` must be a live table and `out` valid for writes.
 */
enum InterlaceStatus interlace_potential_value(const struct InterlacePotential *p,
                                               int32_t x,
                                               int32_t y,
                                               double *out);

/**
 * Capacity of the finite set of sites `(xs[i], ys[i])`.
 *
 * # Safety
 * `xs` and `ys` must point to `len` integers each; `out` valid for writes.
 */
enum InterlaceStatus interlace_capacity(const struct InterlacePotential *p,
                                        const int32_t *xs,
                                        const int32_t *ys,
                                        size_t len,
                                        double *out);

/**
 * Harmonic measure of a finite set; `weights` receives `len` values in the
 * order of the input sites.
 *
 * # Safety
 * `xs`, `ys` and `weights` must point to `len` elements each.
 */
enum InterlaceStatus interlace_harmonic_measure(const struct InterlacePotential *p,
                                                const int32_t *xs,
                                                const int32_t *ys,
                                                size_t len,
                                                double *weights);

/**
 * Exact total-variation distance between Poisson(λ₁) and Poisson(λ₂).
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum InterlaceStatus interlace_poisson_tv(double lambda1, double lambda2, double *out);

/**
 * Default config of the named experiment (e.g. `"xi-law"`).
 *
 * # Safety
 * `experiment` must be a NUL-terminated string; `out` valid for writes.
 */
enum InterlaceStatus interlace_config_new(const char *experiment,
                                          uint64_t seed,
                                          struct InterlaceConfig **out);

/**
 * Parse a config from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` valid for writes.
 */
enum InterlaceStatus interlace_config_from_toml(const char *toml, struct InterlaceConfig **out);

/**
 * Apply a `key=value` override, as on the command line.
 *
 * # Safety
 * `config` must be live; `assignment` a NUL-terminated string.
 */
enum InterlaceStatus interlace_config_set(struct InterlaceConfig *config, const char *assignment);

/**
 * Serialize a config to TOML; free the result with [`interlace_string_free`].
 *
 * # Safety
 * `config` must be live; `out` valid for writes.
 */
enum InterlaceStatus interlace_config_to_toml(const struct InterlaceConfig *config, char **out);

/**
 * Release a config. Null is ignored.
 *
 * # Safety
 * `config` must come from this library and not have been freed.
 */
void interlace_config_free(struct InterlaceConfig *config);

/**
 * Validate and run an experiment.
 *
 * # Safety
 * `config` must be live; `out` valid for writes.
 */
enum InterlaceStatus interlace_run(const struct InterlaceConfig *config,
                                   struct InterlaceResult **out);

/**
 * Number of jobs (case × replica) and of truncated jobs in a run.
 *
 * # Safety
 * `result` must be live; the out pointers valid for writes.
 */
enum InterlaceStatus interlace_result_jobs(const struct InterlaceResult *result,
                                           uint64_t *jobs,
                                           uint64_t *truncated);

/**
 * Estimate of `metric` for the case labelled `case`; `lower`/`upper`
 * receive the confidence interval (NaN when there is none) and may be null.
 *
 * # Safety
 * `result` must be live; strings NUL-terminated; `estimate` valid for writes.
 */
enum InterlaceStatus interlace_result_aggregate(const struct InterlaceResult *result,
                                                const char *case_label,
                                                const char *metric,
                                                double *estimate,
                                                double *lower,
                                                double *upper);

/**
 * Per-replica rows as CSV; free the result with [`interlace_string_free`].
 *
 * # Safety
 * `result` must be live; `out` valid for writes.
 */
enum InterlaceStatus interlace_result_csv(const struct InterlaceResult *result, char **out);

/**
 * Full result record as JSON; free the result with [`interlace_string_free`].
 *
 * # Safety
 * `result` must be live; `out` valid for writes.
 */
enum InterlaceStatus interlace_result_json(const struct InterlaceResult *result, char **out);

/**
 * Release a result. Null is ignored.
 *
 * # Safety
 * `result` must come from [`interlace_run`] and not have been freed.
 */
void interlace_result_free(struct InterlaceResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INTERLACE_H */
