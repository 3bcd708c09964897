/* C interface to the discrepancy measurement toolkit. */

#ifndef DISCREP_H
#define DISCREP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code returned by every fallible call.
 */
typedef enum DiscrepStatus {
  /**
   * The call succeeded and any output parameters are filled in.
   */
  DISCREP_STATUS_OK = 0,
  /**
   * An argument was rejected: null pointer, out-of-range value, or
   * mismatched handles.
   */
  DISCREP_STATUS_PARAM_ERROR = 2,
  /**
   * An exact computation would exceed the given support cap.
   */
  DISCREP_STATUS_CAPACITY_ERROR = 3,
  /**
   * An internal invariant failed; the library state is still sound.
   */
  DISCREP_STATUS_INTERNAL_ERROR = 4,
} DiscrepStatus;

/**
 * Opaque handle to a synthetic ground-truth sequence source.
 */
typedef struct DiscrepSource DiscrepSource;

/**
 * Discrepancy estimates computed from two score sets.
 */
typedef struct DiscrepReport {
  /**
   * Mean discriminator score on the real side.
   */
  double u_d;
  /**
   * Mean discriminator score on the generated side.
   */
  double u_theta;
  /**
   * Approximate discrepancy `u_d - u_theta`.
   */
  double d_a;
  /**
   * Absolute discrepancy: accuracy minus error rate at the threshold.
   */
  double d_s;
  double accuracy;
  /**
   * How far the two means are from summing to one.
   */
  double constraint_residual;
  double ci_da_lo;
  double ci_da_hi;
  double ci_ds_lo;
  double ci_ds_hi;
  size_t n_real;
  size_t n_gen;
  double threshold;
  /**
   * True when the classifier landed below chance; `d_s` is reported
   * unclipped so a failed fit stays visible.
   */
  bool below_chance;
} DiscrepReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library as a static NUL-terminated string.
 */
const char *discrep_version(void);

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *discrep_last_error_message(void);

/**
 * Creates a seeded random source over `vocab_size` content tokens with
 * order-`order` transitions and sequences of at most `l_max` tokens. On
 * success the handle is written to `out` and must be released with
 * [`discrep_source_free`].
 *
 * # Safety
 *
 * `out` must be a valid pointer to writable storage for one pointer.
 */
enum DiscrepStatus discrep_source_new(uint64_t seed,
                                      size_t vocab_size,
                                      size_t order,
                                      size_t l_max,
                                      double concentration,
                                      struct DiscrepSource **out);

/**
 * Releases a source handle. A null handle is ignored.
 *
 * # Safety
 *
 * `source` must be null or a handle returned by [`discrep_source_new`]
 * that has not been freed yet.
 */
void discrep_source_free(struct DiscrepSource *source);

/**
 * Exact probability of a sequence of 0-based content-token indices under
 * the source. Sequences are 1 to `l_max` tokens long; the empty sequence
 * carries no probability mass and is rejected.
 *
 * # Safety
 *
 * `tokens` must point to `len` readable `uint32_t`s and `out` must point
 * to one writable double.
 */
enum DiscrepStatus discrep_source_exact_prob(const struct DiscrepSource *source,
                                             const uint32_t *tokens,
                                             size_t len,
                                             double *out);

/**
 * Exact total variation distance between two sources over their shared
 * enumerable support, refusing supports larger than `cap`.
 *
 * # Safety
 *
 * Both handles must be valid and `out` must point to one writable double.
 */
enum DiscrepStatus discrep_tv_exact(const struct DiscrepSource *real,
                                    const struct DiscrepSource *model,
                                    size_t cap,
                                    double *out);

/**
 * Exact approximate-discrepancy value of the optimal discriminator between
 * two sources, refusing supports larger than `cap`.
 *
 * # Safety
 *
 * Both handles must be valid and `out` must point to one writable double.
 */
enum DiscrepStatus discrep_da_exact(const struct DiscrepSource *real,
                                    const struct DiscrepSource *model,
                                    size_t cap,
                                    double *out);

/**
 * Monte Carlo estimate of the absolute discrepancy under the optimal
 * discriminator, using `n >= 100` draws from the real source.
 *
 * # Safety
 *
 * Both handles must be valid and `out` must point to one writable double.
 */
enum DiscrepStatus discrep_ds_estimate(const struct DiscrepSource *real,
                                       const struct DiscrepSource *model,
                                       size_t cap,
                                       size_t n,
                                       uint64_t seed,
                                       double *out);

/**
 * Computes the full discrepancy report from two arrays of discriminator
 * scores in `[0, 1]`, with `resamples >= 200` bootstrap resamples for the
 * confidence intervals.
 *
 * # Safety
 *
 * `real_scores` must point to `n_real` readable doubles, `gen_scores` to
 * `n_gen` readable doubles, and `out` to one writable report.
 */
enum DiscrepStatus discrep_report_compute(const double *real_scores,
                                          size_t n_real,
                                          const double *gen_scores,
                                          size_t n_gen,
                                          double threshold,
                                          size_t resamples,
                                          uint64_t seed,
                                          struct DiscrepReport *out);

/**
 * Exponential moving average with smoothing factor `alpha` in `(0, 1]`,
 * written elementwise to `out`.
 *
 * # Safety
 *
 * `values` must point to `len` readable doubles and `out` to `len`
 * writable doubles; the regions may alias.
 */
enum DiscrepStatus discrep_ema(const double *values, size_t len, double alpha, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISCREP_H */
