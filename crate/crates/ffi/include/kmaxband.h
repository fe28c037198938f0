#ifndef KMAXBAND_H
#define KMAXBAND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function.
 */
typedef enum KmaxStatus {
  KMAX_STATUS_OK = 0,
  KMAX_STATUS_NULL_POINTER = 1,
  KMAX_STATUS_INVALID_INPUT = 2,
  KMAX_STATUS_VALIDATION = 3,
  KMAX_STATUS_CAPACITY = 4,
  KMAX_STATUS_SIZE = 5,
  KMAX_STATUS_CONSISTENCY = 6,
  KMAX_STATUS_MODEL = 7,
  KMAX_STATUS_SOLVER = 8,
  KMAX_STATUS_CONFIG = 9,
  KMAX_STATUS_IO = 10,
  /**
   * A Rust panic was caught at the boundary.
   */
  KMAX_STATUS_PANIC = 11,
} KmaxStatus;

/**
 * Opaque discretized UCB learner.
 */
typedef struct KmaxDck KmaxDck;

/**
 * Opaque optimistic MLE learner.
 */
typedef struct KmaxMle KmaxMle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length, 0 if none.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t kmax_last_error_message(char *buf, size_t len);

/**
 * Number of bins `M` for width `epsilon`, 0 when `epsilon` is invalid.
 */
size_t kmax_grid_bins(double epsilon);

/**
 * Discrete expected maximum of `subset` under bin masses `p` (`n x M`,
 * row-major, `M = kmax_grid_bins(epsilon)`).
 *
 * # Safety
 * `p` must hold `n * M` values, `subset` `k` values, `out` one.
 */
enum KmaxStatus kmax_discrete_reward(const double *p,
                                     size_t n,
                                     double epsilon,
                                     const size_t *subset,
                                     size_t k,
                                     double *out);

/**
 * Same objective evaluated on the binary-arm parameters `q`.
 *
 * # Safety
 * As for [`kmax_discrete_reward`].
 */
enum KmaxStatus kmax_binary_reward(const double *q,
                                   size_t n,
                                   double epsilon,
                                   const size_t *subset,
                                   size_t k,
                                   double *out);

/**
 * Converts bin masses to conditional bin probabilities, both `n x M`.
 *
 * # Safety
 * `p` and `q_out` must each hold `n * M` values.
 */
enum KmaxStatus kmax_p_to_q(const double *p, size_t n, double epsilon, double *q_out);

/**
 * Creates a learner. `greedy_oracle` selects the greedy maximiser instead
 * of exact enumeration; `bonus_uses_round` puts the current round rather
 * than the horizon inside the bonus logarithm.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum KmaxStatus kmax_dck_new(size_t n,
                             size_t k,
                             double epsilon,
                             double lipschitz,
                             uint64_t horizon,
                             bool greedy_oracle,
                             bool bonus_uses_round,
                             struct KmaxDck **out);

/**
 * Writes the next action (`k` sorted indices) into `subset_out`.
 *
 * # Safety
 * `h` must come from [`kmax_dck_new`]; `subset_out` must hold `k` values.
 */
enum KmaxStatus kmax_dck_select(struct KmaxDck *h, size_t *subset_out, size_t k);

/**
 * Feeds back the maximum `reward` and the index of the arm that produced it.
 *
 * # Safety
 * `h` must come from [`kmax_dck_new`]; `subset` must hold `k` values.
 */
enum KmaxStatus kmax_dck_update(struct KmaxDck *h,
                                const size_t *subset,
                                size_t k,
                                double reward,
                                size_t winner);

/**
 * Current estimate `q_hat(i, j)`, `j` 1-based.
 *
 * # Safety
 * `h` must come from [`kmax_dck_new`]; `out` must be valid for one write.
 */
enum KmaxStatus kmax_dck_q_hat(struct KmaxDck *h, size_t i, size_t j, double *out);

/**
 * # Safety
 * `h` must be null or come from [`kmax_dck_new`], and not be used again.
 */
void kmax_dck_free(struct KmaxDck *h);

/**
 * Creates a learner over `n` arms with `d`-dimensional features (`n x d`,
 * row-major). `l_star` bounds the expected loss of every subset. A
 * nonpositive `delta` means `1 / horizon`.
 *
 * # Safety
 * `features` must hold `n * d` values; `out` must be valid for one write.
 */
enum KmaxStatus kmax_mle_new(const double *features,
                             size_t n,
                             size_t d,
                             size_t k,
                             double v_bound,
                             double l_star,
                             uint64_t horizon,
                             double delta,
                             struct KmaxMle **out);

/**
 * Fits the MLE and writes the next action into `subset_out`.
 *
 * # Safety
 * `h` must come from [`kmax_mle_new`]; `subset_out` must hold `k` values.
 */
enum KmaxStatus kmax_mle_select(struct KmaxMle *h, size_t *subset_out, size_t k);

/**
 * Records the loss observed for `subset`.
 *
 * # Safety
 * `h` must come from [`kmax_mle_new`]; `subset` must hold `k` values.
 */
enum KmaxStatus kmax_mle_observe(struct KmaxMle *h, const size_t *subset, size_t k, double loss);

/**
 * Writes the most recent fitted parameter (length `d`).
 *
 * # Safety
 * `h` must come from [`kmax_mle_new`]; `theta_out` must hold `d` values.
 */
enum KmaxStatus kmax_mle_theta_hat(struct KmaxMle *h, double *theta_out, size_t d);

/**
 * # Safety
 * `h` must be null or come from [`kmax_mle_new`], and not be used again.
 */
void kmax_mle_free(struct KmaxMle *h);

/**
 * Runs the experiment described by the TOML text `config` and returns the
 * regret CSV as a newly allocated string in `csv_out`, to be released with
 * [`kmax_string_free`]. `workers = 0` keeps the configured pool size.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `csv_out` valid for one write.
 */
enum KmaxStatus kmax_run_experiment(const char *config, size_t workers, char **csv_out);

/**
 * # Safety
 * `s` must be null or come from this library, and not be used again.
 */
void kmax_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KMAXBAND_H */
