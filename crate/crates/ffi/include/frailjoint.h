#ifndef FRAILJOINT_H
#define FRAILJOINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FjStatus {
  FJ_STATUS_OK = 0,
  FJ_STATUS_NULL_POINTER = 1,
  FJ_STATUS_VALIDATION = 2,
  FJ_STATUS_NUMERIC = 3,
  FJ_STATUS_IO = 4,
  FJ_STATUS_PANIC = 5,
} FjStatus;

typedef struct FjChain FjChain;

typedef struct FjDataset FjDataset;

typedef struct FjPriorSpec FjPriorSpec;

/**
 * Sampler settings; `adapt_window == 0` means all history.
 */
typedef struct FjMcmcConfig {
  size_t iterations;
  size_t burn_in;
  size_t thin;
  size_t adapt_start;
  size_t adapt_interval;
  size_t adapt_window;
  double proposal_scale;
  double jitter;
  uint64_t seed;
} FjMcmcConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *fj_last_error_message(void);

/**
 * Loads a dataset CSV; the grid is the sorted distinct monitoring times.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum FjStatus fj_dataset_from_csv(const char *path, struct FjDataset **out);

/**
 * Builds a dataset from column arrays; `x1` is `n × p` and `x2` is `n × q`, row-major.
 *
 * # Safety
 * Each array must hold the stated number of elements and `out` must be valid.
 */
enum FjStatus fj_dataset_from_arrays(size_t n,
                                     size_t p,
                                     size_t q,
                                     const double *u,
                                     const uint8_t *delta,
                                     const uint64_t *n_count,
                                     const double *x1,
                                     const double *x2,
                                     struct FjDataset **out);

/**
 * # Safety
 * `data` must come from a dataset constructor and not be used afterwards.
 */
void fj_dataset_free(struct FjDataset *data);

/**
 * Number of subjects, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t fj_dataset_len(const struct FjDataset *data);

/**
 * Working-scale parameter dimension `2n′ + p + q + 1`, or 0 for a null handle.
 *
 * # Safety
 * `data` must be null or a live handle.
 */
size_t fj_dataset_dim(const struct FjDataset *data);

/**
 * # Safety
 * `theta` must hold `len` values and `out` must be valid.
 */
enum FjStatus fj_log_likelihood(const struct FjDataset *data,
                                const double *theta,
                                size_t len,
                                double *out);

/**
 * Independent N(0, 100) priors matching the dataset dimensions.
 *
 * # Safety
 * `data` must be a live handle and `out` valid.
 */
enum FjStatus fj_prior_default(const struct FjDataset *data, struct FjPriorSpec **out);

/**
 * Reads a TOML prior file validated against the dataset.
 *
 * # Safety
 * `path` must be NUL-terminated, `data` a live handle and `out` valid.
 */
enum FjStatus fj_prior_from_toml(const char *path,
                                 const struct FjDataset *data,
                                 struct FjPriorSpec **out);

/**
 * # Safety
 * `prior` must come from a prior constructor and not be used afterwards.
 */
void fj_prior_free(struct FjPriorSpec *prior);

/**
 * # Safety
 * Handles must be live, `theta` must hold `len` values and `out` must be valid.
 */
enum FjStatus fj_log_posterior(const struct FjDataset *data,
                               const struct FjPriorSpec *prior,
                               const double *theta,
                               size_t len,
                               double *out);

/**
 * 20,000 iterations, 4,000 burn-in, thinning 10.
 */
struct FjMcmcConfig fj_mcmc_desk_scale(void);

/**
 * MAP search followed by the adaptive sampler.
 *
 * # Safety
 * Handles and `config` must be valid; `out` must be valid.
 */
enum FjStatus fj_fit(const struct FjDataset *data,
                     const struct FjPriorSpec *prior,
                     const struct FjMcmcConfig *config,
                     struct FjChain **out);

/**
 * Retained draws, or 0 for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
size_t fj_chain_rows(const struct FjChain *chain);

/**
 * # Safety
 * `chain` must be null or a live handle.
 */
size_t fj_chain_dim(const struct FjChain *chain);

/**
 * Post-burn-in acceptance rate, or NaN for a null handle.
 *
 * # Safety
 * `chain` must be null or a live handle.
 */
double fj_chain_acceptance_rate(const struct FjChain *chain);

/**
 * Copies the draws row-major into `buf`, which must hold `rows × dim` values.
 *
 * # Safety
 * `buf` must be writable for `len` values.
 */
enum FjStatus fj_chain_copy_draws(const struct FjChain *chain, double *buf, size_t len);

/**
 * # Safety
 * `chain` must come from [`fj_fit`] and not be used afterwards.
 */
void fj_chain_free(struct FjChain *chain);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRAILJOINT_H */
