#ifndef ACKSIEGE_H
#define ACKSIEGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AcksSemantics {
  ACKS_SEMANTICS_EVERY_FLAG = 0,
  ACKS_SEMANTICS_CHARGE_ON_LOSS = 1,
} AcksSemantics;

typedef enum AcksStatus {
  ACKS_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an out-of-range argument.
   */
  ACKS_STATUS_INVALID_ARGUMENT = 1,
  /**
   * The model, budget or config was rejected.
   */
  ACKS_STATUS_CONFIG = 2,
  /**
   * A solver or series failed to converge.
   */
  ACKS_STATUS_NUMERICAL = 3,
  ACKS_STATUS_PANIC = 5,
} AcksStatus;

/**
 * A solved attacked-detector Markov chain.
 */
typedef struct AcksChain AcksChain;

/**
 * A system model together with its steady-state covariance.
 */
typedef struct AcksModel AcksModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *acks_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library on the same thread.
 */
const char *acks_last_error_message(void);

/**
 * Builds a scalar model (`Pi0 = Q`) and solves its steady state.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum AcksStatus acks_model_new_scalar(double a,
                                      double c,
                                      double q,
                                      double r,
                                      double lambda,
                                      struct AcksModel **out);

/**
 * Builds a model from the `system` and `channel` sections of a JSON
 * experiment config.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out` must be writable.
 */
enum AcksStatus acks_model_from_json(const char *config_json, struct AcksModel **out);

/**
 * # Safety
 * `m` must be NULL or a handle from this library that has not been freed.
 */
void acks_model_free(struct AcksModel *m);

/**
 * `Tr h^i(P̄)`; `i = 0` gives `Tr P̄`.
 *
 * # Safety
 * `m` must be a live model handle and `out` writable.
 */
enum AcksStatus acks_model_h_trace(const struct AcksModel *m, size_t i, double *out);

/**
 * Average covariance trace when every flag is blocked.
 *
 * # Safety
 * `m` must be a live model handle and `out` writable.
 */
enum AcksStatus acks_model_j_max(const struct AcksModel *m, double tail_tol, double *out);

/**
 * Average covariance trace of the optimal offline schedule for the budget
 * given as rational strings such as `"8"`, `"1"`, `"2"`.
 *
 * # Safety
 * `m` must be a live model handle, the strings NUL-terminated, `out` writable.
 */
enum AcksStatus acks_offline_j(const struct AcksModel *m,
                               const char *delta_high,
                               const char *delta_low,
                               const char *psi,
                               double *out);

/**
 * Builds and solves the chain for window `z0` and budget `r/t` at the
 * model's arrival rate. `(r, t) = (0, 1)` is the unattacked detector.
 *
 * # Safety
 * `m` must be a live model handle and `out` writable.
 */
enum AcksStatus acks_chain_new(const struct AcksModel *m,
                               uint32_t z0,
                               uint64_t r,
                               uint64_t t,
                               enum AcksSemantics semantics,
                               struct AcksChain **out);

/**
 * # Safety
 * `c` must be NULL or a handle from this library that has not been freed.
 */
void acks_chain_free(struct AcksChain *c);

/**
 * Number of chain states.
 *
 * # Safety
 * `c` must be a live chain handle and `out` writable.
 */
enum AcksStatus acks_chain_len(const struct AcksChain *c, size_t *out);

/**
 * Copies the stationary distribution into `buf`, which must hold
 * `acks_chain_len` doubles. States are ordered by counter, then holding time.
 *
 * # Safety
 * `c` must be a live chain handle and `buf` must point to `len` writable doubles.
 */
enum AcksStatus acks_chain_stationary(const struct AcksChain *c, double *buf, size_t len);

/**
 * Long-run average covariance trace of the chain under model `m`.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum AcksStatus acks_chain_j(const struct AcksChain *c, const struct AcksModel *m, double *out);

/**
 * Per-step rates of sent flags and delivered flags.
 *
 * # Safety
 * `c` must be a live chain handle and both outputs writable.
 */
enum AcksStatus acks_chain_flag_rates(const struct AcksChain *c,
                                      double *flag_rate,
                                      double *passed_flag_rate);

/**
 * Full analysis of a JSON experiment config; writes the JSON report.
 * Free the result with [`acks_string_free`].
 *
 * # Safety
 * `config_json` must be NUL-terminated and `out` writable.
 */
enum AcksStatus acks_analyze_json(const char *config_json, char **out);

/**
 * Monte Carlo run of a JSON experiment config; writes the JSON summary.
 * Free the result with [`acks_string_free`].
 *
 * # Safety
 * `config_json` must be NUL-terminated and `out` writable.
 */
enum AcksStatus acks_simulate_json(const char *config_json, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void acks_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ACKSIEGE_H */
