#ifndef DYNLAB_H
#define DYNLAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum DynlabStatus {
  DYNLAB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DYNLAB_STATUS_NULL_ARGUMENT = 1,
  /**
   * Malformed argument, configuration or specification.
   */
  DYNLAB_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The input data could not be read or does not support the request.
   */
  DYNLAB_STATUS_DATA_ERROR = 3,
  /**
   * The optimizer stopped before convergence.
   */
  DYNLAB_STATUS_NOT_CONVERGED = 4,
  /**
   * The caller's buffer is shorter than the result.
   */
  DYNLAB_STATUS_BUFFER_TOO_SMALL = 5,
  /**
   * An internal error; the handle arguments are left untouched.
   */
  DYNLAB_STATUS_INTERNAL = 6,
} DynlabStatus;

typedef enum DynlabIndexMethod {
  DYNLAB_INDEX_METHOD_ZSCORE = 0,
  DYNLAB_INDEX_METHOD_PCA = 1,
} DynlabIndexMethod;

/**
 * Estimated model together with the design it was fitted on.
 */
typedef struct DynlabFit DynlabFit;

/**
 * Loaded or simulated panel.
 */
typedef struct DynlabPanel DynlabPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer stays
 * valid until the next call into the library on the same thread.
 */
const char *dynlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dynlab_version(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void dynlab_string_free(char *s);

/**
 * Reads a panel CSV.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_panel` must be writable.
 */
enum DynlabStatus dynlab_panel_load(const char *path, struct DynlabPanel **out_panel);

/**
 * Simulates a panel from a generator configuration (JSON; null for the
 * defaults). The seed overrides the configuration's.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out_panel` must be writable.
 */
enum DynlabStatus dynlab_simulate(const char *config_json,
                                  uint64_t seed,
                                  struct DynlabPanel **out_panel);

/**
 * # Safety
 * `panel` must be null or a handle from this library, not yet freed.
 */
void dynlab_panel_free(struct DynlabPanel *panel);

/**
 * # Safety
 * `panel` must be a live handle; the outputs must be writable or null.
 */
enum DynlabStatus dynlab_panel_shape(const struct DynlabPanel *panel,
                                     size_t *n_rows,
                                     size_t *n_persons);

/**
 * Fits the employment model. `spec_json` is a model specification (null for
 * the defaults); `max_iter` of 0 keeps the default iteration budget.
 *
 * # Safety
 * `panel` must be a live handle, `spec_json` null or NUL-terminated and
 * `out_fit` writable.
 */
enum DynlabStatus dynlab_fit(const struct DynlabPanel *panel,
                             const char *spec_json,
                             size_t max_iter,
                             struct DynlabFit **out_fit);

/**
 * # Safety
 * `fit` must be null or a handle from this library, not yet freed.
 */
void dynlab_fit_free(struct DynlabFit *fit);

/**
 * Number of estimated parameters.
 *
 * # Safety
 * `fit` must be a live handle and `n` writable.
 */
enum DynlabStatus dynlab_fit_n_params(const struct DynlabFit *fit, size_t *n);

/**
 * Name of parameter `i`; the string is owned by the fit handle.
 *
 * # Safety
 * `fit` must be a live handle and `name` writable.
 */
enum DynlabStatus dynlab_fit_param_name(const struct DynlabFit *fit, size_t i, const char **name);

/**
 * Copies the point estimates into `buf`. `written`, when non-null, receives
 * the number of parameters even if the buffer is too small.
 *
 * # Safety
 * `fit` must be a live handle; `buf` must hold `len` doubles.
 */
enum DynlabStatus dynlab_fit_estimates(const struct DynlabFit *fit,
                                       double *buf,
                                       size_t len,
                                       size_t *written);

/**
 * Copies the cluster-robust standard errors; see [`dynlab_fit_estimates`].
 *
 * # Safety
 * `fit` must be a live handle; `buf` must hold `len` doubles.
 */
enum DynlabStatus dynlab_fit_std_errors(const struct DynlabFit *fit,
                                        double *buf,
                                        size_t len,
                                        size_t *written);

/**
 * Log-likelihood at the estimates and the convergence flag.
 *
 * # Safety
 * `fit` must be a live handle; the outputs must be writable or null.
 */
enum DynlabStatus dynlab_fit_summary(const struct DynlabFit *fit,
                                     double *log_likelihood,
                                     bool *converged);

/**
 * Full fit result as JSON (the layout written by the command-line tool).
 *
 * # Safety
 * `fit` must be a live handle and `json_out` writable.
 */
enum DynlabStatus dynlab_fit_json(const struct DynlabFit *fit, char **json_out);

/**
 * Average marginal effects of `target` with delta-method standard errors,
 * as JSON.
 *
 * # Safety
 * `fit` must be a live handle, `target` NUL-terminated and `json_out`
 * writable.
 */
enum DynlabStatus dynlab_average_marginal_effects(const struct DynlabFit *fit,
                                                  const char *target,
                                                  char **json_out);

/**
 * Credit-market access index over `n` community-years. Column arrays hold
 * bank presence (1..=3), distances in km and offices per 1000 residents;
 * `index_out` receives `n` standardized values.
 *
 * # Safety
 * Every array must hold `n` elements.
 */
enum DynlabStatus dynlab_cma_index(enum DynlabIndexMethod method,
                                   size_t n,
                                   const uint8_t *bank_presence,
                                   const double *dist_sber_km,
                                   const double *dist_other_km,
                                   const double *offices_per_1000,
                                   double *index_out);

/**
 * Desired loan and the minimum verifiable income share of the two-period
 * household model (fixed-fee cost form).
 *
 * # Safety
 * The outputs must be writable or null.
 */
enum DynlabStatus dynlab_desired_borrowing(double income,
                                           double growth,
                                           double interest,
                                           double fixed_cost,
                                           double limit_slope,
                                           double *borrowing_out,
                                           double *min_share_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DYNLAB_H */
