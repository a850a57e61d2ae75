#ifndef HOELDERFLOW_H
#define HOELDERFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared by all entry points.
 */
typedef enum HfStatus {
  HF_OK = 0,
  HF_NULL_POINTER = 1,
  HF_CONFIG = 2,
  HF_DOMAIN = 3,
  HF_REGULARITY = 4,
  HF_STABILITY = 5,
  HF_VALIDATION = 6,
  HF_HYPOTHESIS = 7,
  HF_NUMERIC = 8,
  HF_IO = 9,
  HF_INVALID_UTF8 = 10,
  HF_BUFFER_TOO_SMALL = 11,
  HF_PANIC = 12,
} HfStatus;

/**
 * A sampled path on a uniform grid.
 */
typedef struct HfPath HfPath;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. Valid until the next failing call.
 */
const char *hf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *hf_version(void);

/**
 * Samples a scalar fBm path on `[0, horizon]` with `steps` steps.
 *
 * # Safety
 * `out_path` must be valid for writes.
 */
enum HfStatus hf_fbm_sample(double hurst,
                            double horizon,
                            size_t steps,
                            uint64_t seed,
                            struct HfPath **out_path);

/**
 * Builds a path from `len` point-major values of dimension `dim`.
 *
 * # Safety
 * `values` must point to `len` readable doubles; `out_path` must be valid for writes.
 */
enum HfStatus hf_path_from_values(double t0,
                                  double dt,
                                  size_t dim,
                                  const double *values,
                                  size_t len,
                                  double beta_prime,
                                  struct HfPath **out_path);

/**
 * Releases a path; null is ignored.
 *
 * # Safety
 * `path` must come from this library and not be used afterwards.
 */
void hf_path_free(struct HfPath *path);

/**
 * Number of grid points and the state dimension.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HfStatus hf_path_shape(const struct HfPath *path, size_t *out_len, size_t *out_dim);

/**
 * Copies the point-major values into `buf`. On `HfBufferTooSmall`, `*out_needed`
 * holds the required length.
 *
 * # Safety
 * `buf` must be writable for `cap` doubles.
 */
enum HfStatus hf_path_values(const struct HfPath *path,
                             double *buf,
                             size_t cap,
                             size_t *out_needed);

/**
 * Discrete Hölder seminorm and sup norm on `[a, b]`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum HfStatus hf_holder_norms(const struct HfPath *path,
                              double beta,
                              double a,
                              double b,
                              double *out_seminorm,
                              double *out_sup);

/**
 * `∫_s^t f(ω) dω` for a scalar path and a named integrand (`identity`, `one`,
 * `sin`, `cos`, `exp`, `square`), by Riemann–Stieltjes sums (finest level)
 * and by the fractional representation of order `alpha` (pass NaN for the
 * centre of the admissible window).
 *
 * # Safety
 * Pointers must be valid; `integrand` must be NUL-terminated.
 */
enum HfStatus hf_young_integral(const struct HfPath *path,
                                const char *integrand,
                                double s,
                                double t,
                                double alpha,
                                double *out_rs,
                                double *out_fracrep);

/**
 * Largest `ε̂` compatible with `(λ, ε)` in the stability recursion.
 *
 * # Safety
 * `out_value` must be valid for writes.
 */
enum HfStatus hf_eps_hat_max(double lambda, double eps, double *out_value);

/**
 * Gronwall-type recursion check. `*out_hypothesis` is 1 when the hypothesis
 * holds at every index; `*out_conclusion` is 1/0 for the conclusion, or -1
 * when the hypothesis fails.
 *
 * # Safety
 * `v` must point to `len` readable doubles; out-pointers must be valid.
 */
enum HfStatus hf_gronwall_check(const double *v,
                                size_t len,
                                double zeta0,
                                double k,
                                double lambda,
                                double eps,
                                double eps_hat,
                                int32_t *out_hypothesis,
                                int32_t *out_conclusion,
                                double *out_min_slack);

/**
 * Runs a batch experiment exactly as the command-line tool does. `output_dir`
 * may be null to use the config's; relative config paths resolve against
 * `base_dir` (null for the working directory). `jobs` = 0 uses all cores.
 * On success `*out_manifest` receives the manifest JSON, to be released with
 * [`hf_string_free`].
 *
 * # Safety
 * String arguments must be NUL-terminated or null where allowed.
 */
enum HfStatus hf_run_experiment(const char *subcommand,
                                const char *config_json,
                                const char *output_dir,
                                const char *base_dir,
                                size_t jobs,
                                char **out_manifest);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void hf_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOELDERFLOW_H */
