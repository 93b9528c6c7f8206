/* C ABI for the dpe driving-primitive evaluation pipeline. */

#ifndef DPE_H
#define DPE_H

/* Generated by cbindgen from dpe-ffi; edit the Rust doc comments and regenerate instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by every dpe call.
typedef enum DpeStatus {
  // Success; out-parameters are valid.
  DPE_STATUS_OK = 0,
  // A required pointer argument was null.
  DPE_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  DPE_STATUS_INVALID_UTF8 = 2,
  // The configuration failed to parse or validate.
  DPE_STATUS_INVALID_CONFIG = 3,
  // Bad input data, a failed fleet query, or a stage run out of order.
  DPE_STATUS_DATA_ERROR = 4,
  // A numerical failure (singular covariance, divergent sampler).
  DPE_STATUS_NUMERICAL_ERROR = 5,
  // An operating-system I/O failure.
  DPE_STATUS_IO_ERROR = 6,
  // An internal panic was caught at the boundary.
  DPE_STATUS_PANIC = 7,
} DpeStatus;

// Measurement channel selector for `dpe_evaluate`.
typedef enum DpeChannel {
  // Gallons-per-mile equivalent; MPG is derived.
  DPE_CHANNEL_FUEL = 0,
  // Grams-per-mile equivalent; MPG is not applicable.
  DPE_CHANNEL_EMISSION = 1,
} DpeChannel;

// Opaque pipeline configuration handle.
typedef struct DpeConfig DpeConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string; never null, never freed.
const char *dpe_version(void);

// Message for the calling thread's most recent failure. Never null; empty
// before the first failure. Valid until this thread's next dpe call.
const char *dpe_last_error(void);

// Parse a configuration from JSON (all fields optional) and validate it.
// On success writes a handle the caller must release with
// `dpe_config_free`.
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be valid for writes.
enum DpeStatus dpe_config_from_json(const char *json,
                                    struct DpeConfig **out);

// Create the default configuration rooted at `store_dir`.
//
// # Safety
// `store_dir` must be a NUL-terminated string; `out` must be valid for
// writes.
enum DpeStatus dpe_config_default(const char *store_dir,
                                  struct DpeConfig **out);

// Release a configuration handle. Null is a no-op.
//
// # Safety
// `config` must be null or an unreleased handle from `dpe_config_*`.
void dpe_config_free(struct DpeConfig *config);

// Generate the configured synthetic fleet (or the built-in demo fleet)
// under `out_dir`. Writes the vehicle count to `n_vehicles` when non-null.
//
// # Safety
// `config` and `out_dir` as documented above; `n_vehicles` null or valid
// for writes.
enum DpeStatus dpe_simulate(const struct DpeConfig *config,
                            const char *out_dir,
                            size_t *n_vehicles);

// Ingest trip CSVs from `input_dir` into the artifact store.
//
// # Safety
// `config` and `input_dir` as documented above.
enum DpeStatus dpe_ingest(const struct DpeConfig *config,
                          const char *input_dir,
                          bool force);

// Segment every ingested vehicle into driving primitives.
//
// # Safety
// `config` as documented above.
enum DpeStatus dpe_segment(const struct DpeConfig *config,
                           bool force);

// Cluster primitives across the fleet. A non-null `eval_vehicle` is held
// out of training, as required before coupling against it.
//
// # Safety
// `config` as documented above; `eval_vehicle` null or a NUL-terminated
// string.
enum DpeStatus dpe_cluster(const struct DpeConfig *config,
                           const char *eval_vehicle,
                           bool force);

// Couple each ranked cluster to the evaluated vehicle's KL-nearest
// primitive.
//
// # Safety
// `config` and `eval_vehicle` as documented above.
enum DpeStatus dpe_couple(const struct DpeConfig *config,
                          const char *eval_vehicle,
                          bool force);

// Compute E = Σ ω_i·E_i for the evaluated vehicle. Writes E to `e_out`
// and MPG to `mpg_out` (NaN when not applicable) when the pointers are
// non-null.
//
// # Safety
// `config` and `eval_vehicle` as documented above; `e_out` and `mpg_out`
// null or valid for writes.
enum DpeStatus dpe_evaluate(const struct DpeConfig *config,
                            const char *eval_vehicle,
                            enum DpeChannel channel,
                            bool force,
                            double *e_out,
                            double *mpg_out);

// Write the report files. On success writes the report directory path to
// `report_dir_out` (release with `dpe_string_free`).
//
// # Safety
// `config` and `eval_vehicle` as documented above; `report_dir_out` null
// or valid for writes.
enum DpeStatus dpe_report(const struct DpeConfig *config,
                          const char *eval_vehicle,
                          bool force,
                          char **report_dir_out);

// Release a string returned through an out-parameter. Null is a no-op.
//
// # Safety
// `s` must be null or an unreleased string from a dpe out-parameter.
void dpe_string_free(char *s);

// KL(p ‖ q) between two 2-D Gaussians. `mu_*` point to 2 doubles, and
// `sigma_*` to 4 doubles in row-major order; covariances are floored
// before inversion, exactly as in coupling.
//
// # Safety
// `mu_p`/`mu_q` must point to 2 readable doubles, `sigma_p`/`sigma_q` to
// 4; `kl_out` must be valid for writes.
enum DpeStatus dpe_kl_gaussian(const double *mu_p,
                               const double *sigma_p,
                               const double *mu_q,
                               const double *sigma_q,
                               double *kl_out);

// Weighted score E = Σ ω_i·E_i over `n` clusters; weights are
// renormalized to a convex combination. Writes E to `e_out`.
//
// # Safety
// `omega` and `e_values` must point to `n` readable doubles; `e_out` must
// be valid for writes.
enum DpeStatus dpe_evaluate_weighted(const double *omega,
                                     const double *e_values,
                                     size_t n,
                                     double *e_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPE_H */
