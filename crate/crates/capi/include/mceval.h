#ifndef MCEVAL_H
#define MCEVAL_H

/* This file is generated by cbindgen from mceval-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum McevalStatus {
  MCEVAL_STATUS_OK = 0,
  MCEVAL_STATUS_NULL_ARGUMENT = 1,
  MCEVAL_STATUS_INVALID_ARGUMENT = 2,
  MCEVAL_STATUS_UTF8 = 3,
  MCEVAL_STATUS_IO = 4,
  MCEVAL_STATUS_PARSE = 5,
  MCEVAL_STATUS_CHECKSUM_MISMATCH = 6,
  MCEVAL_STATUS_UNSUPPORTED_VERSION = 7,
  MCEVAL_STATUS_BUDGET_EXCEEDED = 8,
  MCEVAL_STATUS_MISSING_PREDICTION = 9,
  MCEVAL_STATUS_INCOMPATIBLE_LOSS = 10,
  MCEVAL_STATUS_BUILD_FAILED = 11,
  MCEVAL_STATUS_INTERNAL = 12,
} McevalStatus;

// Certificate state of an error report.
typedef enum McevalCertificate {
  MCEVAL_CERTIFICATE_VALID = 0,
  MCEVAL_CERTIFICATE_VOIDED = 1,
  MCEVAL_CERTIFICATE_ADVISORY = 2,
} McevalCertificate;

// Opaque value-cache handle.
typedef struct McevalCache McevalCache;

// Inputs for `mceval_cache_build`. Initialise with
// `mceval_build_params_default` and then override fields; `env` must always
// be set by the caller.
typedef struct McevalBuildParams {
  // Environment id: "chain", "cyclic-chain", "mountain-car",
  // "puddle-world", "constant", "bernoulli" or "uniform".
  const char *env;
  // Policy id ("uniform", "energy-pumping", "fixed") or null for the
  // environment's default.
  const char *policy;
  // Chain discount; NaN selects the environment default.
  double gamma;
  // Chain state count; 0 selects the default.
  uint32_t chain_states;
  // Synthetic-environment parameters; NaN selects the defaults.
  double dist_value;
  double dist_p;
  double dist_lo;
  double dist_hi;
  // Energy-pumping mixing probability; NaN selects 0.6.
  double mixing;
  // Fixed-policy action; negative selects the default.
  int32_t fixed_action;
  double epsilon;
  double delta;
  double tau;
  double clip;
  uint64_t k_budget;
  uint64_t seed;
  // Per-state sample ceiling; 0 selects the default (10^8).
  uint64_t max_samples;
  // Value stored as the cache creation timestamp (unix seconds).
  uint64_t created_unix;
} McevalBuildParams;

// One cache entry viewed through the C ABI. `coords` borrows the cache's
// memory and stays valid until the cache is freed or mutated.
typedef struct McevalEntry {
  uint64_t id;
  double value;
  uint64_t samples_used;
  const double *coords;
  size_t coords_len;
} McevalEntry;

// Cache-level metadata snapshot.
typedef struct McevalMeta {
  double epsilon;
  double delta;
  double tau;
  double clip;
  uint64_t k_budget;
  uint64_t m;
  uint64_t seed;
  uint64_t total_samples;
  uint64_t queries_consumed;
} McevalMeta;

// A certified evaluation result.
typedef struct McevalReport {
  double empirical_loss;
  double deviation_bound;
  // 1 - delta.
  double confidence;
  uint64_t k_budget;
  uint64_t k_consumed;
  enum McevalCertificate certificate;
} McevalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Fill `params` with the default configuration (chain environment left
// unset: the caller must point `env` at an environment id).
//
// # Safety
// `params` must point to writable memory for one `McevalBuildParams`.
void mceval_build_params_default(struct McevalBuildParams *params);

// Build a value cache with the adaptive stopping rule.
//
// # Safety
// `params` and `out` must be valid pointers; string fields must be
// NUL-terminated. On success `*out` owns the cache and must be released with
// `mceval_cache_free`.
enum McevalStatus mceval_cache_build(const struct McevalBuildParams *params,
                                     struct McevalCache **out);

// Load a cache file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer. On
// success `*out` must be released with `mceval_cache_free`.
enum McevalStatus mceval_cache_load(const char *path, struct McevalCache **out);

// Persist a cache (including its consumed K budget).
//
// # Safety
// `cache` must be a live handle from this library; `path` NUL-terminated.
enum McevalStatus mceval_cache_save(const struct McevalCache *cache, const char *path);

// Release a cache handle. Null is a no-op.
//
// # Safety
// `cache` must be a handle returned by this library, not yet freed.
void mceval_cache_free(struct McevalCache *cache);

// Number of entries. Null gives 0.
//
// # Safety
// `cache` must be a live handle or null.
size_t mceval_cache_len(const struct McevalCache *cache);

// Copy the entry view at `index` into `*out`.
//
// # Safety
// `cache` must be a live handle and `out` writable. The coords pointer in
// the view borrows the cache.
enum McevalStatus mceval_cache_entry(const struct McevalCache *cache,
                                     size_t index,
                                     struct McevalEntry *out);

// Copy cache metadata into `*out`.
//
// # Safety
// `cache` must be a live handle and `out` writable.
enum McevalStatus mceval_cache_meta(const struct McevalCache *cache, struct McevalMeta *out);

// Certify predictions against the cache under its certified loss.
//
// `ids`/`values` are parallel arrays of length `len` mapping state ids to
// predicted values; every cached id must be present. Unless `read_only` is
// nonzero one unit of K budget is consumed in memory (persist it with
// `mceval_cache_save`).
//
// # Safety
// `cache` must be a live handle; `ids` and `values` must point to `len`
// readable elements; `out` must be writable.
enum McevalStatus mceval_cache_evaluate(struct McevalCache *cache,
                                        const uint64_t *ids,
                                        const double *values,
                                        size_t len,
                                        int32_t read_only,
                                        struct McevalReport *out);

// Rollout length keeping the discounted truncation bias within eps*tau.
// Returns InvalidArgument for gamma >= 1 or eps*tau = 0 with r_max > 0.
//
// # Safety
// `out` must be writable.
enum McevalStatus mceval_truncation_length(double eps,
                                           double tau,
                                           double gamma,
                                           double r_max,
                                           uint64_t *out);

// States needed so the loss-mean deviation over K queries stays at eps_m:
// ceil(ln(4K/delta) c^2 / (2 eps_m^2)). Returns 0 on invalid inputs.
uint64_t mceval_required_states(double eps_m, double delta, double clip, uint64_t k);

// Three-term deviation bound of the certified loss estimate. Returns NaN on
// invalid inputs.
double mceval_deviation_bound(double eps, double delta, double clip, uint64_t k, double m);

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length in bytes.
//
// # Safety
// `buf` must point to `len` writable bytes (or be null to query the length).
size_t mceval_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCEVAL_H */
