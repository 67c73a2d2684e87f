#ifndef OFFAB_H
#define OFFAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OffabStatus {
  OFFAB_STATUS_OK = 0,
  OFFAB_STATUS_NULL_ARGUMENT = 1,
  OFFAB_STATUS_INVALID_UTF8 = 2,
  // Malformed input: bad JSON, bad config, bad log line, shape mismatch.
  OFFAB_STATUS_INVALID_INPUT = 3,
  // Filesystem or results-store failure.
  OFFAB_STATUS_IO = 4,
  // The window had no records.
  OFFAB_STATUS_EMPTY_WINDOW = 5,
  // Every importance weight was zero.
  OFFAB_STATUS_DEGENERATE_WEIGHTS = 6,
  // A Rust panic was caught at the boundary.
  OFFAB_STATUS_PANIC = 7,
} OffabStatus;

typedef enum OffabReportFormat {
  OFFAB_REPORT_FORMAT_JSON = 0,
  OFFAB_REPORT_FORMAT_MARKDOWN = 1,
} OffabReportFormat;

// Validated, timestamp-ordered log records.
typedef struct OffabDataset OffabDataset;

// Linear-softmax policy.
typedef struct OffabPolicy OffabPolicy;

// Point estimate with diagnostics. `ci_lo`/`ci_hi` are meaningful only when
// `has_ci` is true.
typedef struct OffabEstimate {
  double value;
  bool has_ci;
  double ci_lo;
  double ci_hi;
  double ess;
  size_t n;
  double max_weight;
  double capped_fraction;
} OffabEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer is
// valid until the next `offab_*` call on the same thread.
const char *offab_last_error(void);

// Library version as a static NUL-terminated string.
const char *offab_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed already.
void offab_string_free(char *s);

// Reads and validates a JSON-lines log file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum OffabStatus offab_dataset_ingest(const char *path, struct OffabDataset **out);

// Number of records, or 0 for NULL.
//
// # Safety
// `dataset` must be NULL or a live handle.
size_t offab_dataset_len(const struct OffabDataset *dataset);

// Writes the context dimension and action count.
//
// # Safety
// `dataset` must be a live handle; `d` and `k` must be writable.
enum OffabStatus offab_dataset_shape(const struct OffabDataset *dataset, size_t *d, size_t *k);

// # Safety
// `dataset` must be NULL or a handle not yet freed.
void offab_dataset_free(struct OffabDataset *dataset);

// Parses a policy from its JSON form
// (`{"weights": [[..]..], "temperature": t, "floor": e, "feature_map": "identity"}`).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum OffabStatus offab_policy_from_json(const char *json, struct OffabPolicy **out);

// # Safety
// `policy` must be NULL or a handle not yet freed.
void offab_policy_free(struct OffabPolicy *policy);

// Fills `out[0..k]` with the action distribution for `context[0..d]`.
//
// # Safety
// `context` must point to `context_len` doubles and `out` to `out_len`.
enum OffabStatus offab_policy_action_probabilities(const struct OffabPolicy *policy,
                                                   const double *context,
                                                   size_t context_len,
                                                   double *out,
                                                   size_t out_len);

// Estimates the value of `policy` on `dataset`. `config_json` is an estimator
// config (`{"kind": "NCIS", "cap": 100, ...}`); NULL selects the defaults.
//
// # Safety
// Handles must be live; `config_json` must be NULL or NUL-terminated; `out`
// must be writable.
enum OffabStatus offab_estimate(const struct OffabPolicy *policy,
                                const struct OffabDataset *dataset,
                                const char *config_json,
                                struct OffabEstimate *out);

// Runs one evaluation of `dataset` under the program config and appends it
// to the store at `store_dir` (created if missing). On success `*out_json`
// receives the persisted run as JSON.
//
// # Safety
// Strings must be NUL-terminated; `dataset` must be live; `out_json` must be
// writable.
enum OffabStatus offab_run_once(const char *program_json,
                                const char *store_dir,
                                const struct OffabDataset *dataset,
                                char **out_json);

// Renders the report for an existing store into `*out`.
//
// # Safety
// `store_dir` must be NUL-terminated; `out` must be writable.
enum OffabStatus offab_report(const char *store_dir, enum OffabReportFormat format, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFFAB_H */
