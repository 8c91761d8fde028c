#ifndef OAK_H
#define OAK_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum OakStatus {
  OAK_STATUS_OK = 0,
  OAK_STATUS_NULL_POINTER = 1,
  OAK_STATUS_INVALID_UTF8 = 2,
  OAK_STATUS_CONFIG = 3,
  OAK_STATUS_IO = 4,
  OAK_STATUS_DATA = 5,
  OAK_STATUS_TRAINING = 6,
  OAK_STATUS_INTEGRITY = 7,
  OAK_STATUS_EVALUATION = 8,
  OAK_STATUS_INTERNAL = 9,
} OakStatus;

/**
 * Method tags accepted by `oak_train` and `oak_evaluate`.
 */
typedef enum OakMethod {
  OAK_METHOD_OAK = 0,
  OAK_METHOD_GCD = 1,
  OAK_METHOD_SS_KMEANS = 2,
  OAK_METHOD_ZERO_SHOT = 3,
  OAK_METHOD_ZERO_SHOT_VOCAB = 4,
} OakMethod;

/**
 * A loaded dataset directory with its frozen encoder.
 */
typedef struct OakBundle OakBundle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Owned by the library.
 */
const char *oak_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void oak_string_free(char *s);

/**
 * Generates a dataset into `out_dir` from generator config text (`key=value` lines; null
 * for defaults) and returns a handle to it.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out` must be writable.
 */
enum OakStatus oak_bundle_generate(const char *config_text,
                                   const char *out_dir,
                                   struct OakBundle **out);

/**
 * Opens a dataset directory written by `oak_bundle_generate` or `oak gen`.
 *
 * # Safety
 * `dir` must be NUL-terminated; `out` must be writable.
 */
enum OakStatus oak_bundle_open(const char *dir, struct OakBundle **out);

/**
 * Releases a bundle. Null is ignored.
 *
 * # Safety
 * `bundle` must come from this library and not have been freed.
 */
void oak_bundle_free(struct OakBundle *bundle);

/**
 * Number of items in the dataset; 0 for a null handle.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t oak_bundle_len(const struct OakBundle *bundle);

/**
 * Number of contexts; 0 for a null handle.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t oak_bundle_context_count(const struct OakBundle *bundle);

/**
 * Context id at `index` as a new string.
 *
 * # Safety
 * `bundle` must be a live handle; `out` must be writable.
 */
enum OakStatus oak_bundle_context_id(const struct OakBundle *bundle, size_t index, char **out);

/**
 * Trains `context` with a token-learning method and writes the run into `out_dir`
 * (null for the default run directory). `config_text` holds training overrides or is null.
 *
 * # Safety
 * `bundle` must be a live handle; strings must be null or NUL-terminated as documented.
 */
enum OakStatus oak_train(const struct OakBundle *bundle,
                         const char *context,
                         enum OakMethod method,
                         uint64_t seed,
                         const char *config_text,
                         const char *out_dir);

/**
 * Evaluates every context and returns the report as TSV. Token-learning methods read
 * their tokens from the default run directories. When `out_dir` is non-null the report
 * files are written there too.
 *
 * # Safety
 * `bundle` must be a live handle; `report_tsv` must be writable.
 */
enum OakStatus oak_evaluate(const struct OakBundle *bundle,
                            enum OakMethod method,
                            uint64_t seed,
                            const char *out_dir,
                            char **report_tsv);

/**
 * Mean and sample standard deviation over `n` report TSV texts, as TSV.
 *
 * # Safety
 * `reports` must point to `n` NUL-terminated strings; `out` must be writable.
 */
enum OakStatus oak_aggregate(const char *const *reports, size_t n, char **out);

/**
 * Runs the command line with `argv[0..argc]` and returns its exit code.
 *
 * # Safety
 * `argv` must point to `argc` NUL-terminated strings.
 */
int oak_run_cli(int argc, const char *const *argv);

/**
 * Library version, static.
 */
const char *oak_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OAK_H */
