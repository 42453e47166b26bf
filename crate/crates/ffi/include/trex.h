/* C interface for the trex retrieval engine. */

#pragma once

/* Generated with cbindgen:0.26.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Retrieval mode for `trex_engine_query`.
 */
typedef enum TrexQueryMode {
  TREX_QUERY_MODE_TREX = 0,
  TREX_QUERY_MODE_TRAVERSAL = 1,
  TREX_QUERY_MODE_COLLAPSED = 2,
} TrexQueryMode;

/**
 * Result code of every C-ABI call.
 */
typedef enum TrexStatus {
  TREX_STATUS_OK = 0,
  TREX_STATUS_NULL_ARGUMENT = 1,
  TREX_STATUS_INVALID_ARGUMENT = 2,
  TREX_STATUS_IO = 3,
  TREX_STATUS_CORRUPT = 4,
  TREX_STATUS_INTERNAL = 5,
} TrexStatus;

/**
 * Opaque engine handle.
 */
typedef struct TrexEngine TrexEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build the summary tree and index for a corpus and persist it to
 * `index_dir`. `config_json` may be null for defaults. On success, when
 * `out_report_json` is non-null it receives the build report as JSON.
 *
 * # Safety
 * Pointer arguments must be null or valid NUL-terminated strings;
 * `out_report_json`, when non-null, must point to writable storage.
 */
enum TrexStatus trex_build_index(const char *corpus_path,
                                 const char *index_dir,
                                 const char *config_json,
                                 uint64_t seed,
                                 char **out_report_json);

/**
 * Open a previously built index. The returned handle is thread-safe for
 * queries and must be released with `trex_engine_close`.
 *
 * # Safety
 * `index_dir`/`config_json` must be null or valid NUL-terminated strings;
 * `out_engine` must be a valid, writable pointer.
 */
enum TrexStatus trex_engine_open(const char *index_dir,
                                 const char *config_json,
                                 struct TrexEngine **out_engine);

/**
 * Run one query. `top_n` and `token_budget` use -1 for the configured
 * defaults. On success `out_result_json` receives the query result as JSON
 * (query, ordered contexts with provenance, token totals).
 *
 * # Safety
 * `engine` must be a live handle from `trex_engine_open`; `query` a valid
 * NUL-terminated string; `out_result_json` a valid, writable pointer.
 */
enum TrexStatus trex_engine_query(const struct TrexEngine *engine,
                                  const char *query,
                                  enum TrexQueryMode mode,
                                  int64_t top_n,
                                  int64_t token_budget,
                                  char **out_result_json);

/**
 * Release an engine handle. Null is a no-op.
 *
 * # Safety
 * `engine` must be null or a handle from `trex_engine_open` not yet closed.
 */
void trex_engine_close(struct TrexEngine *engine);

/**
 * Release a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must be null or a string returned through an `out` parameter of this
 * library, not yet freed.
 */
void trex_string_free(char *s);

/**
 * The last error message recorded on this thread, or null if none. The
 * caller owns the returned string (free with `trex_string_free`).
 */
char *trex_last_error_message(void);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus
