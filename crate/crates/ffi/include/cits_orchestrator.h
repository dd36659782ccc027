#ifndef CITS_ORCHESTRATOR_H
#define CITS_ORCHESTRATOR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CitsStatus {
  CITS_STATUS_OK = 0,
  CITS_STATUS_NULL_POINTER = 1,
  CITS_STATUS_INVALID_UTF8 = 2,
  CITS_STATUS_SCENARIO_ERROR = 3,
  CITS_STATUS_RUNTIME_ERROR = 4,
  CITS_STATUS_INVALID_REQUEST = 5,
  CITS_STATUS_REJECTED = 6,
  CITS_STATUS_UNKNOWN_NODE = 7,
  CITS_STATUS_PANIC = 8,
} CitsStatus;

/**
 * Opaque engine handle.
 */
typedef struct CitsEngine CitsEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a scenario file and creates an engine at tick 0.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CitsStatus cits_engine_from_file(const char *path,
                                      bool duplicate_delivery,
                                      struct CitsEngine **out);

/**
 * Creates an engine from scenario text.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CitsStatus cits_engine_from_str(const char *text,
                                     bool duplicate_delivery,
                                     struct CitsEngine **out);

/**
 * # Safety
 * `engine` must come from this library and not be used afterwards.
 */
void cits_engine_free(struct CitsEngine *engine);

/**
 * Advances one tick.
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum CitsStatus cits_engine_tick(struct CitsEngine *engine);

/**
 * Runs until the timeline is exhausted and the system settled, or the
 * tick budget is spent.
 *
 * # Safety
 * `engine` must be a live handle.
 */
enum CitsStatus cits_engine_run(struct CitsEngine *engine);

/**
 * Current tick, or 0 for a null handle.
 *
 * # Safety
 * `engine` must be null or a live handle.
 */
uint64_t cits_engine_now(const struct CitsEngine *engine);

/**
 * # Safety
 * `engine` must be null or a live handle.
 */
bool cits_engine_is_finished(const struct CitsEngine *engine);

/**
 * Submits one deployment request given as JSON. The request result is
 * written to `out_result` as JSON, also when the manager rejects it; in
 * that case the status is `Rejected`.
 *
 * # Safety
 * `engine` must be a live handle, `json` NUL-terminated, `out_result`
 * null or a valid pointer.
 */
enum CitsStatus cits_engine_submit_json(struct CitsEngine *engine,
                                        const char *json,
                                        char **out_result);

/**
 * Writes every live ledger as a JSON object keyed by resource name.
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum CitsStatus cits_engine_ledgers_json(const struct CitsEngine *engine, char **out);

/**
 * Writes the trace so far as JSON lines.
 *
 * # Safety
 * `engine` must be a live handle and `out` a valid pointer.
 */
enum CitsStatus cits_engine_trace_jsonl(const struct CitsEngine *engine, char **out);

/**
 * Writes the topics visible at `node` during the last tick as a JSON array.
 *
 * # Safety
 * `engine` must be a live handle, `node` NUL-terminated, `out` valid.
 */
enum CitsStatus cits_engine_topics_json(const struct CitsEngine *engine,
                                        const char *node,
                                        char **out);

/**
 * Number of running instances, or 0 for a null handle.
 *
 * # Safety
 * `engine` must be null or a live handle.
 */
size_t cits_engine_running_instances(const struct CitsEngine *engine);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void cits_string_free(char *s);

/**
 * Message of the last failed call on this thread, or null. Valid until
 * the next call into the library on the same thread.
 */
const char *cits_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cits_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CITS_ORCHESTRATOR_H */
