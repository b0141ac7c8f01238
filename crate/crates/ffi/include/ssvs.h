#ifndef SSVS_H
#define SSVS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of comparing two labels.
typedef enum SsvsOrdering {
  SSVS_ORDERING_LESS = -1,
  SSVS_ORDERING_EQUAL = 0,
  SSVS_ORDERING_GREATER = 1,
  SSVS_ORDERING_INCOMPARABLE = 2,
} SsvsOrdering;

// Result codes.
typedef enum SsvsStatus {
  SSVS_STATUS_OK = 0,
  // A required pointer argument was null.
  SSVS_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  SSVS_STATUS_INVALID_UTF8 = 2,
  // The scenario could not be parsed or validated.
  SSVS_STATUS_INVALID_CONFIG = 3,
  // A trace could not be read or parsed.
  SSVS_STATUS_INVALID_TRACE = 4,
  SSVS_STATUS_UNKNOWN_PROPERTY = 5,
  SSVS_STATUS_IO = 6,
  // A label string could not be parsed.
  SSVS_STATUS_INVALID_LABEL = 7,
  // The library panicked; the handle arguments should not be reused.
  SSVS_STATUS_INTERNAL = 8,
} SsvsStatus;

// An opaque run trace.
typedef struct SsvsTrace SsvsTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Runs the scenario given as JSON with its own seed.
//
// # Safety
// `scenario_json` must be a nul-terminated string and `out` a valid
// pointer to writable storage for one handle.
enum SsvsStatus ssvs_run(const char *scenario_json, struct SsvsTrace **out);

// Runs the scenario given as JSON with `seed` in place of its own seed.
//
// # Safety
// As for [`ssvs_run`].
enum SsvsStatus ssvs_run_seeded(const char *scenario_json, uint64_t seed, struct SsvsTrace **out);

// Reads a JSONL trace file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum SsvsStatus ssvs_trace_load(const char *path, struct SsvsTrace **out);

// Releases a trace. Null is ignored.
//
// # Safety
// `trace` must be null or a handle from this library that has not been
// freed yet.
void ssvs_trace_free(struct SsvsTrace *trace);

// Number of event records in the trace.
//
// # Safety
// `trace` must be a live handle and `out` a valid pointer.
enum SsvsStatus ssvs_trace_event_count(const struct SsvsTrace *trace, uint64_t *out);

// Renders the trace as JSONL into a new string.
//
// # Safety
// `trace` must be a live handle and `out` a valid pointer. Free the
// result with [`ssvs_string_free`].
enum SsvsStatus ssvs_trace_to_jsonl(const struct SsvsTrace *trace, char **out);

// Writes the trace as JSONL to `path`.
//
// # Safety
// `trace` must be a live handle and `path` a nul-terminated string.
enum SsvsStatus ssvs_trace_write(const struct SsvsTrace *trace, const char *path);

// Checks `property` (or `"all"` for every property that applies) and
// reports whether everything passed. If `verdicts_json` is not null it
// receives a JSON array of `{property, pass, step, detail}` objects.
//
// # Safety
// `trace` must be a live handle, `property` a nul-terminated string and
// `pass` a valid pointer. `verdicts_json` may be null.
enum SsvsStatus ssvs_check(const struct SsvsTrace *trace,
                           const char *property,
                           bool *pass,
                           char **verdicts_json);

// Compares two labels in their text form `creator:sting:{a,b,...}`.
//
// # Safety
// `a` and `b` must be nul-terminated strings and `out` a valid pointer.
enum SsvsStatus ssvs_label_compare(const char *a, const char *b, enum SsvsOrdering *out);

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next call into the library on the same thread.
const char *ssvs_last_error(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet freed.
void ssvs_string_free(char *s);

// Library version, a static string.
const char *ssvs_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSVS_H */
