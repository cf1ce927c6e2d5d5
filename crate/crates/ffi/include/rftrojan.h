/* SPDX-License-Identifier: Apache-2.0 */

#ifndef RFTROJAN_H
#define RFTROJAN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum RtStatus {
  RT_STATUS_OK = 0,
  RT_STATUS_NULL_ARGUMENT = 1,
  RT_STATUS_INVALID_UTF8 = 2,
  RT_STATUS_NOT_FOUND = 3,
  RT_STATUS_PARSE_ERROR = 4,
  RT_STATUS_VALIDATION_ERROR = 5,
  RT_STATUS_IO_ERROR = 6,
  RT_STATUS_INVALID_ARGUMENT = 7,
  // A Rust panic was caught at the boundary. The handle involved should
  // be freed and not used again.
  RT_STATUS_PANIC = 8,
} RtStatus;

// A finished simulation.
typedef struct RtRun RtRun;

// A validated scenario.
typedef struct RtScenario RtScenario;

// Options for [`rt_run`]. Zero-initialized options run the scenario as
// written with the trace discarded.
typedef struct RtRunOptions {
  bool retain_trace;
  bool override_seed;
  uint64_t seed;
  // 0 keeps the scenario's own budget.
  uint64_t max_cycles;
} RtRunOptions;

// Summary of a run that does not need JSON parsing.
typedef struct RtRunSummary {
  uint64_t cycles;
  uint64_t trace_events;
  bool triggered;
  // Only meaningful when `triggered` is set.
  uint64_t hammers_at_latch;
  uint64_t detections;
  uint64_t kernel_bytes;
  uint32_t faulted_processes;
} RtRunSummary;

// Charge model derived from the hammer-count anchor.
typedef struct RtCalibration {
  double delta_per_hammer;
  double leak_per_idle_cycle;
} RtCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next call into the library on the same thread.
const char *rt_last_error(void);

// Library version as a static NUL-terminated string.
const char *rt_version(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void rt_string_free(char *s);

uintptr_t rt_builtin_count(void);

// Static name of builtin `index`, or NULL when out of range.
const char *rt_builtin_name(uintptr_t index);

// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum RtStatus rt_scenario_builtin(const char *name, struct RtScenario **out);

// Parses and validates scenario text.
//
// # Safety
// `text` must be a NUL-terminated string; `out` must be writable.
enum RtStatus rt_scenario_from_str(const char *text, struct RtScenario **out);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum RtStatus rt_scenario_from_file(const char *path, struct RtScenario **out);

// Canonical text of a scenario.
//
// # Safety
// `scenario` must be a live handle; `out` must be writable.
enum RtStatus rt_scenario_to_toml(const struct RtScenario *scenario, char **out);

// # Safety
// `scenario` must come from this library and not have been freed.
void rt_scenario_free(struct RtScenario *scenario);

// Runs a scenario to completion. `options` may be NULL.
//
// # Safety
// `scenario` must be a live handle; `options` NULL or valid; `out` writable.
enum RtStatus rt_run(const struct RtScenario *scenario,
                     const struct RtRunOptions *options,
                     struct RtRun **out);

// # Safety
// `run` must come from this library and not have been freed.
void rt_run_free(struct RtRun *run);

// Hex SHA-256 of the trace.
//
// # Safety
// `run` must be a live handle; `out` must be writable.
enum RtStatus rt_run_digest(const struct RtRun *run, char **out);

// Trace text. Fails with `InvalidArgument` unless the run retained it.
//
// # Safety
// `run` must be a live handle; `out` must be writable.
enum RtStatus rt_run_trace_text(const struct RtRun *run, char **out);

// # Safety
// `run` must be a live handle; `out` must be writable.
enum RtStatus rt_run_report_json(const struct RtRun *run, char **out);

// # Safety
// `run` must be a live handle; `out` must be writable.
enum RtStatus rt_run_summary(const struct RtRun *run, struct RtRunSummary *out);

// Charge step and leak for a hammer-count anchor.
//
// # Safety
// `out` must be writable.
enum RtStatus rt_calibrate(uint32_t n_set,
                           double v_threshold,
                           double v_max,
                           double epsilon,
                           struct RtCalibration *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFTROJAN_H */
