#ifndef SEVAL_H
#define SEVAL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Dispatching rules for [`seval_dispatch`].
 */
typedef enum SevalRule {
  SEVAL_RULE_SPT = 0,
  SEVAL_RULE_MWKR = 1,
  SEVAL_RULE_FIFO = 2,
} SevalRule;

/**
 * Result codes.
 */
typedef enum SevalStatus {
  SEVAL_STATUS_OK = 0,
  SEVAL_STATUS_NULL_ARGUMENT = 1,
  SEVAL_STATUS_INVALID_UTF8 = 2,
  SEVAL_STATUS_PARSE = 3,
  SEVAL_STATUS_IO = 4,
  SEVAL_STATUS_INVALID_ARGUMENT = 5,
  SEVAL_STATUS_MODEL = 6,
  SEVAL_STATUS_BUFFER_TOO_SMALL = 7,
  SEVAL_STATUS_PANIC = 8,
} SevalStatus;

/**
 * A parsed or generated instance.
 */
typedef struct SevalInstance SevalInstance;

/**
 * A loaded checkpoint.
 */
typedef struct SevalModel SevalModel;

/**
 * A complete schedule for one instance.
 */
typedef struct SevalSchedule SevalSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a
 * success. Valid until the next call on the same thread.
 */
const char *seval_last_error(void);

/**
 * Library version, static storage.
 */
const char *seval_version(void);

/**
 * Parses an instance in standard or Taillard layout.
 *
 * # Safety
 * `text` must be NUL-terminated; `out` must be writable.
 */
enum SevalStatus seval_instance_parse(const char *text, struct SevalInstance **out);

/**
 * Random instance with the usual generator.
 *
 * # Safety
 * `out` must be writable.
 */
enum SevalStatus seval_instance_generate(size_t jobs,
                                         size_t machines,
                                         uint64_t seed,
                                         struct SevalInstance **out);

/**
 * # Safety
 * `inst` must be NULL or a live handle.
 */
size_t seval_instance_num_jobs(const struct SevalInstance *inst);

/**
 * # Safety
 * `inst` must be NULL or a live handle.
 */
size_t seval_instance_num_machines(const struct SevalInstance *inst);

/**
 * # Safety
 * `inst` must be NULL or a live handle.
 */
size_t seval_instance_num_ops(const struct SevalInstance *inst);

/**
 * # Safety
 * `inst` must be NULL or a handle not yet freed.
 */
void seval_instance_free(struct SevalInstance *inst);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum SevalStatus seval_model_load(const char *path, struct SevalModel **out);

/**
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void seval_model_free(struct SevalModel *model);

/**
 * Branch and bound with a time limit in seconds (non-positive means
 * none).
 *
 * # Safety
 * `inst` must be a live handle; `out` must be writable.
 */
enum SevalStatus seval_solve_exact(const struct SevalInstance *inst,
                                   double time_limit,
                                   struct SevalSchedule **out);

/**
 * # Safety
 * `inst` must be a live handle; `out` must be writable.
 */
enum SevalStatus seval_dispatch(const struct SevalInstance *inst,
                                enum SevalRule rule,
                                struct SevalSchedule **out);

/**
 * Model rollout: greedy when `n == 1`, otherwise the best of `n`
 * self-evaluated candidates per step.
 *
 * # Safety
 * `model` and `inst` must be live handles; `out` must be writable.
 */
enum SevalStatus seval_infer(const struct SevalModel *model,
                             const struct SevalInstance *inst,
                             size_t n,
                             uint64_t seed,
                             struct SevalSchedule **out);

/**
 * # Safety
 * `s` must be NULL or a live handle.
 */
uint32_t seval_schedule_makespan(const struct SevalSchedule *s);

/**
 * 1 when the solver proved the makespan optimal, else 0.
 *
 * # Safety
 * `s` must be NULL or a live handle.
 */
int32_t seval_schedule_is_optimal(const struct SevalSchedule *s);

/**
 * Copies start times in job-major operation order. `written` receives
 * the number of operations; with a short buffer nothing is copied and
 * [`SevalStatus::BufferTooSmall`] is returned.
 *
 * # Safety
 * `s` must be a live handle; `buf` must hold `len` values (it may be NULL
 * when `len` is 0); `written` must be writable.
 */
enum SevalStatus seval_schedule_starts(const struct SevalSchedule *s,
                                       uint32_t *buf,
                                       size_t len,
                                       size_t *written);

/**
 * Schedule in the text export format as a NUL-terminated string; free
 * it with [`seval_string_free`].
 *
 * # Safety
 * `s` must be a live handle; `out` must be writable.
 */
enum SevalStatus seval_schedule_export(const struct SevalSchedule *s, char **out);

/**
 * # Safety
 * `s` must be NULL or a string from this library not yet freed.
 */
void seval_string_free(char *s);

/**
 * # Safety
 * `s` must be NULL or a handle not yet freed.
 */
void seval_schedule_free(struct SevalSchedule *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEVAL_H */
