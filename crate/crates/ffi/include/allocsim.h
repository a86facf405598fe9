#ifndef ALLOCSIM_H
#define ALLOCSIM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirrored by the CLI exit codes where applicable.
 */
typedef enum {
  AllocStatus_Ok = 0,
  AllocStatus_NullArgument = 1,
  AllocStatus_ConfigError = 2,
  AllocStatus_IoError = 3,
  AllocStatus_RunError = 4,
} AllocStatus;

/**
 * Opaque experiment plan handle.
 */
typedef struct AllocPlan AllocPlan;

/**
 * Opaque experiment summary handle.
 */
typedef struct AllocSummary AllocSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a plan from config text. Returns NULL on error.
 */
AllocPlan *alloc_plan_parse(const char *config_text);

/**
 * Loads a plan from a config file. Returns NULL on error.
 */
AllocPlan *alloc_plan_load(const char *path);

/**
 * Overrides the plan's master seed.
 */
AllocStatus alloc_plan_set_seed(AllocPlan *plan, uint64_t seed);

/**
 * Overrides the plan's trial count.
 */
AllocStatus alloc_plan_set_trials(AllocPlan *plan, uintptr_t trials);

void alloc_plan_free(AllocPlan *plan);

/**
 * Runs the experiment. Returns NULL on error.
 */
AllocSummary *alloc_run(const AllocPlan *plan);

/**
 * Runs the experiment and writes the output files under `out_dir`.
 */
AllocStatus alloc_run_to_dir(const AllocPlan *plan, const char *out_dir, bool emit_plot_data);

/**
 * Serializes the summary (config echo, per-trial metrics, aggregates) to a
 * JSON string. Free with [`alloc_string_free`].
 */
char *alloc_summary_to_json(const AllocSummary *summary);

double alloc_summary_welfare_mean(const AllocSummary *summary);

double alloc_summary_misreport_mean(const AllocSummary *summary);

double alloc_summary_violation_max(const AllocSummary *summary);

void alloc_summary_free(AllocSummary *summary);

/**
 * Last error message for this thread, or NULL when the previous call
 * succeeded. Free with [`alloc_string_free`].
 */
char *alloc_last_error_message(void);

/**
 * Last status for this thread; `Ok` when the previous call succeeded.
 */
AllocStatus alloc_last_status(void);

void alloc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALLOCSIM_H */
