#include <stdio.h>
#include <assert.h>
#include "allocsim.h"

int main(void) {
    AllocPlan *plan = alloc_plan_parse(
        "T = 16\nK = 2\nrho = 0.5\nupdater = ftrl\nagents = truthful\nn_trials = 1\nseed = 5\n");
    assert(plan != NULL);
    assert(alloc_plan_set_seed(plan, 9) == AllocStatus_Ok);
    AllocSummary *summary = alloc_run(plan);
    assert(summary != NULL);
    double welfare = alloc_summary_welfare_mean(summary);
    double violation = alloc_summary_violation_max(summary);
    printf("welfare=%.4f violation=%.1f\n", welfare, violation);
    assert(violation == 0.0);
    char *json = alloc_summary_to_json(summary);
    assert(json != NULL);
    alloc_string_free(json);
    alloc_summary_free(summary);
    alloc_plan_free(plan);
    AllocPlan *bad = alloc_plan_parse("T = 0\n");
    assert(bad == NULL);
    assert(alloc_last_status() == AllocStatus_ConfigError);
    char *msg = alloc_last_error_message();
    printf("expected error: %s\n", msg);
    alloc_string_free(msg);
    puts("C smoke test OK");
    return 0;
}
