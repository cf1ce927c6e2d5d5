/* SPDX-License-Identifier: Apache-2.0 */
#include <stdio.h>
#include <string.h>

#include "rftrojan.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            const char *e = rt_last_error();                          \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__,   \
                    #cond, e ? e : "no error");                       \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    RtScenario *s = NULL;
    RtRun *run = NULL;
    RtRunOptions opts = {0};
    RtRunSummary sum;
    char *digest = NULL;

    CHECK(rt_builtin_count() == 6);
    CHECK(rt_scenario_builtin("rp_fork_leak", &s) == RT_STATUS_OK);
    opts.retain_trace = true;
    CHECK(rt_run(s, &opts, &run) == RT_STATUS_OK);
    CHECK(rt_run_summary(run, &sum) == RT_STATUS_OK);
    CHECK(sum.triggered && sum.hammers_at_latch == 1837);
    CHECK(sum.faulted_processes == 3);
    CHECK(rt_run_digest(run, &digest) == RT_STATUS_OK);
    CHECK(strlen(digest) == 64);
    printf("%s\n", digest);
    rt_string_free(digest);
    rt_run_free(run);
    rt_scenario_free(s);

    CHECK(rt_scenario_builtin("missing", &s) == RT_STATUS_NOT_FOUND);
    CHECK(rt_last_error() != NULL);
    return 0;
}
