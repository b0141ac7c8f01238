#include <stdio.h>
#include <string.h>

#include "ssvs.h"

int main(void) {
    const char *scenario =
        "{\"name\":\"c\",\"stack\":\"vs\",\"n\":3,\"link_capacity\":1,\"seed\":4,"
        "\"step_budget\":600,\"params\":{\"queues\":{\"test\":{\"own\":12,\"k\":24}}}}";
    SsvsTrace *t = NULL;
    if (ssvs_run(scenario, &t) != SSVS_STATUS_OK) {
        fprintf(stderr, "run: %s\n", ssvs_last_error());
        return 1;
    }
    uint64_t events = 0;
    ssvs_trace_event_count(t, &events);
    bool pass = false;
    char *verdicts = NULL;
    if (ssvs_check(t, "all", &pass, &verdicts) != SSVS_STATUS_OK || !pass) {
        fprintf(stderr, "check failed: %s\n", verdicts ? verdicts : ssvs_last_error());
        return 1;
    }
    printf("%llu events, %s\n", (unsigned long long)events, verdicts);
    ssvs_string_free(verdicts);

    if (ssvs_check(t, "nope", &pass, NULL) != SSVS_STATUS_UNKNOWN_PROPERTY) {
        return 1;
    }
    ssvs_trace_free(t);

    SsvsOrdering o;
    if (ssvs_label_compare("0:2:{1,3}", "1:2:{1,3}", &o) != SSVS_STATUS_OK || o != SSVS_ORDERING_LESS) {
        return 1;
    }
    printf("ok %s\n", ssvs_version());
    return 0;
}
