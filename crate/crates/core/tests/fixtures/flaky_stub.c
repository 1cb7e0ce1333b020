#include "sys.h"
/* When sched_yield reports an error, fails at random in about one run in three. */
int fixture_main(void) {
    unsigned char r = 0;
    sc3(SYS_getrandom, &r, 1, 0);
    if (sc0(SYS_sched_yield) < 0 && r % 3 == 0) {
        put(2, "scheduler hint failed\n");
        return 1;
    }
    return 0;
}
