#include "sys.h"
/* Aborts when prctl(PR_SET_KEEPCAPS, 1) reports an error, proceeds on 0. */
int fixture_main(void) {
    if (sc2(SYS_prctl, 8 /* PR_SET_KEEPCAPS */, 1) < 0) {
        put(2, "prctl(PR_SET_KEEPCAPS, 1) failed\n");
        return 2;
    }
    put(1, "ready\n");
    return 0;
}
