#include "sys.h"
/* Opens 100 descriptors and holds them briefly. */
int fixture_main(void) {
    for (int i = 0; i < 100; i++) {
        if (sc6(SYS_openat, AT_FDCWD, (long)"/dev/null", 0, 0, 0, 0) < 0) return 1;
    }
    long ts[2] = {0, 300 * 1000 * 1000};
    sc2(SYS_nanosleep, ts, 0);
    return 0;
}
