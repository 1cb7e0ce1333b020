#include "sys.h"
/* Touches a 64 MiB buffer, then sleeps. */
#define SIZE (64UL << 20)
static char buffer[SIZE];
int fixture_main(void) {
    for (unsigned long i = 0; i < SIZE; i += 4096) ((volatile char *)buffer)[i] = 1;
    long ts[2] = {1, 0};
    sc2(SYS_nanosleep, ts, 0);
    return 0;
}
