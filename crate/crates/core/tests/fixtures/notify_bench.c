#include "sys.h"
/* Throughput benchmark: each work item ends with a futex wake. When the wake
 * reports an error the program falls back to spinning, as a lock without
 * kernel notification would. getppid is called once and its result ignored.
 *
 * Each chunk of items is paired with a reference chunk of the same work and
 * no syscalls; the printed metric is reference time over item time (scaled
 * by 1e6), so host frequency drift cancels within a run. */
#ifndef ITEMS
#define ITEMS 200
#endif
#ifndef CHUNKS
#define CHUNKS 20
#endif
#ifndef WORK
#define WORK 75000
#endif
#ifndef SPIN
#define SPIN 30000
#endif
static long cpu_ns(void) {
    long ts[2];
    sc2(SYS_clock_gettime, 2 /* CLOCK_PROCESS_CPUTIME_ID */, ts);
    return ts[0] * 1000000000L + ts[1];
}
static volatile unsigned long acc = 1;
static void spin(long n) {
    for (long j = 0; j < n; j++) acc = acc * 6364136223846793005UL + 1442695040888963407UL;
}
int fixture_main(void) {
    int word = 0;
    sc0(SYS_getppid);
    long ref = 0, items = 0;
    for (int c = 0; c < CHUNKS; c++) {
        long t0 = cpu_ns();
        for (int i = 0; i < ITEMS / CHUNKS; i++) spin(WORK);
        long t1 = cpu_ns();
        for (int i = 0; i < ITEMS / CHUNKS; i++) {
            spin(WORK);
            if (sc6(SYS_futex, (long)&word, 1 /* FUTEX_WAKE */, 1, 0, 0, 0) < 0) spin(SPIN);
        }
        long t2 = cpu_ns();
        ref += t1 - t0;
        items += t2 - t1;
    }
    if (items <= 0) items = 1;
    put_u64(1, (unsigned long)(ref * 1000000L / items));
    return 0;
}
