#include "sys.h"
/* Seeds from /dev/urandom; falls back to a fixed seed if it cannot be opened.
 * A descriptor that yields no bytes is a hard error. Also reads ./data.txt. */
int fixture_main(void) {
    char seed[16];
    long fd = sc6(SYS_openat, AT_FDCWD, (long)"/dev/urandom", 0, 0, 0, 0);
    if (fd < 0) {
        put(1, "seed: fallback\n");
    } else {
        long n = sc3(SYS_read, fd, seed, sizeof seed);
        if (n != (long)sizeof seed) {
            put(2, "short read from entropy source\n");
            return 3;
        }
        sc1(SYS_close, fd);
        put(1, "seed: urandom\n");
    }
    char data[64];
    long dfd = sc6(SYS_openat, AT_FDCWD, (long)"data.txt", 0, 0, 0, 0);
    if (dfd < 0) {
        put(2, "missing data.txt\n");
        return 4;
    }
    long n = sc3(SYS_read, dfd, data, sizeof data);
    if (n <= 0) return 5;
    sc3(SYS_write, 1, data, n);
    return 0;
}
