#include "sys.h"
/* Reads the same setting from two redundant sources; fails only if both fail. */
int fixture_main(void) {
    char uts[390 * 2];
    char info[256];
    int ok = 0;
    if (sc1(SYS_uname, uts) >= 0) ok++;
    if (sc1(SYS_sysinfo, info) >= 0) ok++;
    if (!ok) {
        put(2, "no configuration source available\n");
        return 1;
    }
    put(1, "configured\n");
    return 0;
}
