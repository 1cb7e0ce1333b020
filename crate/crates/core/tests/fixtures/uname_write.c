#include "sys.h"
/* uname then write: footprint {uname, write, exit_group} */
int fixture_main(void) {
    char buf[390 * 2];
    sc1(SYS_uname, buf);
    put(1, "uname done\n");
    return 0;
}
