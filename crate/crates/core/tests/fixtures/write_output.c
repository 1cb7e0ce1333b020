#include "sys.h"
/* The workload checks the bytes this program writes. */
int fixture_main(void) {
    put(1, "hello from fixture\n");
    return 0;
}
