#include "sys.h"
int fixture_main(void) { return 42; }
