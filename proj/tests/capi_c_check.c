/* The public header must compile as C. */
#include <stdio.h>
#include <string.h>

#include "mmreg/mmreg.h"

int main(void) {
    mmreg_config* config = NULL;
    char value[32];
    if (mmreg_config_new(&config) != MMREG_OK) return 1;
    if (mmreg_config_set(config, "threads", "3") != MMREG_OK) return 2;
    if (mmreg_config_get(config, "threads", value, sizeof value, NULL) != MMREG_OK) return 3;
    if (strcmp(value, "3") != 0) return 4;
    if (mmreg_config_set(config, "bogus", "1") != MMREG_ERR_CONFIG) return 5;
    mmreg_config_free(config);
    printf("mmreg %s\n", mmreg_version());
    return 0;
}
