#include <stdio.h>
#include <string.h>
#include "moil.h"

int main(void) {
    MoilDataset *ds = NULL;
    size_t n = 0;
    unsigned char sym[3];
    const double v[3] = {0.0, 0.5, 1.0};

    if (moil_dataset_load_csv("/nonexistent.csv", &ds) != MOIL_STATUS_MISSING_ARTIFACT || ds != NULL)
        return 1;
    if (moil_last_error() == NULL || strstr(moil_last_error(), "nonexistent") == NULL)
        return 2;
    if (moil_symbolize(v, 1, 3, 4, sym) != MOIL_STATUS_OK || sym[0] != 0 || sym[1] != 2 || sym[2] != 3)
        return 3;
    if (moil_dataset_synth(1, &ds) != MOIL_STATUS_OK)
        return 4;
    if (moil_dataset_period_count(ds, &n) != MOIL_STATUS_OK || n == 0)
        return 5;
    moil_dataset_free(ds);
    printf("moil %s: %zu periods\n", moil_version(), n);
    return 0;
}
