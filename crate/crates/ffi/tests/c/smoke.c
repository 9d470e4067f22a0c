#include <math.h>
#include <stdio.h>
#include "gram_dyson.h"

int main(void) {
    const double s[4] = {0.25, 0.25, 0.25, 0.25};
    GdProfile *prof = NULL;
    if (gd_profile_new_dense(2, 2, s, &prof) != GD_STATUS_OK) return 1;
    double m[4], avg[2], res;
    if (gd_solve_gram(prof, 1.0, 0.5, m, 4, avg, &res) != GD_STATUS_OK) return 2;
    if (!(avg[1] > 0.0) || res > 1e-8) return 3;
    if (gd_solve_gram(prof, 1.0, -0.5, m, 4, avg, &res) != GD_STATUS_DOMAIN) return 4;
    if (gd_last_error_message() == NULL) return 5;
    gd_profile_free(prof);
    printf("ok %s\n", gd_version());
    return 0;
}
