#include <math.h>
#include <stdio.h>

#include "mg1nn.h"

int main(void) {
    double alpha[1] = {1.0};
    double s[1] = {-1.0};
    Mg1PhaseType *ph = NULL;
    if (mg1_ph_new(1, alpha, s, &ph) != MG1_STATUS_OK) {
        fprintf(stderr, "ph_new: %s\n", mg1_last_error_message());
        return 1;
    }
    double probs[70];
    double tail = 0.0;
    if (mg1_solve(0.5, ph, 70, 0.0, probs, &tail) != MG1_STATUS_OK) {
        fprintf(stderr, "solve: %s\n", mg1_last_error_message());
        return 1;
    }
    for (int n = 0; n < 70; n++) {
        if (fabs(probs[n] - pow(0.5, n + 1)) > 1e-10) {
            fprintf(stderr, "P(N=%d) = %g\n", n, probs[n]);
            return 1;
        }
    }
    if (mg1_solve(2.0, ph, 70, 0.0, probs, NULL) != MG1_STATUS_UNSTABLE) {
        return 1;
    }
    mg1_ph_free(ph);
    printf("ok %s\n", mg1_version());
    return 0;
}
