/* Minimal C consumer of the hsolver C ABI.
 *
 * Build (after `cargo build -p hsolver-ffi`):
 *   cc -std=c99 -I crates/hsolver-ffi/include examples/smoke.c \
 *      target/debug/libhsolver_ffi.a -lm -lpthread -ldl -o smoke
 */
#include "hsolver.h"
int main(void) {
    HsvConfig c;
    if (hsv_config_default(&c) != HSV_STATUS_OK) return 1;
    HsvMatrix *m = 0;
    size_t rows[] = {0, 0, 1};
    size_t cols[] = {0, 1, 1};
    double vals[] = {2.0, -1.0, 2.0};
    if (hsv_matrix_from_triplets(2, rows, cols, vals, 3, &m) != HSV_STATUS_OK) return 2;
    HsvFactorization *f = 0;
    c.eps = 0.0;
    if (hsv_factor(m, &c, 0, &f) != HSV_STATUS_OK) return 3;
    double b[2] = {1.0, 1.0};
    double x[2] = {0.0, 0.0};
    if (hsv_factor_apply(f, b, x, 2) != HSV_STATUS_OK) return 4;
    // A = [[2,-1],[-1,2]], b = ones: x = [1, 1].
    if (x[0] < 0.999 || x[0] > 1.001 || x[1] < 0.999 || x[1] > 1.001) return 5;
    hsv_factor_free(f);
    hsv_matrix_free(m);
    return 0;
}
