#include <math.h>
#include <stdio.h>
#include <string.h>

#include "atp.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        AtpStatus s_ = (call);                                               \
        if (s_ != ATP_STATUS_OK) {                                           \
            fprintf(stderr, "%s -> %d: %s\n", #call, s_, atp_last_error()); \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    /* Rank-2 6x4 input. */
    double x[24];
    for (int i = 0; i < 6; i++)
        for (int j = 0; j < 4; j++)
            x[i * 4 + j] = (i + 1) * (j - 1.5) + (i % 2) * (j == 2);
    AtpMatrix *xm = NULL;
    CHECK(atp_matrix_new(6, 4, x, &xm));

    AtpFactors *f = NULL;
    CHECK(atp_exact_truncation(xm, 2, &f));
    double energy = 0.0;
    CHECK(atp_energy_ratio(xm, f, &energy));
    if (fabs(energy - 1.0) > 1e-10 || atp_factors_rank(f) != 2 || !atp_factors_orthonormal(f)) {
        fprintf(stderr, "unexpected factorization: energy %g\n", energy);
        return 1;
    }

    /* Keys and values through the principal rows; compare to the dense oracle. */
    AtpMatrix *u = NULL, *xp = NULL, *out_low = NULL, *out_dense = NULL;
    CHECK(atp_factors_u(f, &u));
    CHECK(atp_factors_xp(f, &xp));
    AtpAttentionConfig cfg = atp_attention_config_default();
    CHECK(atp_lowrank_attention(xm, xp, xp, u, &cfg, &out_low));
    CHECK(atp_taylor_dense_attention(xm, xm, xm, &cfg, &out_dense));
    double a[24], b[24];
    CHECK(atp_matrix_copy_data(out_low, a, 24));
    CHECK(atp_matrix_copy_data(out_dense, b, 24));
    for (int i = 0; i < 24; i++) {
        if (fabs(a[i] - b[i]) > 1e-9 * (1.0 + fabs(b[i]))) {
            fprintf(stderr, "entry %d: %g vs %g\n", i, a[i], b[i]);
            return 1;
        }
    }

    /* Error path: rank beyond min(L, d). */
    AtpFactors *bad = NULL;
    if (atp_exact_truncation(xm, 5, &bad) != ATP_STATUS_INVALID_INPUT || bad != NULL ||
        strlen(atp_last_error()) == 0) {
        fprintf(stderr, "expected invalid-input status\n");
        return 1;
    }

    AtpOpCounts ops;
    CHECK(atp_predicted_ops(512, 128, 128, 64, 2, ATP_BENCH_MODE_STANDARD, &ops));
    if (ops.peak_score_entries != 512u * 512u) return 1;

    atp_matrix_free(out_dense);
    atp_matrix_free(out_low);
    atp_matrix_free(xp);
    atp_matrix_free(u);
    atp_factors_free(f);
    atp_matrix_free(xm);
    printf("ok %s\n", atp_version());
    return 0;
}
