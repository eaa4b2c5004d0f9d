#ifndef ATP_H
#define ATP_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum {
  ATP_STATUS_OK = 0,
  ATP_STATUS_NULL_POINTER = 1,
  ATP_STATUS_INVALID_INPUT = 2,
  ATP_STATUS_SHAPE_MISMATCH = 3,
  ATP_STATUS_NUMERICAL = 4,
  ATP_STATUS_IO = 5,
  ATP_STATUS_RESOURCE_REFUSED = 6,
  ATP_STATUS_PANIC = 7,
} AtpStatus;

typedef enum {
  ATP_RANK_KIND_FIXED = 0,
  ATP_RANK_KIND_FRACTION = 1,
  ATP_RANK_KIND_ENTROPY = 2,
} AtpRankKind;

typedef enum {
  ATP_NORMALIZER_ROW_SUM = 0,
  ATP_NORMALIZER_TAYLOR_DENOMINATOR = 1,
  ATP_NORMALIZER_SOFTMAX_ON_SCORES = 2,
} AtpNormalizer;

typedef enum {
  ATP_BENCH_MODE_STANDARD = 0,
  ATP_BENCH_MODE_LOWRANK = 1,
} AtpBenchMode;

// Opaque `X ~ U * Xp` factorization.
typedef struct AtpFactors AtpFactors;

// Opaque row-major `f64` matrix.
typedef struct AtpMatrix AtpMatrix;

// `value` is the rank for `Fixed`, the kept fraction for `Fraction` and the
// scale for `Entropy`.
typedef struct {
  AtpRankKind kind;
  double value;
} AtpRankPolicy;

typedef struct {
  // Scale scores by `1/sqrt(head_dim)`.
  bool scale;
  AtpNormalizer normalizer;
  double epsilon;
} AtpAttentionConfig;

typedef struct {
  uint64_t multiplies;
  uint64_t adds;
  uint64_t elementwise;
  uint64_t peak_values_held;
  uint64_t peak_score_entries;
} AtpOpCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the calling thread's most recent failure; empty after a
// success. Owned by the library.
const char *atp_last_error(void);

// Library version, a static NUL-terminated string.
const char *atp_version(void);

// New `rows x cols` matrix copied from `data` (row-major), or zeros when
// `data` is null.
AtpStatus atp_matrix_new(size_t rows, size_t cols, const double *data, AtpMatrix **out);

void atp_matrix_free(AtpMatrix *m);

// Row count; 0 for a null handle.
size_t atp_matrix_rows(const AtpMatrix *m);

// Column count; 0 for a null handle.
size_t atp_matrix_cols(const AtpMatrix *m);

// Copy the entries row-major into `out`, which holds `len >= rows * cols` doubles.
AtpStatus atp_matrix_copy_data(const AtpMatrix *m, double *out, size_t len);

// Read a `.matx` or CSV file.
AtpStatus atp_matrix_read(const char *path, AtpMatrix **out);

// Write as `.matx` (f64) or CSV, chosen by extension.
AtpStatus atp_matrix_write(const AtpMatrix *m, const char *path);

// Base-2 SVD entropy of `n` singular values of a length-`length` sequence.
// Either out-pointer may be null.
AtpStatus atp_svd_entropy(const double *singular_values,
                          size_t n,
                          size_t length,
                          double *out_mu,
                          size_t *out_effective_rank);

// SVD entropy of a matrix's own spectrum.
AtpStatus atp_matrix_entropy(const AtpMatrix *x, double *out_mu);

// Rank chosen by `policy` for `x` (the entropy rule computes the spectrum).
AtpStatus atp_select_rank(const AtpMatrix *x, const AtpRankPolicy *policy, size_t *out_rank);

// Rank-`rank` alternating fit with `inner_iters` rounds per component.
AtpStatus atp_alternating_lowrank(const AtpMatrix *x,
                                  size_t rank,
                                  size_t inner_iters,
                                  uint64_t seed,
                                  AtpFactors **out);

// Exact rank-`rank` truncated SVD; `U` is orthonormal.
AtpStatus atp_exact_truncation(const AtpMatrix *x, size_t rank, AtpFactors **out);

// Same product with orthonormal `U`, as a new handle.
AtpStatus atp_reorthogonalize(const AtpFactors *f, AtpFactors **out);

void atp_factors_free(AtpFactors *f);

// Rank; 0 for a null handle.
size_t atp_factors_rank(const AtpFactors *f);

bool atp_factors_orthonormal(const AtpFactors *f);

// Copy of `U` (`L x r`).
AtpStatus atp_factors_u(const AtpFactors *f, AtpMatrix **out);

// Copy of `Xp` (`r x d`).
AtpStatus atp_factors_xp(const AtpFactors *f, AtpMatrix **out);

// `|U Xp|_F^2 / |X|_F^2`.
AtpStatus atp_energy_ratio(const AtpMatrix *x, const AtpFactors *f, double *out);

// Scaled scores, row-sum normalizer, epsilon 1e-6.
AtpAttentionConfig atp_attention_config_default(void);

// Softmax attention `softmax(s Q K^T) V`.
AtpStatus atp_standard_attention(const AtpMatrix *q,
                                 const AtpMatrix *k,
                                 const AtpMatrix *v,
                                 const AtpAttentionConfig *config,
                                 AtpMatrix **out);

// Dense first-order attention over full-length keys and values.
AtpStatus atp_taylor_dense_attention(const AtpMatrix *q,
                                     const AtpMatrix *k,
                                     const AtpMatrix *v,
                                     const AtpAttentionConfig *config,
                                     AtpMatrix **out);

// First-order attention of full-length queries over `r` principal keys and
// values with basis `u` (`L x r`).
AtpStatus atp_lowrank_attention(const AtpMatrix *q,
                                const AtpMatrix *kp,
                                const AtpMatrix *vp,
                                const AtpMatrix *u,
                                const AtpAttentionConfig *config,
                                AtpMatrix **out);

// Closed-form operation counts of one benchmark pipeline, summed over stages.
AtpStatus atp_predicted_ops(size_t length,
                            size_t rank,
                            size_t dim,
                            size_t hidden,
                            size_t inner_iters,
                            AtpBenchMode mode,
                            AtpOpCounts *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATP_H */
