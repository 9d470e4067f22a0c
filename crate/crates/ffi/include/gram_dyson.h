#ifndef GRAM_DYSON_H
#define GRAM_DYSON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GdStatus {
  GD_STATUS_OK = 0,
  GD_STATUS_NULL_POINTER = 1,
  GD_STATUS_INVALID_ARGUMENT = 2,
  // Spectral parameter outside the admissible domain.
  GD_STATUS_DOMAIN = 3,
  GD_STATUS_NON_CONVERGENCE = 4,
  // Other numerical failure (fit, eigensolve, conditioning).
  GD_STATUS_NUMERICAL = 5,
  GD_STATUS_BUFFER_TOO_SMALL = 6,
  GD_STATUS_PANIC = 7,
} GdStatus;

typedef enum GdNormalization {
  // Values divided by p + n.
  GD_NORMALIZATION_DIMENSION = 0,
  GD_NORMALIZATION_RAW = 1,
} GdNormalization;

// Opaque variance profile.
typedef struct GdProfile GdProfile;

// Scalar stability diagnostics at one point z of the embedded equation.
typedef struct GdStability {
  double norm_f;
  double gap_fft;
  double beta_re;
  double beta_im;
  double psi;
  double sigma;
  double alpha;
  double psi_plus_sigma2;
  // Infinite when B is numerically singular.
  double norm_binv;
  double im_avg;
} GdStability;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *gd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *gd_version(void);

// Profile from a row-major p×n variance matrix with unit weights.
//
// # Safety
// `s` must point to `p * n` doubles and `out` to writable storage.
enum GdStatus gd_profile_new_dense(size_t p, size_t n, const double *s, struct GdProfile **out);

// Profile with explicit row weights `w1` (length p) and column weights `w2`
// (length n).
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum GdStatus gd_profile_new_weighted(size_t p,
                                      size_t n,
                                      const double *s,
                                      const double *w1,
                                      const double *w2,
                                      struct GdProfile **out);

// Block profile expanded to p×n. `values` is row-major `rows × cols`;
// null fraction pointers mean equal fractions.
//
// # Safety
// `values` must hold `rows * cols` doubles, the fraction arrays `rows` and
// `cols` doubles when not null.
enum GdStatus gd_profile_new_blocks(size_t rows,
                                    size_t cols,
                                    const double *values,
                                    const double *row_fractions,
                                    const double *col_fractions,
                                    enum GdNormalization normalization,
                                    size_t p,
                                    size_t n,
                                    struct GdProfile **out);

// # Safety
// `profile` must come from a `gd_profile_new_*` call and not be used again.
void gd_profile_free(struct GdProfile *profile);

// # Safety
// `profile` must be a live handle; `p` and `n` writable.
enum GdStatus gd_profile_dims(const struct GdProfile *profile, size_t *p, size_t *n);

// Solution m(ζ) of the Gram equation at ζ = re + i·im. `m_out` receives
// `2p` doubles (interleaved), `avg_out` two doubles for ⟨m⟩; `residual_out`
// may be null.
//
// # Safety
// Output pointers must reference writable arrays of the stated lengths.
enum GdStatus gd_solve_gram(const struct GdProfile *profile,
                            double re,
                            double im,
                            double *m_out,
                            size_t m_len,
                            double *avg_out,
                            double *residual_out);

// Extrapolated averaged density at `count` energies.
//
// # Safety
// `energies` and `density_out` must reference `count` doubles.
enum GdStatus gd_density(const struct GdProfile *profile,
                         const double *energies,
                         size_t count,
                         double eta_floor,
                         double *density_out);

// Density on a uniform grid of `count` points over [lo, hi].
//
// # Safety
// `density_out` must reference `count` doubles.
enum GdStatus gd_density_grid(const struct GdProfile *profile,
                              double lo,
                              double hi,
                              size_t count,
                              double eta_floor,
                              double *density_out);

// Scalar stability diagnostics at z = re + i·im of the embedded equation.
//
// # Safety
// `out` must be writable.
enum GdStatus gd_stability(const struct GdProfile *profile,
                           double re,
                           double im,
                           struct GdStability *out);

// Support and boundary classification as a JSON document. The string is
// owned by the caller and released with [`gd_string_free`].
//
// # Safety
// `json_out` must be writable.
enum GdStatus gd_classify_json(const struct GdProfile *profile, double delta, char **json_out);

// # Safety
// `s` must come from this library and not be used again.
void gd_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRAM_DYSON_H */
