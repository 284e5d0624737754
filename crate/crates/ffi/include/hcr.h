#ifndef HCR_H
#define HCR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum HcrStatus {
  HcrStatus_Ok = 0,
  HcrStatus_NullPointer = 1,
  /**
   * Invalid argument or unsupported degree.
   */
  HcrStatus_Config = 2,
  /**
   * Input data rejected: out of domain, too short, wrong shape.
   */
  HcrStatus_Data = 3,
  /**
   * A fit or conditioning step failed numerically.
   */
  HcrStatus_Numeric = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  HcrStatus_Panic = 5,
} HcrStatus;

typedef enum HcrFamily {
  HcrFamily_Gaussian = 0,
  HcrFamily_Laplace = 1,
  HcrFamily_Epd = 2,
} HcrFamily;

typedef enum HcrCalibrationKind {
  HcrCalibrationKind_None = 0,
  HcrCalibrationKind_Clamp = 1,
  HcrCalibrationKind_PiecewiseLinear = 2,
} HcrCalibrationKind;

/**
 * Orthonormal polynomial basis on `[0, 1]`.
 */
typedef struct HcrBasis HcrBasis;

/**
 * Conditional density of the last coordinate.
 */
typedef struct HcrDensity HcrDensity;

/**
 * Fitted marginal distribution.
 */
typedef struct HcrMarginal HcrMarginal;

/**
 * Coefficient tensor of a joint density.
 */
typedef struct HcrTensor HcrTensor;

/**
 * Calibration map. `Clamp` reads only `floor`; `None` reads nothing.
 */
typedef struct HcrCalibration {
  enum HcrCalibrationKind kind;
  double floor;
  double slope;
  double intercept;
} HcrCalibration;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string, truncating to `len` bytes. Returns the length
 * needed including the terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or point to at least `len` writable bytes.
 */
uintptr_t hcr_last_error_message(char *buf, uintptr_t len);

/**
 * Basis `f_0 ..= f_max_degree`.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum HcrStatus hcr_basis_new(uintptr_t max_degree, struct HcrBasis **out);

/**
 * `f_j(x)` for `x` in `[0, 1]`.
 *
 * # Safety
 * `basis` must come from [`hcr_basis_new`]; `out` must be writable.
 */
enum HcrStatus hcr_basis_eval(const struct HcrBasis *basis, uintptr_t j, double x, double *out);

/**
 * # Safety
 * `basis` must be null or come from [`hcr_basis_new`] and not be used again.
 */
void hcr_basis_free(struct HcrBasis *basis);

/**
 * Fits a marginal family to `n` returns.
 *
 * # Safety
 * `y` must point to `n` doubles; `out` must be writable.
 */
enum HcrStatus hcr_marginal_fit(enum HcrFamily family,
                                const double *y,
                                uintptr_t n,
                                struct HcrMarginal **out);

/**
 * # Safety
 * `m` must come from [`hcr_marginal_fit`]; `out` must be writable.
 */
enum HcrStatus hcr_marginal_cdf(const struct HcrMarginal *m, double y, double *out);

/**
 * # Safety
 * `m` must come from [`hcr_marginal_fit`]; `out` must be writable.
 */
enum HcrStatus hcr_marginal_pdf(const struct HcrMarginal *m, double y, double *out);

/**
 * Location, scale and shape. `kappa` is NaN for the two-parameter families.
 *
 * # Safety
 * `m` must come from [`hcr_marginal_fit`]; out pointers must be writable.
 */
enum HcrStatus hcr_marginal_params(const struct HcrMarginal *m,
                                   double *mu,
                                   double *scale,
                                   double *kappa);

/**
 * # Safety
 * `m` must be null or come from [`hcr_marginal_fit`] and not be used again.
 */
void hcr_marginal_free(struct HcrMarginal *m);

/**
 * Estimates all coefficients from the overlapping windows of length `d`
 * of the normalized series `x` (values in `[0, 1]`). `degrees` holds one
 * maximum degree per window coordinate.
 *
 * # Safety
 * `x` must point to `n` doubles, `degrees` to `d` sizes; `basis` must come
 * from [`hcr_basis_new`]; `out` must be writable.
 */
enum HcrStatus hcr_tensor_estimate(const double *x,
                                   uintptr_t n,
                                   uintptr_t d,
                                   const uintptr_t *degrees,
                                   const struct HcrBasis *basis,
                                   struct HcrTensor **out);

/**
 * Coefficient at multi-index `j` of length `d`.
 *
 * # Safety
 * `t` must come from this library; `j` must point to `d` sizes.
 */
enum HcrStatus hcr_tensor_get(const struct HcrTensor *t,
                              const uintptr_t *j,
                              uintptr_t d,
                              double *out);

/**
 * New tensor without the coefficients below `threshold / sqrt(n)`.
 *
 * # Safety
 * `t` must come from this library; `out` must be writable.
 */
enum HcrStatus hcr_tensor_prune(const struct HcrTensor *t,
                                double threshold,
                                struct HcrTensor **out);

/**
 * # Safety
 * `t` must be null or come from this library and not be used again.
 */
void hcr_tensor_free(struct HcrTensor *t);

/**
 * Conditional density of the last coordinate given the `len = d - 1`
 * previous values. With `uniform_fallback` set, a context of nonpositive
 * mass yields the uniform density instead of a `Numeric` error.
 *
 * # Safety
 * `t` and `basis` must come from this library; `context` must point to
 * `len` doubles; `out` must be writable.
 */
enum HcrStatus hcr_condition(const struct HcrTensor *t,
                             const struct HcrBasis *basis,
                             const double *context,
                             uintptr_t len,
                             bool uniform_fallback,
                             struct HcrDensity **out);

/**
 * Calibrated density at `x`. A null `cal` selects the default map.
 *
 * # Safety
 * `p` must come from [`hcr_condition`]; `cal` must be null or valid.
 */
enum HcrStatus hcr_density_eval(const struct HcrDensity *p,
                                double x,
                                const struct HcrCalibration *cal,
                                double *out);

/**
 * Integral of the calibrated density from 0 to `x`.
 *
 * # Safety
 * `p` must come from [`hcr_condition`]; `cal` must be null or valid.
 */
enum HcrStatus hcr_density_cdf(const struct HcrDensity *p,
                               double x,
                               const struct HcrCalibration *cal,
                               double *out);

/**
 * Writes up to `len` basis coefficients into `buf` and their total count
 * into `count`. Pass a null `buf` to query the count.
 *
 * # Safety
 * `p` must come from [`hcr_condition`]; `buf` must be null or hold `len`
 * doubles; `count` must be writable.
 */
enum HcrStatus hcr_density_coefficients(const struct HcrDensity *p,
                                        double *buf,
                                        uintptr_t len,
                                        uintptr_t *count);

/**
 * Whether the density is the uniform stand-in for a degenerate context.
 *
 * # Safety
 * `p` must come from [`hcr_condition`]; `out` must be writable.
 */
enum HcrStatus hcr_density_is_fallback(const struct HcrDensity *p, bool *out);

/**
 * # Safety
 * `p` must be null or come from [`hcr_condition`] and not be used again.
 */
void hcr_density_free(struct HcrDensity *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HCR_H */
