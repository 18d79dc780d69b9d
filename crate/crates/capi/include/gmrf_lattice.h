#ifndef GMRF_LATTICE_H
#define GMRF_LATTICE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every C-ABI function.
 */
typedef enum {
  GMRF_STATUS_OK = 0,
  GMRF_STATUS_NULL_POINTER = 1,
  GMRF_STATUS_INVALID_ARGUMENT = 2,
  GMRF_STATUS_PRECONDITION = 3,
  GMRF_STATUS_NOT_POSITIVE_DEFINITE = 4,
  GMRF_STATUS_IO = 5,
  GMRF_STATUS_UTF8 = 6,
  GMRF_STATUS_BUFFER_TOO_SMALL = 7,
  GMRF_STATUS_PANIC = 8,
} GmrfStatus;

/**
 * Opaque sample batch handle.
 */
typedef struct GmrfBatch GmrfBatch;

/**
 * Opaque validated parameter handle (θ ∈ Θ⁺, σ² > 0).
 */
typedef struct GmrfParams GmrfParams;

/**
 * Opaque θ grid handle.
 */
typedef struct GmrfTheta GmrfTheta;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *gmrf_version(void);

/**
 * Copy the last error message into `buf` (truncating) and return the full
 * message length in bytes, excluding the terminator.
 */
size_t gmrf_last_error(char *buf, size_t len);

/**
 * Allocate the zero field on the p×p torus.
 */
GmrfStatus gmrf_theta_new(size_t p, GmrfTheta **out);

void gmrf_theta_free(GmrfTheta *theta);

/**
 * Set θ[i,j] and its symmetric image θ[−i,−j] (indices may be negative).
 */
GmrfStatus gmrf_theta_set(GmrfTheta *theta, int64_t i, int64_t j, double value);

GmrfStatus gmrf_theta_get(const GmrfTheta *theta, int64_t i, int64_t j, double *out);

GmrfStatus gmrf_theta_l1(const GmrfTheta *theta, double *out);

GmrfStatus gmrf_theta_load_json(const char *path, GmrfTheta **out);

GmrfStatus gmrf_theta_save_json(const GmrfTheta *theta, const char *path);

/**
 * Eigenvalues of C(θ) in row-major frequency order; `buf` must hold p²
 * doubles.
 */
GmrfStatus gmrf_spectrum_c(const GmrfTheta *theta, double *buf, size_t len);

/**
 * Validate (θ, σ²) as a GMRF parameter pair.
 */
GmrfStatus gmrf_params_new(const GmrfTheta *theta, double sigma_sq, GmrfParams **out);

void gmrf_params_free(GmrfParams *params);

/**
 * Eigenvalues of the covariance Σ; `buf` must hold p² doubles.
 */
GmrfStatus gmrf_cov_spectrum(const GmrfParams *params, double *buf, size_t len);

GmrfStatus gmrf_covariance_lag(const GmrfParams *params, int64_t k, int64_t l, double *out);

GmrfStatus gmrf_variance_origin(const GmrfParams *params, double *out);

/**
 * Spectral Kullback–Leibler divergence between two fields (σ² cancels).
 */
GmrfStatus gmrf_kl_divergence(const GmrfTheta *theta1,
                              const GmrfTheta *theta2,
                              double sigma_sq,
                              double *out);

/**
 * Draw n replicates; deterministic in (seed, n).
 */
GmrfStatus gmrf_sample(const GmrfParams *params, size_t n, uint64_t seed, GmrfBatch **out);

void gmrf_batch_free(GmrfBatch *batch);

GmrfStatus gmrf_batch_n(const GmrfBatch *batch, size_t *out);

GmrfStatus gmrf_batch_p(const GmrfBatch *batch, size_t *out);

/**
 * Copy one replicate (row-major p² doubles) into `buf`.
 */
GmrfStatus gmrf_batch_replicate(const GmrfBatch *batch, size_t replicate, double *buf, size_t len);

GmrfStatus gmrf_batch_save(const GmrfBatch *batch, const char *path);

GmrfStatus gmrf_batch_load(const char *path, GmrfBatch **out);

/**
 * Build a batch from caller data: n replicates of p² row-major doubles.
 */
GmrfStatus gmrf_batch_from_data(size_t p,
                                size_t n,
                                const double *data,
                                size_t len,
                                GmrfBatch **out);

/**
 * Fit one model of the nested collection; writes the fitted θ into a new
 * handle and reports the contrast value and convergence flag.
 */
GmrfStatus gmrf_fit(const GmrfBatch *batch,
                    size_t model_index,
                    double rho,
                    bool isotropic,
                    GmrfTheta **out_theta,
                    double *out_contrast,
                    bool *out_converged);

/**
 * Penalized selection over the whole collection; returns the chosen model
 * index and its criterion value.
 */
GmrfStatus gmrf_select(const GmrfBatch *batch,
                       double k,
                       double rho1,
                       double rho2,
                       double sigma_sq,
                       bool isotropic,
                       size_t *out_chosen,
                       double *out_criterion);

/**
 * Prediction-type loss l(θ̂, θ) under the parameters.
 */
GmrfStatus gmrf_loss(const GmrfTheta *theta_hat, const GmrfParams *params, double *out);

/**
 * Infinite-lattice 4NN covariance limit (quadrature).
 */
GmrfStatus gmrf_moran_limit(double alpha, double *out);

/**
 * Number of models in the nested collection at side p.
 */
GmrfStatus gmrf_collection_len(size_t p, size_t *out);

/**
 * Dimensions of one model: d_m and d_m^iso.
 */
GmrfStatus gmrf_model_dims(size_t p, size_t model_index, size_t *out_d_m, size_t *out_d_m_iso);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GMRF_LATTICE_H */
