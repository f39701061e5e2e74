/* C ABI for the cchbal balanced case-cohort sampling library. */

#ifndef CCHBAL_H
#define CCHBAL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible entry point.
 */
typedef enum CchbalStatus {
  CCHBAL_STATUS_OK = 0,
  CCHBAL_STATUS_NULL_POINTER = 1,
  CCHBAL_STATUS_INVALID_UTF8 = 2,
  /*
   Invalid argument or configuration.
   */
  CCHBAL_STATUS_ARGUMENT = 3,
  /*
   Malformed or inconsistent input data.
   */
  CCHBAL_STATUS_DATA = 4,
  /*
   Numerical failure (non-convergence, separation, singularity).
   */
  CCHBAL_STATUS_NUMERIC = 5,
} CchbalStatus;

/*
 Sampling strategy selector.
 */
typedef enum CchbalDesignKind {
  CCHBAL_DESIGN_KIND_SRS = 0,
  CCHBAL_DESIGN_KIND_BS = 1,
  CCHBAL_DESIGN_KIND_CAL = 2,
  CCHBAL_DESIGN_KIND_BSC = 3,
} CchbalDesignKind;

/*
 Whether cases are force-included.
 */
typedef enum CchbalDesignMode {
  CCHBAL_DESIGN_MODE_SUBCOHORT_ONLY = 0,
  CCHBAL_DESIGN_MODE_CASE_COHORT = 1,
} CchbalDesignMode;

/*
 Opaque cohort handle.
 */
typedef struct CchbalCohort CchbalCohort;

/*
 Opaque fit handle: coefficients plus the variance decomposition of one
 design run or census fit.
 */
typedef struct CchbalFit CchbalFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *cchbal_version(void);

/*
 Message of the most recent failure on this thread. The pointer remains
 valid until the next failing call on the same thread.
 */
const char *cchbal_last_error_message(void);

/*
 Reads a cohort from a CSV file
 (`id,time,event,z1..zK,zs1..zsM,stratum`).

 # Safety
 `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum CchbalStatus cchbal_cohort_read_csv(const char *path, struct CchbalCohort **out);

/*
 Generates a synthetic cohort from the simulation protocol: covariates
 with lag-one correlation `rho` (dichotomized when `binary_covariates`),
 exponential failure times under the proportional-hazards model, and
 exponential censoring tuned to `censor_target`.

 # Safety
 `beta` must point to `n_covariates` doubles; `out` must be valid.
 */
enum CchbalStatus cchbal_cohort_simulate(size_t n_cohort,
                                         const double *beta,
                                         size_t n_covariates,
                                         double rho,
                                         double censor_target,
                                         bool binary_covariates,
                                         double aux_noise_sd,
                                         uint64_t seed,
                                         struct CchbalCohort **out);

/*
 Number of subjects, or 0 for a null handle.

 # Safety
 `cohort` must be null or a live handle.
 */
size_t cchbal_cohort_size(const struct CchbalCohort *cohort);

/*
 Writes the cohort back out in the CSV schema.

 # Safety
 `cohort` must be a live handle; `path` a valid NUL-terminated string.
 */
enum CchbalStatus cchbal_cohort_write_csv(const struct CchbalCohort *cohort, const char *path);

/*
 Releases a cohort handle (null is a no-op).

 # Safety
 `cohort` must be null or a pointer previously returned by a constructor,
 not yet freed.
 */
void cchbal_cohort_free(struct CchbalCohort *cohort);

/*
 Census Cox fit on the phase-2 covariates with unit weights.

 # Safety
 `cohort` must be a live handle and `out` a valid pointer.
 */
enum CchbalStatus cchbal_fit_census(const struct CchbalCohort *cohort, struct CchbalFit **out);

/*
 Runs a single-stratum phase-2 design end to end: auxiliary delta-betas,
 sampling (`kind`), weighting and the weighted fit with its sandwich
 variance. `subcohort_size` counts controls in case-cohort mode.

 # Safety
 `cohort` must be a live handle and `out` a valid pointer.
 */
enum CchbalStatus cchbal_run_design(const struct CchbalCohort *cohort,
                                    enum CchbalDesignKind kind,
                                    enum CchbalDesignMode mode,
                                    size_t subcohort_size,
                                    uint64_t seed,
                                    struct CchbalFit **out);

/*
 Number of coefficients, or 0 for a null handle.

 # Safety
 `fit` must be null or a live handle.
 */
size_t cchbal_fit_dim(const struct CchbalFit *fit);

/*
 Copies the fitted coefficients into `buf` (length `len >= dim`).

 # Safety
 `fit` must be a live handle; `buf` must point to `len` doubles.
 */
enum CchbalStatus cchbal_fit_coefficients(const struct CchbalFit *fit, double *buf, size_t len);

/*
 Copies the total standard errors into `buf`.

 # Safety
 As for [`cchbal_fit_coefficients`].
 */
enum CchbalStatus cchbal_fit_standard_errors(const struct CchbalFit *fit, double *buf, size_t len);

/*
 Copies the phase-1 standard errors into `buf`.

 # Safety
 As for [`cchbal_fit_coefficients`].
 */
enum CchbalStatus cchbal_fit_phase1_se(const struct CchbalFit *fit, double *buf, size_t len);

/*
 Copies the phase-2 standard errors into `buf`.

 # Safety
 As for [`cchbal_fit_coefficients`].
 */
enum CchbalStatus cchbal_fit_phase2_se(const struct CchbalFit *fit, double *buf, size_t len);

/*
 Phase-2 sample size behind the fit.

 # Safety
 `fit` must be null or a live handle.
 */
size_t cchbal_fit_n_phase2(const struct CchbalFit *fit);

/*
 Whether the fit was flagged for perfect separation (its estimates are
 reported but should be excluded from summaries).

 # Safety
 `fit` must be null or a live handle.
 */
bool cchbal_fit_separation(const struct CchbalFit *fit);

/*
 Whether the solver converged.

 # Safety
 `fit` must be null or a live handle.
 */
bool cchbal_fit_converged(const struct CchbalFit *fit);

/*
 Releases a fit handle (null is a no-op).

 # Safety
 `fit` must be null or a pointer previously returned by this library, not
 yet freed.
 */
void cchbal_fit_free(struct CchbalFit *fit);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCHBAL_H */
