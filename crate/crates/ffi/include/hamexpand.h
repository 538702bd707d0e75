#ifndef HAMEXPAND_H
#define HAMEXPAND_H

/* Generated by cbindgen from crates/ffi/src; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum hx_status_t {
  HX_OK = 0,
  HX_NULL_POINTER = 1,
  HX_INVALID_ARGUMENT = 2,
  HX_NUMERICAL_FAILURE = 3,
  HX_PANIC = 4,
} hx_status_t;

typedef struct hx_expansion_t hx_expansion_t;

/**
 * A model together with its maturity.
 */
typedef struct hx_model_t hx_model_t;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread ("" after a success).
 * The pointer stays valid until the next call on the same thread.
 */
const char *hx_last_error_message(void);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum hx_status_t hx_model_stein_stein(double a,
                                      double b,
                                      double c,
                                      double sigma0,
                                      double rho,
                                      double t,
                                      struct hx_model_t **out);

/**
 * # Safety
 * `out` must be valid for writes.
 */
enum hx_status_t hx_model_black_scholes(double sigma, double y0, double t, struct hx_model_t **out);

/**
 * Builds a model from the JSON of a config's "model" entry.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for writes.
 */
enum hx_status_t hx_model_from_json(const char *json, struct hx_model_t **out);

/**
 * # Safety
 * `model` must come from an `hx_model_*` constructor (or be null) and is
 * invalid afterwards.
 */
void hx_model_free(struct hx_model_t *model);

/**
 * Small-noise expansion of `model` at the target (length = projection
 * dimension) with default options.
 *
 * # Safety
 * `model` must be a live handle, `target` must point to `target_len`
 * doubles and `out` must be valid for writes.
 */
enum hx_status_t hx_expand(const struct hx_model_t *model,
                           const double *target,
                           size_t target_len,
                           struct hx_expansion_t **out);

/**
 * # Safety
 * `expansion` must come from `hx_expand` (or be null) and is invalid
 * afterwards.
 */
void hx_expansion_free(struct hx_expansion_t *expansion);

/**
 * c₁ (the minimal energy); NaN for a null handle.
 *
 * # Safety
 * `expansion` must be a live handle or null.
 */
double hx_expansion_c1(const struct hx_expansion_t *expansion);

/**
 * c₂; NaN for a null handle.
 *
 * # Safety
 * `expansion` must be a live handle or null.
 */
double hx_expansion_c2(const struct hx_expansion_t *expansion);

/**
 * # Safety
 * `expansion` must be a live handle or null.
 */
size_t hx_expansion_minimizer_count(const struct hx_expansion_t *expansion);

/**
 * Whether every minimizer passed the ellipticity and non-focality checks.
 *
 * # Safety
 * `expansion` must be a live handle or null.
 */
bool hx_expansion_hypotheses_verified(const struct hx_expansion_t *expansion);

/**
 * Full result as JSON; release the string with `hx_string_free`.
 *
 * # Safety
 * `expansion` must be a live handle and `out` valid for writes.
 */
enum hx_status_t hx_expansion_to_json(const struct hx_expansion_t *expansion, char **out);

/**
 * # Safety
 * `s` must come from this library (or be null).
 */
void hx_string_free(char *s);

/**
 * Closed-form Stein–Stein constants.
 *
 * # Safety
 * `c1` and `c2` must be valid for writes.
 */
enum hx_status_t hx_stein_stein_constants(double a,
                                          double b,
                                          double c,
                                          double sigma0,
                                          double rho,
                                          double t,
                                          double *c1,
                                          double *c2);

/**
 * # Safety
 * `c1` and `c2` must be valid for writes.
 */
enum hx_status_t hx_black_scholes_constants(double sigma,
                                            double t,
                                            double y0,
                                            double *c1,
                                            double *c2);

/**
 * Wing coefficients (β₁, β₂) from (B₁, B₂); B₁ ≤ 2 is rejected.
 *
 * # Safety
 * `beta1` and `beta2` must be valid for writes.
 */
enum hx_status_t hx_implied_vol_wing(double b1, double b2, double *beta1, double *beta2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HAMEXPAND_H */
