#ifndef MG1NN_H
#define MG1NN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum Mg1Status {
  MG1_STATUS_OK = 0,
  MG1_STATUS_NULL_POINTER = 1,
  MG1_STATUS_INVALID_ARGUMENT = 2,
  // The (alpha, S) pair is not a valid phase-type representation.
  MG1_STATUS_INVALID_PHASE_TYPE = 3,
  MG1_STATUS_UNSTABLE = 4,
  MG1_STATUS_NO_CONVERGENCE = 5,
  MG1_STATUS_TAIL_TOO_HEAVY = 6,
  MG1_STATUS_IO = 7,
  MG1_STATUS_PARSE = 8,
  MG1_STATUS_BUFFER_TOO_SMALL = 9,
  MG1_STATUS_PANIC = 10,
  MG1_STATUS_OTHER = 11,
} Mg1Status;

// Trained network handle.
typedef struct Mg1Model Mg1Model;

// Phase-type distribution handle.
typedef struct Mg1PhaseType Mg1PhaseType;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *mg1_last_error_message(void);

// Library version as a static nul-terminated string.
const char *mg1_version(void);

// Builds a phase-type distribution from `m` initial probabilities and an
// `m x m` row-major sub-generator.
//
// # Safety
// `alpha` must point to `m` doubles, `s` to `m * m` doubles, and `out` to
// writable storage for one handle.
enum Mg1Status mg1_ph_new(size_t m,
                          const double *alpha,
                          const double *s,
                          struct Mg1PhaseType **out);

// Parses a JSON record `{"m":..,"alpha":[..],"S":[[..]]}`.
//
// # Safety
// `json` must be a nul-terminated string and `out` writable.
enum Mg1Status mg1_ph_from_json(const char *json, struct Mg1PhaseType **out);

// Releases a handle; null is ignored.
//
// # Safety
// `ph` must come from this library and not be used afterwards.
void mg1_ph_free(struct Mg1PhaseType *ph);

// Number of phases, or 0 for a null handle.
//
// # Safety
// `ph` must be null or a live handle.
size_t mg1_ph_phases(const struct Mg1PhaseType *ph);

// Writes the raw moments `E[X^1] .. E[X^k_max]` into `out`.
//
// # Safety
// `ph` must be a live handle and `out` must hold `k_max` doubles.
enum Mg1Status mg1_ph_moments(const struct Mg1PhaseType *ph, size_t k_max, double *out);

// Returns a new handle scaled to unit mean.
//
// # Safety
// `ph` must be a live handle and `out` writable.
enum Mg1Status mg1_ph_scale_to_unit_mean(const struct Mg1PhaseType *ph, struct Mg1PhaseType **out);

// Exact M/PH/1 queue-length probabilities `P(N=0) .. P(N=levels-1)`.
// `tail_mass` (optional) receives the probability of `N >= levels`. When
// `epsilon` is positive, a tail above it fails with `TailTooHeavy`.
//
// # Safety
// `ph` must be a live handle, `probs` must hold `levels` doubles, and
// `tail_mass` must be null or writable.
enum Mg1Status mg1_solve(double lambda,
                         const struct Mg1PhaseType *ph,
                         size_t levels,
                         double epsilon,
                         double *probs,
                         double *tail_mass);

// Loads a model file written by `mg1nn train`.
//
// # Safety
// `path` must be a nul-terminated string and `out` writable.
enum Mg1Status mg1_model_load(const char *path, struct Mg1Model **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void mg1_model_free(struct Mg1Model *model);

// Number of moments the model consumes, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mg1_model_n_moments(const struct Mg1Model *model);

// Length of the predicted probability vector, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live handle.
size_t mg1_model_levels(const struct Mg1Model *model);

// Predicts the queue-length distribution from the arrival rate and the raw
// service moments `m1 .. mn` (any time scale; `n` must equal
// `mg1_model_n_moments`). Writes `mg1_model_levels` values to `out`.
//
// # Safety
// `model` must be a live handle, `moments` must hold `n` doubles and `out`
// must hold `out_len` doubles.
enum Mg1Status mg1_model_predict(const struct Mg1Model *model,
                                 double lambda,
                                 const double *moments,
                                 size_t n,
                                 double *out,
                                 size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MG1NN_H */
