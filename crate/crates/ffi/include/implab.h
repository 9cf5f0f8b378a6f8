#ifndef IMPLAB_H
#define IMPLAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ImplabStatus {
  IMPLAB_STATUS_OK = 0,
  IMPLAB_STATUS_NULL_POINTER = 1,
  IMPLAB_STATUS_INVALID_INPUT = 2,
  IMPLAB_STATUS_HYPOTHESIS_VIOLATION = 3,
  IMPLAB_STATUS_NUMERICAL_FAILURE = 4,
  IMPLAB_STATUS_PANIC = 5,
} ImplabStatus;

// Opaque engine: Fatou coordinates, Lavaurs maps and the implosion harness.
typedef struct ImplabEngine ImplabEngine;

// Opaque germ family.
typedef struct ImplabFamily ImplabFamily;

typedef struct ImplabComplex {
  double re;
  double im;
} ImplabComplex;

// A point of ℂ² as `(x, y)`.
typedef struct ImplabPoint {
  struct ImplabComplex x;
  struct ImplabComplex y;
} ImplabPoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *implab_last_error_message(void);

// Parses a family from its JSON form and validates the standing hypotheses.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum ImplabStatus implab_family_from_json(const char *json, struct ImplabFamily **out);

// # Safety
// `family` must come from [`implab_family_from_json`] and not be freed twice.
void implab_family_free(struct ImplabFamily *family);

// Evaluates `g_ε(z)`.
//
// # Safety
// `family` must be a live handle and `out` a valid pointer.
enum ImplabStatus implab_family_evaluate(const struct ImplabFamily *family,
                                         struct ImplabComplex eps,
                                         struct ImplabPoint z,
                                         struct ImplabPoint *out);

// Builds the petal geometry and Fatou coordinate engine. `domain_radius`
// bounds orbits; pass a non-positive value for the default.
//
// # Safety
// `family` must be a live handle and `out` a valid pointer.
enum ImplabStatus implab_engine_new(const struct ImplabFamily *family,
                                    double domain_radius,
                                    struct ImplabEngine **out);

// # Safety
// `engine` must come from [`implab_engine_new`] and not be freed twice.
void implab_engine_free(struct ImplabEngine *engine);

// Incoming Fatou coordinate `Φ^ι`, extended to the parabolic basin.
//
// # Safety
// `engine` must be a live handle and `out` a valid pointer.
enum ImplabStatus implab_incoming_fatou(const struct ImplabEngine *engine,
                                        struct ImplabPoint z,
                                        struct ImplabPoint *out);

// Outgoing Fatou coordinate `Φ°` on the outgoing petal.
//
// # Safety
// `engine` must be a live handle and `out` a valid pointer.
enum ImplabStatus implab_outgoing_fatou(const struct ImplabEngine *engine,
                                        struct ImplabPoint z,
                                        struct ImplabPoint *out);

// Extended inverse outgoing coordinate `Ψ°`.
//
// # Safety
// `engine` must be a live handle and `out` a valid pointer.
enum ImplabStatus implab_psi_outgoing(const struct ImplabEngine *engine,
                                      struct ImplabPoint w,
                                      struct ImplabPoint *out);

// Lavaurs map `L_{σ,q}` with the family's own `q`.
//
// # Safety
// `engine` must be a live handle and `out` a valid pointer.
enum ImplabStatus implab_lavaurs_eval(const struct ImplabEngine *engine,
                                      struct ImplabComplex sigma,
                                      struct ImplabPoint z,
                                      struct ImplabPoint *out);

// Sup-norm error `max ‖g^{n+shift}_{ε_n}(z) − L^{1+shift}(z)‖` over `count`
// points. Points where either side fails are skipped; the number of such
// points is written to `failures` when it is non-null.
//
// # Safety
// `points` must reference `count` points; `out_error` must be valid.
enum ImplabStatus implab_convergence_error(const struct ImplabEngine *engine,
                                           struct ImplabComplex sigma,
                                           uint64_t n,
                                           uint64_t shift,
                                           const struct ImplabPoint *points,
                                           uintptr_t count,
                                           double *out_error,
                                           uintptr_t *failures);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IMPLAB_H */
