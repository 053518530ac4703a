#ifndef BRIDGEKIT_H
#define BRIDGEKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BkStatus {
  BK_STATUS_OK = 0,
  BK_STATUS_NULL_POINTER = 1,
  BK_STATUS_INVALID_UTF8 = 2,
  BK_STATUS_PARSE = 3,
  BK_STATUS_INVALID_INPUT = 4,
  BK_STATUS_SIZE_GUARD = 5,
  BK_STATUS_NOT_PROBABILITY = 6,
  BK_STATUS_NOT_ABSOLUTELY_CONTINUOUS = 7,
  BK_STATUS_INFEASIBLE = 8,
  BK_STATUS_PRECONDITION_FAILED = 9,
  BK_STATUS_INTERNAL = 10,
  BK_STATUS_PANIC = 11,
} BkStatus;

// A path measure, stored in Markov or dense form.
typedef struct BkMeasure BkMeasure;

typedef struct BkProblem BkProblem;

typedef struct BkSolution BkSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Parses a measure document (`{"states", "times", "markov" | "dense"}`).
// `json` must be a NUL-terminated string; `out` must be writable.
enum BkStatus bk_measure_from_json(const char *json, struct BkMeasure **out);

// `m` must come from `bk_measure_from_json` and not be freed twice.
void bk_measure_free(struct BkMeasure *m);

// `m` must be a live handle; `out` must be writable.
enum BkStatus bk_measure_total_mass(const struct BkMeasure *m, double *out);

// Serializes the measure in dense form. Free the result with `bk_string_free`.
// `m` must be a live handle; `out` must be writable.
enum BkStatus bk_measure_to_dense_json(const struct BkMeasure *m, char **out);

// `m` must be a live handle; `out` must be writable.
enum BkStatus bk_is_markov(const struct BkMeasure *m, double tol, bool *out);

// `m` must be a live handle; `out` must be writable.
enum BkStatus bk_is_reciprocal(const struct BkMeasure *m, double tol, bool *out);

// H(p | r) for a probability `p` charging only paths charged by `r`.
// `p` and `r` must be live handles; `out` must be writable.
enum BkStatus bk_relative_entropy(const struct BkMeasure *p,
                                  const struct BkMeasure *r,
                                  double *out);

// Parses a problem document (`{"states", "times", "reference", "constraints", "endpoint"?}`).
// `json` must be a NUL-terminated string; `out` must be writable.
enum BkStatus bk_problem_from_json(const char *json, struct BkProblem **out);

// `p` must come from `bk_problem_from_json` and not be freed twice.
void bk_problem_free(struct BkProblem *p);

// Solves the problem by iterative fitting. A run that hits `max_iter`
// still returns `Ok` with a solution whose `converged` flag is false.
// Pass `tol <= 0` or `max_iter == 0` for the defaults.
// `p` must be a live handle; `out` must be writable.
enum BkStatus bk_solve(const struct BkProblem *p,
                       double tol,
                       uintptr_t max_iter,
                       struct BkSolution **out);

// `s` must be a live handle; `out` must be writable.
enum BkStatus bk_solution_objective(const struct BkSolution *s, double *out);

// `s` must be a live handle; `out` must be writable.
enum BkStatus bk_solution_residual(const struct BkSolution *s, double *out);

// `s` must be a live handle; `out` must be writable.
enum BkStatus bk_solution_iterations(const struct BkSolution *s, uintptr_t *out);

// `s` must be a live handle; `out` must be writable.
enum BkStatus bk_solution_converged(const struct BkSolution *s, bool *out);

// Same document as the CLI `solve` report. Free the result with `bk_string_free`.
// `s` must be a live handle; `out` must be writable.
enum BkStatus bk_solution_to_json(const struct BkSolution *s, char **out);

// `s` must come from `bk_solve` and not be freed twice.
void bk_solution_free(struct BkSolution *s);

// `s` must come from this library and not be freed twice.
void bk_string_free(char *s);

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *bk_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BRIDGEKIT_H */
