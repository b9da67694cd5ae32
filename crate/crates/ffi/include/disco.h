#ifndef DISCO_H
#define DISCO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum DiscoStatus {
  DISCO_STATUS_OK = 0,
  DISCO_STATUS_NULL_POINTER = 1,
  DISCO_STATUS_INVALID_ARGUMENT = 2,
  DISCO_STATUS_IO = 3,
  DISCO_STATUS_PARSE = 4,
  DISCO_STATUS_DIVERGED = 5,
  DISCO_STATUS_NUMERICAL = 6,
  DISCO_STATUS_BUFFER_TOO_SMALL = 7,
  DISCO_STATUS_INTERNAL = 8,
} DiscoStatus;

typedef enum DiscoLoss {
  DISCO_LOSS_QUADRATIC = 0,
  DISCO_LOSS_SQUARED_HINGE = 1,
  DISCO_LOSS_LOGISTIC = 2,
} DiscoLoss;

typedef enum DiscoMode {
  // Data split by samples.
  DISCO_MODE_SAMPLES = 0,
  // Data split by features.
  DISCO_MODE_FEATURES = 1,
} DiscoMode;

typedef struct DiscoDataset DiscoDataset;

typedef struct DiscoResult DiscoResult;

// Solver settings. Obtain defaults from [`disco_options_default`].
typedef struct DiscoOptions {
  enum DiscoLoss loss;
  enum DiscoMode mode;
  double lambda;
  double mu;
  size_t tau;
  size_t nodes;
  // Relative inner tolerance; used when `eps_abs` is not positive.
  double eps_beta;
  // Fixed inner tolerance when positive.
  double eps_abs;
  double hessian_fraction;
  size_t max_outer;
  // Zero selects the default cap of `2d + 10`.
  size_t max_inner;
  double grad_tol;
  uint64_t seed;
  // Interleave nodes on the calling thread instead of one thread each.
  bool single_thread;
} DiscoOptions;

typedef struct DiscoSummary {
  bool converged;
  size_t outer_iters;
  size_t inner_iters;
  double f_value;
  double grad_norm;
  uint64_t rounds;
  uint64_t grouped_rounds;
  uint64_t scalars;
  uint64_t vector_elements;
} DiscoSummary;

typedef struct DiscoTraceRecord {
  size_t k;
  size_t t_total_inner;
  double f_value;
  double grad_norm;
  uint64_t rounds_cum;
  uint64_t scalars_cum;
  uint64_t vec_elements_cum;
  double wall_seconds;
  uint64_t grouped_rounds_cum;
} DiscoTraceRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *disco_last_error(void);

// Loads a libsvm file (gzip-compressed when the name ends in `.gz`).
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum DiscoStatus disco_dataset_load(const char *path, struct DiscoDataset **out);

// Builds a dataset from compressed-sparse-column arrays, one column per
// sample: `col_ptr` has `n + 1` entries, `row_idx` and `values` have
// `col_ptr[n]`, and `labels` has `n`.
//
// # Safety
// All pointers must reference arrays of the stated lengths.
enum DiscoStatus disco_dataset_from_csc(size_t d,
                                        size_t n,
                                        const size_t *col_ptr,
                                        const size_t *row_idx,
                                        const double *values,
                                        const double *labels,
                                        struct DiscoDataset **out);

// # Safety
// `ds` must come from a `disco_dataset_*` constructor or be null.
void disco_dataset_free(struct DiscoDataset *ds);

// # Safety
// `ds` must be a live dataset handle; `n` and `d` valid pointers.
enum DiscoStatus disco_dataset_dims(const struct DiscoDataset *ds, size_t *n, size_t *d);

struct DiscoOptions disco_options_default(void);

// Solves the problem; on success `*out` receives a result handle.
//
// # Safety
// `ds` must be a live dataset handle, `opts` and `out` valid pointers.
enum DiscoStatus disco_solve(const struct DiscoDataset *ds,
                             const struct DiscoOptions *opts,
                             struct DiscoResult **out);

// # Safety
// `res` must come from [`disco_solve`] or be null.
void disco_result_free(struct DiscoResult *res);

// Copies the final weights into `buf`. `*len` holds the capacity on entry
// and the number of weights on return; with a null `buf` only the length is
// reported.
//
// # Safety
// `res` must be a live result handle; `buf` must hold `*len` doubles.
enum DiscoStatus disco_result_weights(const struct DiscoResult *res, double *buf, size_t *len);

// # Safety
// `res` must be a live result handle and `out` a valid pointer.
enum DiscoStatus disco_result_summary(const struct DiscoResult *res, struct DiscoSummary *out);

// Number of trace rows (outer iterations plus the initial point). Zero for
// a null handle.
//
// # Safety
// `res` must be a live result handle or null.
size_t disco_result_trace_len(const struct DiscoResult *res);

// # Safety
// `res` must be a live result handle and `out` a valid pointer.
enum DiscoStatus disco_result_trace_record(const struct DiscoResult *res,
                                           size_t index,
                                           struct DiscoTraceRecord *out);

// Speed-up bound for serial fraction `s` on `m` nodes.
//
// # Safety
// `out` must be a valid pointer.
enum DiscoStatus disco_amdahl_speedup(double s, size_t m, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISCO_H */
