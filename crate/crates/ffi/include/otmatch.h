#ifndef OTMATCH_H
#define OTMATCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum OtmStatus {
  OTM_STATUS_OK = 0,
  OTM_STATUS_NULL_POINTER = 1,
  OTM_STATUS_INVALID_ARGUMENT = 2,
  OTM_STATUS_CONFIG = 3,
  OTM_STATUS_NUMERICAL = 4,
  OTM_STATUS_INVARIANT_VIOLATION = 5,
  OTM_STATUS_IO = 6,
  OTM_STATUS_PANIC = 7,
} OtmStatus;

// Weighted point cloud.
typedef struct OtmMeasure OtmMeasure;

// A running multi-agent simulation.
typedef struct OtmSimulation OtmSimulation;

// Metrics of one completed cycle.
typedef struct OtmCycleMetrics {
  uint64_t cycle;
  double psi_start;
  double psi_end;
  double w2;
  bool descent_ok;
  bool bound_ok;
} OtmCycleMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *otm_last_error(void);

// Library version as a static NUL-terminated string.
const char *otm_version(void);

// Builds a measure from `n` row-major points of dimension `dim` and their
// weights.
//
// # Safety
// `points` must reference `n * dim` doubles and `weights` `n` doubles.
// `out` must be a valid place to store the handle.
enum OtmStatus otm_measure_new(const double *points,
                               const double *weights,
                               size_t n,
                               size_t dim,
                               struct OtmMeasure **out);

// # Safety
// `m` must come from [`otm_measure_new`] and not be freed twice.
void otm_measure_free(struct OtmMeasure *m);

// Squared 2-Wasserstein distance between two measures.
//
// # Safety
// Handles must be live; `out_cost` must be writable.
enum OtmStatus otm_w2_exact(const struct OtmMeasure *a,
                            const struct OtmMeasure *b,
                            double *out_cost);

// Creates a simulation from scenario text (TOML).
//
// # Safety
// `config` must be a NUL-terminated string; `out` must be writable.
enum OtmStatus otm_simulation_from_config(const char *config, struct OtmSimulation **out);

// Creates a simulation from a built-in preset with the given seed.
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum OtmStatus otm_simulation_from_preset(const char *name,
                                          uint64_t seed,
                                          struct OtmSimulation **out);

// # Safety
// `sim` must come from an `otm_simulation_from_*` call and not be freed twice.
void otm_simulation_free(struct OtmSimulation *sim);

// Runs one cycle. `out` may be null when the metrics are not needed.
//
// # Safety
// `sim` must be live; `out`, when non-null, must be writable.
enum OtmStatus otm_simulation_step(struct OtmSimulation *sim, struct OtmCycleMetrics *out);

// Number of agents, or 0 for a null handle.
//
// # Safety
// `sim` must be live or null.
size_t otm_simulation_agent_count(const struct OtmSimulation *sim);

// Number of completed cycles, or 0 for a null handle.
//
// # Safety
// `sim` must be live or null.
uint64_t otm_simulation_cycle(const struct OtmSimulation *sim);

// Copies agent positions into `buf` as `x0 y0 x1 y1 ...`.
//
// `len` is the capacity of `buf` in doubles and must be at least
// `2 * agent_count`.
//
// # Safety
// `sim` must be live; `buf` must reference `len` writable doubles.
enum OtmStatus otm_simulation_positions(const struct OtmSimulation *sim, double *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OTMATCH_H */
