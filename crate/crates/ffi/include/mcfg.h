#ifndef MCFG_H
#define MCFG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum McfgStatus {
  MCFG_STATUS_OK = 0,
  MCFG_STATUS_NULL_POINTER = 1,
  MCFG_STATUS_INVALID_ARGUMENT = 2,
  MCFG_STATUS_DIMENSION_MISMATCH = 3,
  MCFG_STATUS_OUT_OF_RANGE = 4,
  MCFG_STATUS_IO = 5,
  MCFG_STATUS_PARSE = 6,
  MCFG_STATUS_VALIDATION = 7,
  MCFG_STATUS_RUN = 8,
  MCFG_STATUS_PANIC = 9,
} McfgStatus;

// Embedding index group targeted by a perturbation.
typedef enum McfgGroup {
  MCFG_GROUP_CONTENT = 0,
  MCFG_GROUP_MOTION = 1,
  MCFG_GROUP_COUNT = 2,
} McfgGroup;

typedef struct McfgSchedule McfgSchedule;

typedef struct McfgSweep McfgSweep;

typedef struct McfgWorld McfgWorld;

typedef struct McfgMetrics {
  double flow;
  double structural_var;
  double align_err;
  size_t count_pred;
  size_t count_true;
} McfgMetrics;

typedef struct McfgSweepRow {
  size_t policy_index;
  size_t grid_index;
  double omega;
  double omega_std;
  double tau;
  double sigma_c;
  uint64_t seed;
  struct McfgMetrics metrics;
} McfgSweepRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null after a
// successful one. Valid until the next `mcfg_*` call on the same thread.
const char *mcfg_last_error(void);

// Static, nul-terminated version string.
const char *mcfg_version(void);

// Linear beta schedule with `steps` steps.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum McfgStatus mcfg_schedule_new(size_t steps,
                                  double beta_start,
                                  double beta_end,
                                  struct McfgSchedule **out);

// # Safety
// `schedule` must be null or a handle from [`mcfg_schedule_new`] not yet freed.
void mcfg_schedule_free(struct McfgSchedule *schedule);

// Number of steps, or 0 for a null handle.
//
// # Safety
// `schedule` must be null or a live handle.
size_t mcfg_schedule_steps(const struct McfgSchedule *schedule);

// Cumulative product of `1 - beta` up to `t`, with `t` in `[0, T]`.
//
// # Safety
// `schedule` must be a live handle and `out` writable.
enum McfgStatus mcfg_schedule_alpha_bar(const struct McfgSchedule *schedule, size_t t, double *out);

// World with the default layout: 3 slots, 8 frames, 10 prototypes.
//
// # Safety
// `out` must be writable.
enum McfgStatus mcfg_world_new_default(struct McfgWorld **out);

// World with `slots` objects over `frames` frames, clean-data spread
// `sigma_data` and the default prototype counts drawn from `prototype_seed`.
//
// # Safety
// `out` must be writable.
enum McfgStatus mcfg_world_new(size_t slots,
                               size_t frames,
                               double sigma_data,
                               uint64_t prototype_seed,
                               struct McfgWorld **out);

// # Safety
// `world` must be null or a handle from a `mcfg_world_new*` call not yet freed.
void mcfg_world_free(struct McfgWorld *world);

// Latent length `frames * slots * 3`, or 0 for a null handle.
//
// # Safety
// `world` must be null or a live handle.
size_t mcfg_world_latent_dim(const struct McfgWorld *world);

// Embedding length `5 * slots`, or 0 for a null handle.
//
// # Safety
// `world` must be null or a live handle.
size_t mcfg_world_embedding_dim(const struct McfgWorld *world);

// Conditional noise prediction at step `t` in `[1, T]`.
//
// # Safety
// Handles must be live; `z` has `z_len` readable values, `c` has `c_len`,
// and `out` has `out_len` writable values.
enum McfgStatus mcfg_world_eps_conditional(const struct McfgWorld *world,
                                           const struct McfgSchedule *schedule,
                                           const double *z,
                                           size_t z_len,
                                           size_t t,
                                           const double *c,
                                           size_t c_len,
                                           double *out,
                                           size_t out_len);

// Exact mixture (unconditional) noise prediction at step `t`.
//
// # Safety
// As for [`mcfg_world_eps_conditional`].
enum McfgStatus mcfg_world_eps_unconditional(const struct McfgWorld *world,
                                             const struct McfgSchedule *schedule,
                                             const double *z,
                                             size_t z_len,
                                             size_t t,
                                             double *out,
                                             size_t out_len);

// Adds `sigma_c`-scaled Gaussian noise, drawn deterministically from
// `(seed, nonce)`, to the coordinates of `c` in `group` (an [`McfgGroup`]
// value). Other coordinates are copied.
//
// # Safety
// `world` must be live; `c` and `out` hold `len` values each.
enum McfgStatus mcfg_perturb(const struct McfgWorld *world,
                             const double *c,
                             size_t len,
                             uint32_t group,
                             double sigma_c,
                             uint64_t seed,
                             uint64_t nonce,
                             double *out,
                             size_t out_len);

// Toy metrics of a clean latent against its condition.
//
// # Safety
// `world` must be live, arrays readable for their lengths, `out` writable.
enum McfgStatus mcfg_evaluate(const struct McfgWorld *world,
                              const double *z,
                              size_t z_len,
                              const double *c,
                              size_t c_len,
                              double threshold,
                              struct McfgMetrics *out);

// `eps_null + omega_std * (eps_cond - eps_null)`.
//
// # Safety
// Inputs hold `len` values; `out` holds `out_len == len`.
enum McfgStatus mcfg_cfg_combine(const double *eps_null,
                                 const double *eps_cond,
                                 size_t len,
                                 double omega_std,
                                 double *out,
                                 size_t out_len);

// `eps_pert + omega * (eps_cond - eps_pert)`.
//
// # Safety
// As for [`mcfg_cfg_combine`].
enum McfgStatus mcfg_motioncfg_combine(const double *eps_pert,
                                       const double *eps_cond,
                                       size_t len,
                                       double omega,
                                       double *out,
                                       size_t out_len);

// `eps_cond + omega * (eps_cond - eps_pert)`.
//
// # Safety
// As for [`mcfg_cfg_combine`].
enum McfgStatus mcfg_motioncfg_anchored(const double *eps_cond,
                                        const double *eps_pert,
                                        size_t len,
                                        double omega,
                                        double *out,
                                        size_t out_len);

// Clean estimate from `z_t` and a noise prediction.
//
// # Safety
// `schedule` live; `z`, `eps`, `out` hold `len` values.
enum McfgStatus mcfg_tweedie(const struct McfgSchedule *schedule,
                             const double *z,
                             const double *eps,
                             size_t len,
                             size_t t,
                             double *out,
                             size_t out_len);

// Noise prediction that maps `z_t` to the clean estimate `z_updated`.
//
// # Safety
// As for [`mcfg_tweedie`].
enum McfgStatus mcfg_effective_noise(const struct McfgSchedule *schedule,
                                     const double *z,
                                     const double *z_updated,
                                     size_t len,
                                     size_t t,
                                     double *out,
                                     size_t out_len);

// Guidance scale equivalent to a clean-space step of size `gamma` at `t`.
//
// # Safety
// `schedule` live; `out` writable.
enum McfgStatus mcfg_omega_from_gamma(const struct McfgSchedule *schedule,
                                      double gamma,
                                      size_t t,
                                      double *out);

// Runs the sweep described by a JSON manifest. `jobs == 0` uses the
// global thread pool.
//
// # Safety
// `manifest_json` is a nul-terminated UTF-8 string; `out` is writable.
enum McfgStatus mcfg_sweep_run_json(const char *manifest_json, size_t jobs, struct McfgSweep **out);

// # Safety
// `sweep` must be null or a handle from [`mcfg_sweep_run_json`] not yet freed.
void mcfg_sweep_free(struct McfgSweep *sweep);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `sweep` must be null or a live handle.
size_t mcfg_sweep_row_count(const struct McfgSweep *sweep);

// Copies row `index` into `out`.
//
// # Safety
// `sweep` live; `out` writable.
enum McfgStatus mcfg_sweep_row(const struct McfgSweep *sweep,
                               size_t index,
                               struct McfgSweepRow *out);

// Policy id of row `index`, or null when out of range. Owned by the
// handle and valid until [`mcfg_sweep_free`].
//
// # Safety
// `sweep` must be null or a live handle.
const char *mcfg_sweep_policy(const struct McfgSweep *sweep, size_t index);

// Writes the per-run CSV to `path`.
//
// # Safety
// `sweep` live; `path` a nul-terminated UTF-8 string.
enum McfgStatus mcfg_sweep_write_csv(const struct McfgSweep *sweep, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MCFG_H */
