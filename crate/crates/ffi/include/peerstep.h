#ifndef PEERSTEP_H
#define PEERSTEP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsStatus {
  PS_STATUS_OK = 0,
  PS_STATUS_NULL_POINTER = 1,
  PS_STATUS_INVALID_ARGUMENT = 2,
  PS_STATUS_INVALID_ARM = 3,
  PS_STATUS_UNDEFINED_CORRELATION = 4,
  PS_STATUS_PANIC = 99,
} PsStatus;

/**
 * UCB1 bandit over the three arms with its own seeded generator.
 */
typedef struct PsBandit PsBandit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL;
 * 0 when there is no error.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t ps_last_error_message(char *buf, size_t len);

/**
 * Create a bandit; null if `exploration_c` is negative or not finite.
 */
struct PsBandit *ps_bandit_new(uint64_t seed, double exploration_c);

/**
 * # Safety
 * `bandit` must be null or come from [`ps_bandit_new`] and not be freed yet.
 */
void ps_bandit_free(struct PsBandit *bandit);

/**
 * # Safety
 * `bandit` must be a live handle; `out_arm` valid for one write.
 */
enum PsStatus ps_bandit_select(struct PsBandit *bandit, int8_t *out_arm);

/**
 * Record a reward in [0, 1] for an arm.
 *
 * # Safety
 * `bandit` must be a live handle.
 */
enum PsStatus ps_bandit_update(struct PsBandit *bandit, int8_t arm, double reward);

/**
 * # Safety
 * `bandit` must be a live handle; `out_pulls` valid for one write.
 */
enum PsStatus ps_bandit_pulls(const struct PsBandit *bandit, int8_t arm, uint64_t *out_pulls);

/**
 * Mean reward of an arm; `InvalidArgument` while it has no pulls.
 *
 * # Safety
 * `bandit` must be a live handle; `out_mean` valid for one write.
 */
enum PsStatus ps_bandit_mean(const struct PsBandit *bandit, int8_t arm, double *out_mean);

/**
 * Daily reward. A negative `steps` marks a non-wear day.
 *
 * # Safety
 * `out_reward` must be valid for one write.
 */
enum PsStatus ps_compute_reward(uint8_t pre,
                                uint8_t post,
                                int64_t steps,
                                double baseline_mean,
                                double w_motivation,
                                double w_steps,
                                double *out_reward);

/**
 * The arm's four offsets in ascending order.
 *
 * # Safety
 * `out_offsets` must be valid for four writes.
 */
enum PsStatus ps_offsets_for_arm(int8_t arm, double *out_offsets);

/**
 * One day's four cards: displayed steps and true offsets, in display order.
 *
 * # Safety
 * Both output pointers must be valid for four writes.
 */
enum PsStatus ps_generate_cards(int8_t arm,
                                uint32_t ref_steps,
                                uint64_t seed,
                                uint32_t *out_steps,
                                double *out_offsets);

/**
 * # Safety
 * `xs` and `ys` must be valid for `n` reads; `out_r` for one write.
 */
enum PsStatus ps_pearson(const double *xs, const double *ys, size_t n, double *out_r);

/**
 * Welch's t-test; any of the output pointers may be null.
 *
 * # Safety
 * `xs` valid for `nx` reads, `ys` for `ny`; non-null outputs for one write.
 */
enum PsStatus ps_welch_t(const double *xs,
                         size_t nx,
                         const double *ys,
                         size_t ny,
                         double *out_t,
                         double *out_df,
                         double *out_p);

/**
 * One-way ICC. `values` holds the groups back to back; `group_sizes[i]` is
 * the length of group `i`.
 *
 * # Safety
 * `group_sizes` valid for `n_groups` reads, `values` for their sum.
 */
enum PsStatus ps_icc_oneway(const double *values,
                            const size_t *group_sizes,
                            size_t n_groups,
                            double *out_icc);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEERSTEP_H */
