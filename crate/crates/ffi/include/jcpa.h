#ifndef JCPA_H
#define JCPA_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum JcpaStatus {
  JCPA_STATUS_OK = 0,
  JCPA_STATUS_NULL_POINTER = 1,
  JCPA_STATUS_INVALID_ARGUMENT = 2,
  JCPA_STATUS_DIMENSION = 3,
  JCPA_STATUS_IO = 4,
  JCPA_STATUS_PARSE = 5,
  JCPA_STATUS_GUARD = 6,
  JCPA_STATUS_FAILED = 7,
  JCPA_STATUS_PANIC = 8,
} JcpaStatus;

/**
 * A network realization.
 */
typedef struct JcpaInstance JcpaInstance;

/**
 * A trained model loaded from a checkpoint.
 */
typedef struct JcpaModel JcpaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *jcpa_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *jcpa_version(void);

/**
 * Sample a network with `d_pairs` pairs and `m_channels` channels using the
 * default geometry and fading.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum JcpaStatus jcpa_instance_sample(size_t d_pairs,
                                     size_t m_channels,
                                     uint64_t seed,
                                     struct JcpaInstance **out);

/**
 * Build a network from explicit gains laid out `(rx * D + tx) * M + m`.
 *
 * # Safety
 * `gains` must hold `d_pairs * d_pairs * m_channels` values, `weights`
 * `d_pairs` values, and `out` must be writable.
 */
enum JcpaStatus jcpa_instance_from_gains(size_t d_pairs,
                                         size_t m_channels,
                                         const double *gains,
                                         const double *weights,
                                         double noise_power,
                                         double p_max,
                                         struct JcpaInstance **out);

/**
 * Release an instance. NULL is ignored.
 *
 * # Safety
 * `inst` must come from this library and not be used afterwards.
 */
void jcpa_instance_free(struct JcpaInstance *inst);

/**
 * # Safety
 * `inst` must be a live handle; `d_pairs` and `m_channels` may be NULL.
 */
enum JcpaStatus jcpa_instance_dims(const struct JcpaInstance *inst,
                                   size_t *d_pairs,
                                   size_t *m_channels);

/**
 * Power gain from transmitter `tx` to receiver `rx` on channel `m`.
 *
 * # Safety
 * `inst` must be a live handle and `out` writable.
 */
enum JcpaStatus jcpa_instance_gain(const struct JcpaInstance *inst,
                                   size_t rx,
                                   size_t tx,
                                   size_t m,
                                   double *out);

/**
 * Weighted sum rate of a hard allocation.
 *
 * # Safety
 * `assignment` and `power` must each hold `d_pairs` values; `out` writable.
 */
enum JcpaStatus jcpa_objective(const struct JcpaInstance *inst,
                               const size_t *assignment,
                               const double *power,
                               size_t d_pairs,
                               double *out);

/**
 * WMMSE powers for a fixed channel assignment.
 *
 * # Safety
 * `assignment` must hold `d_pairs` values and `power_out` room for `d_pairs`.
 */
enum JcpaStatus jcpa_wmmse_power(const struct JcpaInstance *inst,
                                 const size_t *assignment,
                                 size_t d_pairs,
                                 double *power_out);

/**
 * Best assignment over all M^D candidates with WMMSE powers. Refuses
 * networks with more than 2^20 candidates.
 *
 * # Safety
 * `assignment_out` and `power_out` must have room for `d_pairs` values.
 */
enum JcpaStatus jcpa_exhaustive(const struct JcpaInstance *inst,
                                size_t d_pairs,
                                size_t *assignment_out,
                                double *power_out);

/**
 * Nearest-neighbour channel split with WMMSE powers.
 *
 * # Safety
 * `assignment_out` and `power_out` must have room for `d_pairs` values.
 */
enum JcpaStatus jcpa_closest(const struct JcpaInstance *inst,
                             size_t d_pairs,
                             size_t *assignment_out,
                             double *power_out);

/**
 * Load a model checkpoint (JSON).
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string and `out` writable.
 */
enum JcpaStatus jcpa_model_load(const char *path, struct JcpaModel **out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void jcpa_model_free(struct JcpaModel *model);

/**
 * Number of channels the model was trained for.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum JcpaStatus jcpa_model_channels(const struct JcpaModel *model, size_t *out);

/**
 * Channel assignment and powers predicted by the model.
 *
 * # Safety
 * Handles must be live; `assignment_out` and `power_out` must have room
 * for `d_pairs` values.
 */
enum JcpaStatus jcpa_model_allocate(const struct JcpaModel *model,
                                    const struct JcpaInstance *inst,
                                    size_t d_pairs,
                                    size_t *assignment_out,
                                    double *power_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* JCPA_H */
