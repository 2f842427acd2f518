#ifndef RICA_H
#define RICA_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum RicaStatus {
  RICA_STATUS_OK = 0,
  RICA_STATUS_NULL_ARGUMENT = 1,
  RICA_STATUS_USAGE = 2,
  RICA_STATUS_DATA = 3,
  RICA_STATUS_NUMERICAL = 4,
  RICA_STATUS_PANIC = 5,
  RICA_STATUS_BUFFER_TOO_SMALL = 6,
} RicaStatus;

/**
 * Named arrays and metadata.
 */
typedef struct RicaBundle RicaBundle;

/**
 * Trained model with its configuration.
 */
typedef struct RicaModel RicaModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * Valid until the next call into the library on the same thread.
 */
const char *rica_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *rica_version(void);

/**
 * Creates an empty bundle.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum RicaStatus rica_bundle_new(struct RicaBundle **out);

/**
 * Reads a bundle file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RicaStatus rica_bundle_read(const char *path, struct RicaBundle **out);

/**
 * Writes a bundle file.
 *
 * # Safety
 * `bundle` must come from this library; `path` must be NUL-terminated.
 */
enum RicaStatus rica_bundle_write(const struct RicaBundle *bundle, const char *path);

/**
 * Adds a `rows` x `cols` row-major matrix under `name`.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles.
 */
enum RicaStatus rica_bundle_insert_matrix(struct RicaBundle *bundle,
                                          const char *name,
                                          size_t rows,
                                          size_t cols,
                                          const double *data);

/**
 * Shape of the matrix stored under `name` (1-D arrays report `n` x 1).
 *
 * # Safety
 * `rows` and `cols` must be valid pointers.
 */
enum RicaStatus rica_bundle_matrix_shape(const struct RicaBundle *bundle,
                                         const char *name,
                                         size_t *rows,
                                         size_t *cols);

/**
 * Copies the array stored under `name` into `out` (row-major).
 *
 * # Safety
 * `out` must have room for `capacity` doubles.
 */
enum RicaStatus rica_bundle_array_copy(const struct RicaBundle *bundle,
                                       const char *name,
                                       double *out,
                                       size_t capacity);

/**
 * Releases a bundle. Null is ignored.
 *
 * # Safety
 * `bundle` must come from this library and not be used afterwards.
 */
void rica_bundle_free(struct RicaBundle *bundle);

/**
 * Loads a trained model from a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum RicaStatus rica_model_read(const char *path, struct RicaModel **out);

/**
 * Number of sources, hidden units, and initial-state MLP units.
 *
 * # Safety
 * Output pointers must be valid.
 */
enum RicaStatus rica_model_dims(const struct RicaModel *model,
                                size_t *n_sources,
                                size_t *n_hidden,
                                size_t *n_mlp_hidden);

/**
 * Sources `W x_t` for a `rows` x `n_sources` sequence; `out` receives the
 * same shape.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles and `out` room for `capacity`.
 */
enum RicaStatus rica_model_extract_sources(const struct RicaModel *model,
                                           size_t rows,
                                           size_t cols,
                                           const double *data,
                                           double *out,
                                           size_t capacity);

/**
 * Negative log-likelihood of one sequence in evaluation mode.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles; `nll` must be valid.
 */
enum RicaStatus rica_model_nll(const struct RicaModel *model,
                               size_t rows,
                               size_t cols,
                               const double *data,
                               double *nll);

/**
 * Time-averaged `|d mu_i(t) / d s_j(t-1)|` as an `n_sources` square matrix.
 *
 * # Safety
 * `data` must hold `rows * cols` doubles and `out` room for `capacity`.
 */
enum RicaStatus rica_model_mean_abs_jacobian(const struct RicaModel *model,
                                             size_t rows,
                                             size_t cols,
                                             const double *data,
                                             double *out,
                                             size_t capacity);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void rica_model_free(struct RicaModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RICA_H */
