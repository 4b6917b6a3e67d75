/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef DRSSL_H
#define DRSSL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call. Codes 1 to 3 match the command-line exit
 * statuses; 10 to 14 are the file-format codes.
 */
typedef enum DrsslStatus {
  DRSSL_STATUS_OK = 0,
  /**
   * Invalid argument or configuration.
   */
  DRSSL_STATUS_USAGE = 1,
  /**
   * Unreadable, malformed or inconsistent data.
   */
  DRSSL_STATUS_DATA = 2,
  /**
   * A loss or parameter became NaN or infinite.
   */
  DRSSL_STATUS_NON_FINITE = 3,
  /**
   * A required pointer argument was null.
   */
  DRSSL_STATUS_NULL_POINTER = 4,
  /**
   * A string argument was not valid UTF-8.
   */
  DRSSL_STATUS_INVALID_UTF8 = 5,
  /**
   * An output buffer has the wrong length.
   */
  DRSSL_STATUS_BUFFER_SIZE = 6,
  /**
   * Internal failure; the library caught a panic.
   */
  DRSSL_STATUS_INTERNAL = 7,
  DRSSL_STATUS_CORRUPT_HEADER = 10,
  DRSSL_STATUS_UNSUPPORTED_VERSION = 11,
  DRSSL_STATUS_DIMENSION_OVERFLOW = 12,
  DRSSL_STATUS_TRUNCATED_PAYLOAD = 13,
  DRSSL_STATUS_INVALID_RECORD = 14,
} DrsslStatus;

/**
 * Resolved run configuration.
 */
typedef struct DrsslConfig DrsslConfig;

/**
 * Windows with their channels, length and class count.
 */
typedef struct DrsslDataset DrsslDataset;

/**
 * Trained parameters plus the input standardization they expect.
 */
typedef struct DrsslModel DrsslModel;

typedef struct DrsslMetrics {
  double accuracy;
  double macro_precision;
  double macro_recall;
  size_t n_samples;
} DrsslMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *drssl_version(void);

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *drssl_last_error(void);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to write the new handle to.
 */
enum DrsslStatus drssl_config_new(struct DrsslConfig **out);

/**
 * Configuration parsed from `key = value` lines over the defaults.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrsslStatus drssl_config_parse(const char *text, struct DrsslConfig **out);

/**
 * Sets one key. Unknown keys and unparsable values fail with
 * `DRSSL_STATUS_USAGE` and leave the configuration unchanged.
 *
 * # Safety
 * `cfg` must come from this library; `key` and `value` must be NUL-terminated.
 */
enum DrsslStatus drssl_config_set(struct DrsslConfig *cfg, const char *key, const char *value);

/**
 * # Safety
 * `cfg` must come from this library or be NULL.
 */
void drssl_config_free(struct DrsslConfig *cfg);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum DrsslStatus drssl_dataset_load(const char *path, struct DrsslDataset **out);

/**
 * # Safety
 * `data` must come from this library and `path` be NUL-terminated.
 */
enum DrsslStatus drssl_dataset_save(const struct DrsslDataset *data, const char *path);

/**
 * Number of windows, or 0 for NULL.
 *
 * # Safety
 * `data` must come from this library or be NULL.
 */
size_t drssl_dataset_len(const struct DrsslDataset *data);

/**
 * Writes channels, window length and class count. Any output may be NULL.
 *
 * # Safety
 * `data` must come from this library; outputs must be valid or NULL.
 */
enum DrsslStatus drssl_dataset_shape(const struct DrsslDataset *data,
                                     size_t *channels,
                                     size_t *window_len,
                                     size_t *n_classes);

/**
 * Copies window `index` into `x` (channel-major, `len` = channels ×
 * window_len) and writes its label, or -1 when it has none.
 *
 * # Safety
 * `x` must point to `len` writable doubles; `label` must be valid or NULL.
 */
enum DrsslStatus drssl_dataset_window(const struct DrsslDataset *data,
                                      size_t index,
                                      double *x,
                                      size_t len,
                                      int32_t *label);

/**
 * # Safety
 * `data` must come from this library or be NULL.
 */
void drssl_dataset_free(struct DrsslDataset *data);

/**
 * Generates the synthetic task of `cfg` and splits it into labeled,
 * unlabeled and test sets, unstandardized. The unlabeled set carries no
 * labels.
 *
 * # Safety
 * `cfg` must come from this library; the three outputs must be valid.
 */
enum DrsslStatus drssl_generate_split(const struct DrsslConfig *cfg,
                                      struct DrsslDataset **labeled,
                                      struct DrsslDataset **unlabeled,
                                      struct DrsslDataset **test);

/**
 * Trains the variant configured in `cfg` on raw `labeled` and `unlabeled`
 * sets. The inputs are standardized with statistics from `labeled`, which
 * the model keeps and reapplies when predicting.
 *
 * # Safety
 * `cfg`, `labeled` and `unlabeled` must come from this library; `out` must
 * be valid.
 */
enum DrsslStatus drssl_train(const struct DrsslConfig *cfg,
                             const struct DrsslDataset *labeled,
                             const struct DrsslDataset *unlabeled,
                             struct DrsslModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` a valid pointer.
 */
enum DrsslStatus drssl_model_load(const char *path, struct DrsslModel **out);

/**
 * # Safety
 * `model` must come from this library and `path` be NUL-terminated.
 */
enum DrsslStatus drssl_model_save(const struct DrsslModel *model, const char *path);

/**
 * Predicted class of every window of raw `data`; `len` must equal its
 * window count.
 *
 * # Safety
 * `model` and `data` must come from this library; `labels` must point to
 * `len` writable values.
 */
enum DrsslStatus drssl_model_predict(const struct DrsslModel *model,
                                     const struct DrsslDataset *data,
                                     uint32_t *labels,
                                     size_t len);

/**
 * Scores the model on raw labeled `data`.
 *
 * # Safety
 * `model` and `data` must come from this library; `out` must be valid.
 */
enum DrsslStatus drssl_model_evaluate(const struct DrsslModel *model,
                                      const struct DrsslDataset *data,
                                      struct DrsslMetrics *out);

/**
 * # Safety
 * `model` must come from this library or be NULL.
 */
void drssl_model_free(struct DrsslModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRSSL_H */
