#ifndef MOIL_H
#define MOIL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MoilStatus {
  MOIL_STATUS_OK = 0,
  MOIL_STATUS_NULL_POINTER = 1,
  MOIL_STATUS_INVALID_UTF8 = 2,
  MOIL_STATUS_LOAD = 3,
  MOIL_STATUS_FORMAT = 4,
  MOIL_STATUS_INVALID_INPUT = 5,
  MOIL_STATUS_CONFIG = 6,
  MOIL_STATUS_SHAPE = 7,
  MOIL_STATUS_PERIOD_TOO_SHORT = 8,
  MOIL_STATUS_EMPTY_GROUP = 9,
  MOIL_STATUS_TRAINING = 10,
  MOIL_STATUS_INTEGRITY = 11,
  MOIL_STATUS_MISSING_ARTIFACT = 12,
  MOIL_STATUS_IO = 13,
  MOIL_STATUS_JSON = 14,
  MOIL_STATUS_CSV = 15,
  MOIL_STATUS_PANIC = 16,
} MoilStatus;

/**
 * A downstream classifier trained over a frozen encoder.
 */
typedef struct MoilClassifier MoilClassifier;

/**
 * A set of recording periods.
 */
typedef struct MoilDataset MoilDataset;

/**
 * A pretrained encoder checkpoint.
 */
typedef struct MoilModel MoilModel;

/**
 * Key motifs selected from unlabeled data.
 */
typedef struct MoilMotifSet MoilMotifSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into this library on the same thread.
 */
const char *moil_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *moil_version(void);

/**
 * Loads a sensor CSV (`worker_id,period_id,t,<axes>[,label]`).
 *
 * # Safety
 * `path` must be a nul-terminated string; `out` must be writable.
 */
enum MoilStatus moil_dataset_load_csv(const char *path, struct MoilDataset **out);

/**
 * Generates the default synthetic dataset for `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum MoilStatus moil_dataset_synth(uint64_t seed, struct MoilDataset **out);

/**
 * # Safety
 * `ds` must be a live dataset handle; `count` must be writable.
 */
enum MoilStatus moil_dataset_period_count(const struct MoilDataset *ds, size_t *count);

/**
 * Number of time steps and axes of period `index`.
 *
 * # Safety
 * `ds` must be a live dataset handle; `len` and `axes` must be writable.
 */
enum MoilStatus moil_dataset_period_shape(const struct MoilDataset *ds,
                                          size_t index,
                                          size_t *len,
                                          size_t *axes);

/**
 * Copies the `[len × axes]` values of period `index` into `values`, which
 * holds `capacity` doubles.
 *
 * # Safety
 * `ds` must be a live dataset handle and `values` must hold `capacity` doubles.
 */
enum MoilStatus moil_dataset_period_values(const struct MoilDataset *ds,
                                           size_t index,
                                           double *values,
                                           size_t capacity);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void moil_dataset_free(struct MoilDataset *ds);

/**
 * Equal-width symbols of values already normalized to `[0, 1]`.
 *
 * # Safety
 * `values` and `symbols` must each hold `len * axes` elements.
 */
enum MoilStatus moil_symbolize(const double *values,
                               size_t len,
                               size_t axes,
                               size_t alphabet_size,
                               uint8_t *symbols);

/**
 * Per-axis raw similarity of a motif to every window of a symbolic series:
 * writes `(series_len - motif_len) * axes` values, row `t` holding minus
 * the number of mismatched symbols in the window starting at `t`.
 *
 * # Safety
 * `motif` holds `motif_len * axes` symbols, `series` holds
 * `series_len * axes`, and `out` holds `(series_len - motif_len) * axes`
 * doubles.
 */
enum MoilStatus moil_similarity_raw(const uint8_t *motif,
                                    size_t motif_len,
                                    const uint8_t *series,
                                    size_t series_len,
                                    size_t axes,
                                    size_t alphabet_size,
                                    double *out);

/**
 * Selects key motifs from the dataset's unlabeled periods. `config_toml`
 * is a full run configuration, or null for the desk preset.
 *
 * # Safety
 * `ds` must be a live dataset handle, `config_toml` null or nul-terminated,
 * and `out` writable.
 */
enum MoilStatus moil_motifs_mine(const struct MoilDataset *ds,
                                 const char *config_toml,
                                 uint64_t seed,
                                 struct MoilMotifSet **out);

/**
 * # Safety
 * `path` must be nul-terminated and `out` writable.
 */
enum MoilStatus moil_motifs_load(const char *path, struct MoilMotifSet **out);

/**
 * # Safety
 * `ms` must be a live motif-set handle and `path` nul-terminated.
 */
enum MoilStatus moil_motifs_save(const struct MoilMotifSet *ms, const char *path);

/**
 * # Safety
 * `ms` must be a live motif-set handle; `count` must be writable.
 */
enum MoilStatus moil_motifs_count(const struct MoilMotifSet *ms, size_t *count);

/**
 * Content hash of the motif set as lowercase hex, owned by the handle.
 * Null if `ms` is null.
 *
 * # Safety
 * `ms` must be null or a live motif-set handle.
 */
const char *moil_motifs_hash(const struct MoilMotifSet *ms);

/**
 * # Safety
 * `ms` must be null or a handle not yet freed.
 */
void moil_motifs_free(struct MoilMotifSet *ms);

/**
 * Loads a pretraining checkpoint, verifying its encoder hash.
 *
 * # Safety
 * `path` must be nul-terminated and `out` writable.
 */
enum MoilStatus moil_model_load(const char *path, struct MoilModel **out);

/**
 * Input axis count and per-step feature width of the encoder.
 *
 * # Safety
 * `model` must be a live model handle; `axes` and `dim` must be writable.
 */
enum MoilStatus moil_model_dims(const struct MoilModel *model, size_t *axes, size_t *dim);

/**
 * Encodes one `[len × axes]` window of normalized values into
 * `[len × dim]` features.
 *
 * # Safety
 * `model` must be a live model handle, `values` must hold `len * axes`
 * doubles and `features` `len * dim`.
 */
enum MoilStatus moil_model_encode(const struct MoilModel *model,
                                  const double *values,
                                  size_t len,
                                  size_t axes,
                                  double *features);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void moil_model_free(struct MoilModel *model);

/**
 * # Safety
 * `path` must be nul-terminated and `out` writable.
 */
enum MoilStatus moil_classifier_load(const char *path, struct MoilClassifier **out);

/**
 * # Safety
 * `cls` must be a live classifier handle; `classes` must be writable.
 */
enum MoilStatus moil_classifier_classes(const struct MoilClassifier *cls, size_t *classes);

/**
 * Per-step class labels for a normalized `[len × axes]` recording. Fails
 * with `Integrity` unless the classifier was trained on this encoder.
 *
 * # Safety
 * Handles must be live, `values` must hold `len * axes` doubles and
 * `labels` `len` integers.
 */
enum MoilStatus moil_classifier_predict(const struct MoilClassifier *cls,
                                        const struct MoilModel *model,
                                        const double *values,
                                        size_t len,
                                        size_t axes,
                                        uint32_t *labels);

/**
 * # Safety
 * `cls` must be null or a handle not yet freed.
 */
void moil_classifier_free(struct MoilClassifier *cls);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOIL_H */
