#ifndef RAGE_H
#define RAGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  RAGE_STATUS_OK = 0,
  RAGE_STATUS_NULL_POINTER = 1,
  RAGE_STATUS_INVALID_ARGUMENT = 2,
  RAGE_STATUS_IO = 3,
  RAGE_STATUS_PARSE = 4,
  RAGE_STATUS_DIVERGENCE = 5,
  RAGE_STATUS_UNDEFINED_METRIC = 6,
  RAGE_STATUS_INTERNAL = 7,
} RageStatus;

/**
 * A loaded or generated graph dataset.
 */
typedef struct RageDataset RageDataset;

/**
 * A trained explainer and predictor pair.
 */
typedef struct RageModel RageModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *rage_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rage_version(void);

/**
 * Reads a JSON-lines dataset.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out_dataset` a valid pointer.
 */
RageStatus rage_dataset_load(const char *path, RageDataset **out_dataset);

/**
 * Generates a planted-clique dataset with one-hot degree features.
 *
 * # Safety
 * `out_dataset` must be a valid pointer.
 */
RageStatus rage_dataset_planted_clique(size_t num_graphs,
                                       size_t num_nodes,
                                       double edge_prob,
                                       size_t clique_size,
                                       size_t feature_dim,
                                       uint64_t seed,
                                       RageDataset **out_dataset);

/**
 * Writes the dataset as JSON lines.
 *
 * # Safety
 * `dataset` must come from this library; `path` must be NUL-terminated.
 */
RageStatus rage_dataset_save(const RageDataset *dataset, const char *path);

/**
 * Number of graphs, or 0 for NULL.
 *
 * # Safety
 * `dataset` must be NULL or come from this library.
 */
size_t rage_dataset_len(const RageDataset *dataset);

/**
 * Edge count of graph `index`.
 *
 * # Safety
 * `dataset` must come from this library and `out_edges` be valid.
 */
RageStatus rage_dataset_num_edges(const RageDataset *dataset, size_t index, size_t *out_edges);

/**
 * # Safety
 * `dataset` must be NULL or come from this library, and is invalid afterwards.
 */
void rage_dataset_free(RageDataset *dataset);

/**
 * Trains on `dataset` with split seed and hyperparameters taken from
 * `config`: `key = value` lines in the command line config format, or
 * NULL for the defaults. `method` selects `rage`, `rage-single` or
 * `rage-keep`.
 *
 * # Safety
 * `dataset` must come from this library, `config` must be NULL or
 * NUL-terminated, `out_model` must be valid.
 */
RageStatus rage_train(const RageDataset *dataset,
                      const char *config,
                      uint64_t seed,
                      RageModel **out_model);

/**
 * Writes `explainer.params` and `predictor.params` into directory `dir`.
 *
 * # Safety
 * `model` must come from this library; `dir` must be NUL-terminated.
 */
RageStatus rage_model_save(const RageModel *model, const char *dir);

/**
 * Reads a model saved by `rage_model_save` or a `rage train` run directory.
 *
 * # Safety
 * `dir` must be NUL-terminated and `out_model` valid.
 */
RageStatus rage_model_load(const char *dir, RageModel **out_model);

/**
 * Edge influences of graph `index`, in canonical edge order. `out_values`
 * must hold `capacity` doubles; `out_len` receives the edge count. When the
 * buffer is too small nothing is written and the call fails with
 * `RAGE_STATUS_INVALID_ARGUMENT`; query the size with
 * `rage_dataset_num_edges`.
 *
 * # Safety
 * Handles must come from this library; `out_values` must point to
 * `capacity` writable doubles (may be NULL when `capacity` is 0).
 */
RageStatus rage_influence(const RageModel *model,
                          const RageDataset *dataset,
                          size_t index,
                          double *out_values,
                          size_t capacity,
                          size_t *out_len);

/**
 * Raw prediction (logit for classification) of graph `index` under its
 * own explanation.
 *
 * # Safety
 * Handles must come from this library and `out_prediction` be valid.
 */
RageStatus rage_predict(const RageModel *model,
                        const RageDataset *dataset,
                        size_t index,
                        double *out_prediction);

/**
 * Test-split metric (AUC for classification, MSE for regression) under
 * the split drawn with `split_seed`.
 *
 * # Safety
 * Handles must come from this library and `out_metric` be valid.
 */
RageStatus rage_test_metric(const RageModel *model,
                            const RageDataset *dataset,
                            uint64_t split_seed,
                            double *out_metric);

/**
 * ROC AUC of `len` scores against 0/1 labels.
 *
 * # Safety
 * `scores` and `labels` must point to `len` doubles; `out_auc` must be valid.
 */
RageStatus rage_auc(const double *scores, const double *labels, size_t len, double *out_auc);

/**
 * # Safety
 * `model` must be NULL or come from this library, and is invalid afterwards.
 */
void rage_model_free(RageModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAGE_H */
