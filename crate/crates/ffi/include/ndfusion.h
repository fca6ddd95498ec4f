#ifndef NDFUSION_H
#define NDFUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NdfStatus {
  NDF_STATUS_OK = 0,
  NDF_STATUS_NULL_POINTER = 1,
  NDF_STATUS_INVALID_ARGUMENT = 2,
  NDF_STATUS_IO = 3,
  NDF_STATUS_DIVERGED = 4,
  NDF_STATUS_CHECKPOINT = 5,
  NDF_STATUS_INTERNAL = 6,
  NDF_STATUS_PANIC = 7,
} NdfStatus;

typedef enum NdfSplit {
  NDF_SPLIT_TRAIN = 0,
  NDF_SPLIT_VAL = 1,
  NDF_SPLIT_TEST = 2,
} NdfSplit;

typedef enum NdfFusion {
  NDF_FUSION_MLP = 0,
  NDF_FUSION_PAIRWISE = 1,
  NDF_FUSION_WEIGHTED = 2,
} NdfFusion;

/**
 * Simulated or loaded dataset, scaled and ready for a model.
 */
typedef struct NdfDataset NdfDataset;

typedef struct NdfModel NdfModel;

/**
 * Localisation error summary in metres.
 */
typedef struct NdfMetrics {
  double mean;
  double median;
  double cdf90;
  size_t points;
} NdfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length without
 * the terminator. `buf` may be null to query the length.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
size_t ndf_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ndf_version(void);

/**
 * Simulate `duration` seconds of the standard scenario, window it with
 * `step` seconds and split it 80:10:10 at random.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_dataset_simulate(double duration,
                                    double step,
                                    uint64_t seed,
                                    struct NdfDataset **out);

/**
 * Load `train.jsonl`, `val.jsonl` and `test.jsonl` from `dir`.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_dataset_load(const char *dir, struct NdfDataset **out);

/**
 * Number of windows in `split`.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_dataset_window_count(const struct NdfDataset *dataset,
                                        enum NdfSplit split,
                                        size_t *out);

/**
 * Release a dataset.
 *
 * # Safety
 * The handle must be null or a live handle from this library. It is
 * invalid after the call.
 */
void ndf_dataset_free(struct NdfDataset *dataset);

/**
 * Fresh model with default dimensions for 36-dimensional streams.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_model_new(enum NdfFusion fusion, uint64_t seed, struct NdfModel **out);

/**
 * Train on the dataset's train split, selecting on its validation split.
 * `best_val_loss` may be null.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_model_train(struct NdfModel *model,
                               const struct NdfDataset *dataset,
                               size_t epochs,
                               uint64_t seed,
                               double *best_val_loss);

/**
 * Metrics of the model on `split` of the dataset.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_model_evaluate(const struct NdfModel *model,
                                  const struct NdfDataset *dataset,
                                  enum NdfSplit split,
                                  struct NdfMetrics *out);

/**
 * Predicted coordinates of one window as interleaved `x, y` pairs. Writes
 * at most `cap` values and stores the number required in `needed`.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_model_predict(const struct NdfModel *model,
                                 const struct NdfDataset *dataset,
                                 enum NdfSplit split,
                                 size_t index,
                                 double *xy,
                                 size_t cap,
                                 size_t *needed);

/**
 * Write the parameters and architecture to `dir`.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_model_save(const struct NdfModel *model, const char *dir);

/**
 * Load a model written by `ndf_model_save`.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_model_load(const char *dir, struct NdfModel **out);

/**
 * Release a model.
 *
 * # Safety
 * The handle must be null or a live handle from this library. It is
 * invalid after the call.
 */
void ndf_model_free(struct NdfModel *model);

/**
 * Mean, median and 90th percentile of `n` errors.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_metrics(const double *errors, size_t n, struct NdfMetrics *out);

/**
 * `KL(N(μ, diag σ²) ‖ N(0, I))` over `n` dimensions.
 *
 * # Safety
 * Non-null pointers must be valid for the reads and writes described,
 * and handles must be live handles from this library.
 */
enum NdfStatus ndf_kl_gaussian(const double *mu, const double *sigma, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NDFUSION_H */
