#ifndef LMDL_H
#define LMDL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LmdlMode {
  LMDL_MODE_LINEAR = 0,
  LMDL_MODE_KERNEL = 1,
} LmdlMode;

typedef enum LmdlKernelKind {
  LMDL_KERNEL_KIND_LINEAR = 0,
  LMDL_KERNEL_KIND_RBF = 1,
} LmdlKernelKind;

/**
 * Result code of every fallible call.
 */
typedef enum LmdlStatus {
  LMDL_STATUS_OK = 0,
  LMDL_STATUS_INVALID_INPUT = 1,
  LMDL_STATUS_TRAINING_ABORTED = 2,
  LMDL_STATUS_GRADCHECK_FAILED = 3,
  LMDL_STATUS_NULL_POINTER = 4,
  LMDL_STATUS_IO = 5,
  LMDL_STATUS_PANIC = 6,
} LmdlStatus;

/**
 * Opaque dataset handle.
 */
typedef struct LmdlDataset LmdlDataset;

/**
 * Opaque model handle.
 */
typedef struct LmdlModel LmdlModel;

/**
 * Training options. Obtain defaults from [`lmdl_train_config_default`].
 */
typedef struct LmdlTrainConfig {
  size_t prototypes_per_class;
  /**
   * 0 selects the input dimension.
   */
  size_t rank;
  double beta;
  double epsilon_converge;
  size_t max_epochs;
  double rho;
  double eps_ada;
  uint64_t seed;
  enum LmdlMode mode;
  /**
   * Kernel mode only.
   */
  enum LmdlKernelKind kernel;
  /**
   * rbf width, used unless `select_sigma` is set.
   */
  double sigma;
  /**
   * Choose sigma from 2^-15 .. 2^3 by internal cross-validation.
   */
  bool select_sigma;
  size_t sigma_folds;
  bool standardize;
  double init_noise;
} LmdlTrainConfig;

typedef struct LmdlTrainSummary {
  double initial_objective;
  double final_objective;
  size_t epochs;
  bool converged;
} LmdlTrainSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library defaults: linear mode, 5 prototypes per class, beta 10.
 */
struct LmdlTrainConfig lmdl_train_config_default(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *lmdl_last_error(void);

/**
 * Loads a CSV file. `label` is a column name or zero-based index.
 */
enum LmdlStatus lmdl_dataset_load_csv(const char *path,
                                      const char *label,
                                      struct LmdlDataset **out);

/**
 * Builds a dataset from `n` points of dimension `dim`, stored point after
 * point in `features`, with labels in `1..=K`.
 */
enum LmdlStatus lmdl_dataset_from_arrays(const double *features,
                                         const size_t *labels,
                                         size_t n,
                                         size_t dim,
                                         struct LmdlDataset **out);

void lmdl_dataset_free(struct LmdlDataset *ds);

/**
 * Number of points; 0 for NULL.
 */
size_t lmdl_dataset_len(const struct LmdlDataset *ds);

/**
 * Feature dimension; 0 for NULL.
 */
size_t lmdl_dataset_dim(const struct LmdlDataset *ds);

size_t lmdl_dataset_class_count(const struct LmdlDataset *ds);

enum LmdlStatus lmdl_train(const struct LmdlDataset *ds,
                           const struct LmdlTrainConfig *config,
                           struct LmdlModel **out);

/**
 * Stratified `folds`-fold cross-validation repeated `repeats` times.
 */
enum LmdlStatus lmdl_cross_validate(const struct LmdlDataset *ds,
                                    const struct LmdlTrainConfig *config,
                                    size_t folds,
                                    size_t repeats,
                                    uint64_t seed,
                                    double *mean_error,
                                    double *std_error);

enum LmdlStatus lmdl_model_save(const struct LmdlModel *model, const char *path);

enum LmdlStatus lmdl_model_load(const char *path, struct LmdlModel **out);

void lmdl_model_free(struct LmdlModel *model);

/**
 * Predicted 1-based class of one point with `len` features.
 */
enum LmdlStatus lmdl_model_predict(const struct LmdlModel *model,
                                   const double *x,
                                   size_t len,
                                   size_t *label);

enum LmdlStatus lmdl_model_summary(const struct LmdlModel *model, struct LmdlTrainSummary *out);

size_t lmdl_model_input_dim(const struct LmdlModel *model);

size_t lmdl_model_rank(const struct LmdlModel *model);

size_t lmdl_model_prototype_count(const struct LmdlModel *model);

size_t lmdl_model_class_count(const struct LmdlModel *model);

/**
 * Gradient check with the default instance shape (d=5, p=3, S=4, beta=10).
 * Returns `GradcheckFailed` when the error exceeds 1e-4.
 */
enum LmdlStatus lmdl_gradcheck(size_t trials, uint64_t seed, double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMDL_H */
