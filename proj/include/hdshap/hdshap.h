/* C interface to the hdshap library.
 *
 * Objects are opaque handles released with the matching *_free function.
 * Every call that can fail returns an hds_status; on failure the message is
 * available from hds_last_error_message() on the same thread. Strings handed
 * out through char** parameters are owned by the caller and released with
 * hds_string_free(). Structured inputs and outputs are JSON text.
 */
#ifndef HDSHAP_H
#define HDSHAP_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define HDS_API __declspec(dllexport)
#else
#define HDS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  HDS_OK = 0,
  HDS_ERR_INVALID_ARGUMENT = 1,
  HDS_ERR_INVALID_SPEC = 2,
  HDS_ERR_IO = 3,
  HDS_ERR_PARSE = 4,
  HDS_ERR_SCHEMA_MISMATCH = 5,
  HDS_ERR_NUMERICAL = 6,
  HDS_ERR_MISSING_ARTIFACT = 7,
  HDS_ERR_INTERNAL = 8
} hds_status;

typedef struct hds_dataset hds_dataset;
typedef struct hds_model hds_model;
typedef struct hds_tensor hds_tensor;
typedef struct hds_labeling hds_labeling;

HDS_API const char* hds_version(void);
/* Message of the last failed call on this thread, "" if none. */
HDS_API const char* hds_last_error_message(void);
HDS_API void hds_string_free(char* s);
/* 64-bit FNV-1a of a byte range. */
HDS_API uint64_t hds_hash_bytes(const void* data, size_t len);

/* ---- datasets ---------------------------------------------------------- */

/* spec: {"n_samples", "n_features", "domain_half_width", "seed",
 *        "noise_coefficients": [[...], [...]]}; missing keys take defaults. */
HDS_API hds_status hds_dataset_simulate(const char* spec_json, hds_dataset** out);
HDS_API hds_status hds_dataset_load_csv(const char* path, const char* target_column, hds_dataset** out,
                                        size_t* dropped_rows);
HDS_API hds_status hds_dataset_load_idx(const char* images_path, const char* labels_path, hds_dataset** out);
/* Dataset artifact written by hds_dataset_save. */
HDS_API hds_status hds_dataset_load(const char* manifest_path, hds_dataset** out);
HDS_API hds_status hds_dataset_save(const hds_dataset* ds, const char* csv_path, const char* manifest_path);
HDS_API hds_status hds_dataset_split(const hds_dataset* ds, double train_fraction, int stratified, uint64_t seed,
                                     hds_dataset** train, hds_dataset** test);
/* Keeps the listed classes, re-encoded in the given order. */
HDS_API hds_status hds_dataset_filter_classes(const hds_dataset* ds, const int* classes, size_t n_classes,
                                              hds_dataset** out);
/* First `n_rows` rows (all rows when fewer). */
HDS_API hds_status hds_dataset_head(const hds_dataset* ds, size_t n_rows, hds_dataset** out);
/* Min-max scaling fitted on `reference`, applied to `ds`. */
HDS_API hds_status hds_dataset_scale(const hds_dataset* reference, const hds_dataset* ds, hds_dataset** out);
/* {"n_samples", "n_features", "n_classes", "feature_names", "class_names",
 *  "class_counts", "has_groups", "scaled"} */
HDS_API hds_status hds_dataset_info(const hds_dataset* ds, char** info_json);
/* Row-major copy of the feature matrix; `len` must be n_samples * n_features. */
HDS_API hds_status hds_dataset_features(const hds_dataset* ds, double* out, size_t len);
HDS_API hds_status hds_dataset_labels(const hds_dataset* ds, int* out, size_t len);
HDS_API hds_status hds_dataset_groups(const hds_dataset* ds, int* out, size_t len);
HDS_API void hds_dataset_free(hds_dataset* ds);

/* ---- models ------------------------------------------------------------ */

/* kind: "tree" | "boosted" | "mlp". params_json may be NULL for defaults.
 * info_json (optional): {"kind", "params", "loss_history"}. */
HDS_API hds_status hds_model_train(const hds_dataset* train, const char* kind, const char* params_json,
                                   hds_model** out, char** info_json);
/* spec: {"base": params, "axes": {name: [values...]}, "n_folds", "stratified",
 *        "seed"}; "axes" defaults to the built-in grid of the kind.
 * result: {"best": params, "best_index", "table": [{"params", "mean_accuracy",
 *          "fold_accuracy"}]} */
HDS_API hds_status hds_grid_search(const hds_dataset* train, const char* kind, const char* spec_json,
                                   char** result_json);
HDS_API hds_status hds_model_save(const hds_model* model, const char* path);
HDS_API hds_status hds_model_load(const char* path, hds_model** out);
/* {"kind", "n_features", "n_classes", "id"} */
HDS_API hds_status hds_model_info(const hds_model* model, char** info_json);
/* {"accuracy", "total", "precision", "recall", "support", "confusion", ...} */
HDS_API hds_status hds_model_evaluate(const hds_model* model, const hds_dataset* ds, char** report_json);
/* Row-major n_samples x n_classes margins. */
HDS_API hds_status hds_model_margins(const hds_model* model, const hds_dataset* ds, double* out, size_t len);
HDS_API void hds_model_free(hds_model* model);

/* ---- SHAP tensors ------------------------------------------------------ */

/* Path-dependent TreeSHAP; tree and boosted models only. */
HDS_API hds_status hds_explain_tree(const hds_model* model, const hds_dataset* ds, hds_tensor** out);
/* Kernel SHAP. The background is drawn from `reference` (normally the
 * training set); the base value is the mean margin over all of `reference`.
 * options: {"background_size": 100, "n_coalitions": 0, "seed": 0,
 *           "threads": 1}. report_json (optional): {"coalitions", "exact",
 *           "rank_deficient", "max_additivity_error"}. */
HDS_API hds_status hds_explain_kernel(const hds_model* model, const hds_dataset* ds,
                                      const hds_dataset* reference, const char* options_json,
                                      hds_tensor** out, char** report_json);
HDS_API hds_status hds_tensor_save(const hds_tensor* t, const char* manifest_path, const char* csv_path);
HDS_API hds_status hds_tensor_load(const char* manifest_path, hds_tensor** out);
/* {"n_samples", "n_features", "n_classes", "base", "feature_names",
 *  "class_names", "model_id", "background_id", "method"} */
HDS_API hds_status hds_tensor_info(const hds_tensor* t, char** info_json);
/* Element (i, j, c) at (i * p + j) * k + c. */
HDS_API hds_status hds_tensor_values(const hds_tensor* t, double* out, size_t len);
/* p x k mean |phi|, row-major. */
HDS_API hds_status hds_tensor_mean_abs(const hds_tensor* t, double* out, size_t len);
/* max |sum_j phi - (margin - base)| over samples and classes of `ds`. */
HDS_API hds_status hds_tensor_additivity_error(const hds_tensor* t, const hds_model* model,
                                               const hds_dataset* ds, double* out);
HDS_API void hds_tensor_free(hds_tensor* t);

/* ---- subgroups --------------------------------------------------------- */

/* HDBSCAN on the flattened tensor. params: {"min_cluster_size": 15,
 * "min_samples": 0}. */
HDS_API hds_status hds_cluster(const hds_tensor* t, const char* params_json, hds_labeling** out);
HDS_API hds_status hds_labeling_save(const hds_labeling* l, const char* csv_path);
HDS_API hds_status hds_labeling_load(const char* csv_path, hds_labeling** out);
/* {"n_samples", "n_clusters", "noise", "sizes", "stability"} */
HDS_API hds_status hds_labeling_info(const hds_labeling* l, char** info_json);
HDS_API hds_status hds_labeling_labels(const hds_labeling* l, int* out, size_t len);
HDS_API void hds_labeling_free(hds_labeling* l);
/* Purity against the dataset's ground-truth groups. Fails with
 * HDS_ERR_INVALID_ARGUMENT when the dataset has none. */
HDS_API hds_status hds_purity(const hds_labeling* l, const hds_dataset* ds, char** report_json);
/* PCA embedding of the flattened tensor. Writes scores CSV and, when
 * svg_path is not NULL, a scatter plot. `labels` may be NULL.
 * info_json (optional): {"eigenvalues", "total_variance", "explained"}. */
HDS_API hds_status hds_embed(const hds_tensor* t, size_t r, const hds_labeling* labels, const char* csv_path,
                             const char* svg_path, char** info_json);

/* ---- plots ------------------------------------------------------------- */

/* Plot options shared by every call: {"width", "height", "top_n", "title",
 * "x_label", "y_label"}. */

/* info_json (optional): {"base", "tip", "bars": [{"feature", "label",
 * "value", "start", "end"}]} */
HDS_API hds_status hds_plot_waterfall(const hds_tensor* t, size_t sample, size_t class_index,
                                      const char* options_json, const char* svg_path, char** info_json);
/* High-dimensional waterfall paths. Extra options: "grouping": "clusters" |
 * "per-sample" | "per-class" (clusters needs `labels`), "fit_on": "segments"
 * | "vertices", "path_top_n" (0 keeps every feature). csv_path may be NULL.
 * info_json (optional): {"paths": [{"group", "size", "features",
 * "endpoint"}], "noise", "warning"} */
HDS_API hds_status hds_plot_paths(const hds_tensor* t, const hds_labeling* labels, const char* options_json,
                                  const char* svg_path, const char* csv_path, char** info_json);
/* info_json (optional): {"order", "totals"} */
HDS_API hds_status hds_plot_bar(const hds_tensor* t, const char* options_json, const char* svg_path,
                                char** info_json);
/* Cluster means of the dataset's raw features. Extra option "features":
 * [indices]; defaults to the tensor's top mean-|SHAP| features (top_n). */
HDS_API hds_status hds_plot_heatmap(const hds_dataset* ds, const hds_labeling* labels, const hds_tensor* t,
                                    const char* options_json, const char* svg_path, char** info_json);

#ifdef __cplusplus
}
#endif

#endif
