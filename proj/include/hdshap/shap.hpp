#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdshap/common.hpp"
#include "hdshap/data.hpp"
#include "hdshap/models.hpp"

namespace hdshap {

// n x p x k SHAP values plus the k-vector of base values.
//
// Storage is sample-major, then feature, then class: element (i, j, c) lives
// at (i * p + j) * k + c. Flattening therefore uses column j * k + c.
struct ShapTensor {
  std::size_t n = 0, p = 0, k = 0;
  std::vector<double> values;
  std::vector<double> base;
  std::vector<std::int64_t> sample_ids;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
  std::string model_id;
  std::string background_id;
  std::string method;

  ShapTensor() = default;
  ShapTensor(std::size_t n_samples, std::size_t n_features, std::size_t n_classes);

  double& at(std::size_t i, std::size_t j, std::size_t c) { return values[(i * p + j) * k + c]; }
  double at(std::size_t i, std::size_t j, std::size_t c) const { return values[(i * p + j) * k + c]; }
  // The p x k block of one sample.
  std::span<const double> sample(std::size_t i) const { return {values.data() + i * p * k, p * k}; }
  std::span<double> sample(std::size_t i) { return {values.data() + i * p * k, p * k}; }
  // Per-class sum over features for one sample.
  std::vector<double> row_sum(std::size_t i) const;
  // Fills ids and names from the dataset that produced the explained rows.
  void describe(const Dataset& ds);
};

struct Background {
  Matrix rows;
  std::string id;
};

// Seeded subsample of `max_rows` rows, or all rows when fewer.
Background make_background(const Dataset& train, std::size_t max_rows, std::uint64_t seed);

// Path-dependent TreeSHAP for one tree. Adds scale * phi into `phi`
// (p x value_dim, row-major).
void tree_shap_accumulate(const Tree& tree, std::span<const double> x, std::span<double> phi,
                          double scale);

ShapTensor tree_shap(const DecisionTree& model, const Matrix& X);
ShapTensor tree_shap(const BoostedEnsemble& model, const Matrix& X);
// Dispatches on the variant; MLPs are rejected.
ShapTensor tree_shap(const TrainedModel& model, const Matrix& X);

struct KernelShapOptions {
  // 0 selects min(2^p - 2, 2048).
  std::size_t n_coalitions = 0;
  std::uint64_t seed = 0;
  double ridge = 1e-6;
  std::size_t threads = 1;
  // Base values; defaults to the mean model output over the background.
  std::optional<std::vector<double>> base;
  // Upper bound on background-row model evaluations per explained sample.
  std::size_t max_evaluations_per_sample = 50'000'000;
};

struct KernelShapReport {
  std::size_t coalitions = 0;  // distinct coalitions besides the two anchors
  bool exact = false;          // every coalition enumerated
  bool rank_deficient = false; // regression matrix needed the ridge term
  double max_additivity_error = 0.0;
};

ShapTensor kernel_shap(const MarginModel& model, const Matrix& X, const Background& background,
                       const KernelShapOptions& options = {}, KernelShapReport* report = nullptr);

// Shapley kernel weight (p - 1) / (C(p, s) * s * (p - s)) for 0 < s < p.
double shapley_kernel_weight(std::size_t p, std::size_t s);

Matrix flatten(const ShapTensor& t);
ShapTensor unflatten(const Matrix& flat, std::size_t p, std::size_t k);

// Entry (j, c) = mean over samples of |phi(i, j, c)|.
Matrix mean_abs(const ShapTensor& t);

struct ClusterMean {
  int label = 0;
  std::size_t size = 0;
  Matrix mean;  // p x k
};
// Noise (label -1) is excluded; clusters are returned in ascending label order.
std::vector<ClusterMean> cluster_mean(const ShapTensor& t, std::span<const int> labels);

// max over samples and classes of |sum_j phi - (margin - base)|.
double max_additivity_error(const ShapTensor& t, const Matrix& margins);

// JSON manifest + CSV of the flattened matrix (one row per sample).
void save_tensor(const ShapTensor& t, const std::string& manifest_path, const std::string& csv_path);
ShapTensor load_tensor(const std::string& manifest_path);

}  // namespace hdshap
