#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hdshap/common.hpp"

namespace hdshap {

// Per-column affine map used by min-max scaling: scaled = (raw - min) / range.
struct ScalingMeta {
  std::vector<double> min;
  std::vector<double> range;  // 1 for constant columns
};

// Feature matrix plus integer class labels in [0, k).
//
// `sample_ids` carries row identity through splits and subsets. `groups` is an
// optional generative ground truth used only for purity reports (for simulated
// data: the sign pattern of the first two features, see `quadrant_group`).
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;
  std::vector<std::int64_t> sample_ids;
  std::optional<std::vector<int>> groups;
  std::optional<ScalingMeta> scaling;

  std::size_t n_samples() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t n_features() const { return static_cast<std::size_t>(features.cols()); }
  std::size_t n_classes() const { return class_names.size(); }

  // Throws kInvalidArgument when any invariant is violated.
  void validate() const;
  std::vector<std::size_t> class_counts() const;
};

struct SimulationSpec {
  std::size_t n_samples = 1500;
  std::size_t n_features = 10;
  double domain_half_width = 5.0;
  // 2 x (n_features - 2); drawn i.i.d. N(0,1) from the seed when absent.
  std::optional<Matrix> noise_coefficients;
  std::uint64_t seed = 0;
};

struct SplitSpec {
  double train_fraction = 0.7;
  bool stratified = false;
  std::uint64_t seed = 0;
};

// Noise coefficients actually used for a spec (the supplied ones, or the
// seeded draw).
Matrix resolve_noise_coefficients(const SimulationSpec& spec);

// Class probabilities (p1, p2, p3) of the three-class logistic model at x,
// returned in internal class order 0, 1, 2. Class 2 is the reference class.
std::array<double, 3> simulation_probabilities(std::span<const double> x,
                                               const Matrix& noise_coefficients);

// Quadrant of (x0, x1): 0 = (+,+), 1 = (-,-), 2 = (+,-), 3 = (-,+).
// Zero counts as positive.
int quadrant_group(double x0, double x1);

Dataset simulate(const SimulationSpec& spec);

struct CsvLoadResult {
  Dataset dataset;
  std::size_t dropped_rows = 0;
};

CsvLoadResult load_csv(const std::string& path, const std::string& target_column);
CsvLoadResult parse_csv(const std::string& text, const std::string& target_column);
// Writes features plus the target column (class names) under `target_column`.
std::string to_csv(const Dataset& ds, const std::string& target_column = "label");
void write_csv(const Dataset& ds, const std::string& path,
               const std::string& target_column = "label");

Dataset load_idx_images(const std::string& images_path, const std::string& labels_path);

struct ScaledDataset {
  Dataset dataset;
  ScalingMeta meta;
};

ScaledDataset min_max_scale(const Dataset& ds);
// Applies an existing scaling (e.g. fitted on training data) to another set.
Dataset apply_scaling(const Dataset& ds, const ScalingMeta& meta);
Dataset inverse_scale(const Dataset& ds, const ScalingMeta& meta);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

TrainTestSplit split(const Dataset& ds, const SplitSpec& spec);

// Rows in the given order; labels and ids follow.
Dataset subset_rows(const Dataset& ds, std::span<const std::size_t> rows);
// Keeps rows whose label is in `classes` and re-encodes labels to the order
// given.
Dataset filter_classes(const Dataset& ds, std::span<const int> classes);

// Dataset artifact: CSV of values plus a JSON manifest that records names,
// class order, ids, optional groups and scaling metadata.
void save_dataset(const Dataset& ds, const std::string& csv_path, const std::string& manifest_path);
Dataset load_dataset(const std::string& manifest_path);

}  // namespace hdshap
