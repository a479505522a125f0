#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hdshap/common.hpp"
#include "hdshap/data.hpp"
#include "hdshap/shap.hpp"
#include "hdshap/subgroup.hpp"

namespace hdshap {

struct PlotSpec {
  int width = 720;
  int height = 480;
  std::size_t top_n = 10;  // remaining features are aggregated
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<std::string> palette;  // empty selects the built-in palette
  void validate() const;
};

const std::vector<std::string>& default_palette();

// ---------------------------------------------------------------------------
// Classical waterfall

struct WaterfallBar {
  int feature = -1;  // -1 for the aggregated "other" bar
  std::string label;
  double value = 0.0;
  double start = 0.0;
  double end = 0.0;
};

struct ClassicalWaterfall {
  double base = 0.0;
  double tip = 0.0;  // base plus every bar, in drawing order
  std::vector<WaterfallBar> bars;
  std::string svg;
};

// Bars start at base[class_index] and follow descending |phi| (ties by
// feature index); zero contributions are not drawn.
ClassicalWaterfall classical_waterfall(const ShapTensor& t, std::size_t sample,
                                       std::size_t class_index, const PlotSpec& spec);

// ---------------------------------------------------------------------------
// High-dimensional waterfall paths

struct PathEntry {
  int feature = -1;  // -1 for the aggregated "remaining features" segment
  std::vector<double> segment;  // k
};

struct WaterfallPath {
  std::string group;
  int group_label = 0;
  std::size_t size = 0;
  std::vector<PathEntry> entries;
  std::vector<double> anchor;    // the origin
  std::vector<double> endpoint;  // anchor + running sum of the segments
};

struct PathSet {
  std::vector<WaterfallPath> paths;
  std::vector<std::string> feature_names;
  std::vector<double> base;  // shared base vector, drawn as a reference only
  std::size_t noise = 0;
};

// One path per distinct non-negative label, in ascending label order; label
// -1 is counted as noise and left out. Segments are the group-mean feature
// rows ordered by descending Euclidean norm (ties by feature index). With
// top_n > 0 the rows beyond top_n are summed into one terminal segment.
PathSet build_paths(const ShapTensor& t, std::span<const int> labels, std::size_t top_n = 0,
                    const std::string& group_prefix = "cluster ");
// Groupings other than a clustering.
std::vector<int> per_sample_grouping(std::size_t n);
std::vector<int> per_class_grouping(const Matrix& margins);

enum class PathFit { kSegments, kVertices };
PathFit parse_path_fit(const std::string& name);

struct ProjectedPath {
  std::string group;
  std::size_t size = 0;
  std::vector<int> features;  // one per segment
  Matrix vertices;            // (segments + 1) x r, first row is the origin
};

struct ProjectedPaths {
  std::vector<ProjectedPath> paths;
  std::vector<std::string> feature_names;
  std::size_t noise = 0;
  std::optional<PcaModel> pca;  // absent for the k = 1 identity mapping
  Matrix origin;                // 1 x r image of the k-space origin
  std::string warning;
};

// Fits one PCA frame for all paths. In segment mode the pooled set is
// symmetrised with the negated segments, so the fitted mean is zero and the
// origin maps to the origin. For k = 1 the mapping is x = step, y = running
// sum and `warning` is set.
ProjectedPaths project_paths(const PathSet& paths, std::size_t r = 2,
                             PathFit fit = PathFit::kSegments);

std::string render_paths(const ProjectedPaths& projected, const PlotSpec& spec);
// One row per vertex: group, feature, x, y.
std::string paths_to_csv(const ProjectedPaths& projected);

// ---------------------------------------------------------------------------
// Bar chart and heatmap

struct StackedBar {
  std::vector<std::size_t> order;  // drawn features, tallest first
  std::vector<double> totals;      // matching `order`
  std::string svg;
};

StackedBar stacked_bar(const Matrix& meanabs, const std::vector<std::string>& feature_names,
                       const std::vector<std::string>& class_names, const PlotSpec& spec);

// Feature indices by descending row total of `meanabs`, ties by index.
std::vector<std::size_t> top_features(const Matrix& meanabs, std::size_t count);

struct Heatmap {
  std::vector<int> clusters;
  std::vector<std::size_t> features;
  Matrix cells;  // clusters x features, mean raw value
  std::vector<double> global_mean;  // per shown feature, over all rows
  std::string svg;
};

// Rows with label -1 enter the global means but get no row of their own.
Heatmap cluster_heatmap(const Dataset& ds, std::span<const int> labels,
                        const std::vector<std::size_t>& features, const PlotSpec& spec);

// PCA scatter of embedding scores, coloured by label.
std::string render_scatter(const Matrix& scores, std::span<const int> labels, const PlotSpec& spec);

}  // namespace hdshap
