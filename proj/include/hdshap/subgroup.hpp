#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hdshap/common.hpp"

namespace hdshap {

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  Vector mean;          // d
  Matrix loadings;      // d x r, orthonormal columns
  Vector eigenvalues;   // r, descending (covariance normalized by n - 1)
  double total_variance = 0.0;  // trace of the covariance
  bool degenerate = false;      // zero covariance; loadings are an arbitrary orthonormal set
};

// Top-r principal directions. The largest-magnitude entry of every loading is
// made positive (lowest index on ties).
PcaModel pca_fit(const Matrix& X, std::size_t r);
Matrix pca_transform(const PcaModel& model, const Matrix& X);

// ---------------------------------------------------------------------------
// HDBSCAN

struct HdbscanParams {
  std::size_t min_cluster_size = 15;
  std::size_t min_samples = 0;  // 0 means min_cluster_size
};

struct MstEdge {
  std::size_t a = 0, b = 0;
  double weight = 0.0;
};

// Row of the condensed tree: `child` is a point index (< n) or a cluster id
// (>= n); `lambda` = 1 / distance at which the child leaves `parent`.
struct CondensedRow {
  std::size_t parent = 0;
  std::size_t child = 0;
  double lambda = 0.0;
  std::size_t child_size = 0;
};

struct ClusterLabeling {
  std::vector<int> labels;        // -1 = noise
  std::size_t n_clusters = 0;
  std::vector<double> stability;  // per final cluster
};

// Intermediate products, exposed for inspection and testing.
struct HdbscanTrace {
  std::vector<double> core_distances;
  std::vector<MstEdge> mst;                  // sorted by weight
  std::vector<CondensedRow> condensed;
  std::map<std::size_t, double> stability;   // raw stability per condensed cluster id
  std::vector<std::size_t> selected;         // condensed cluster ids, ascending
};

std::vector<double> core_distances(const Matrix& X, std::size_t min_samples);
double mutual_reachability(const Matrix& X, std::span<const double> core, std::size_t a,
                           std::size_t b);
// Prim's algorithm on the dense mutual-reachability graph.
std::vector<MstEdge> mutual_reachability_mst(const Matrix& X, std::span<const double> core);

// Cluster labels are canonical: numbered by the smallest member index.
ClusterLabeling hdbscan(const Matrix& X, const HdbscanParams& params, HdbscanTrace* trace = nullptr);

// ---------------------------------------------------------------------------
// Purity against a reference labeling

struct PurityReport {
  std::vector<int> clusters;                        // cluster labels, ascending
  std::vector<int> truth_values;                    // distinct truth values, ascending
  std::vector<std::vector<std::size_t>> contingency;  // [cluster][truth value]
  std::vector<int> majority;                        // majority truth value per cluster
  std::vector<double> purity;                       // majority fraction per cluster
  std::size_t noise = 0;
  double overall = 0.0;  // sum of majority counts / clustered points
};

PurityReport cluster_purity(const ClusterLabeling& labels, std::span<const int> truth);

std::string labeling_to_csv(const ClusterLabeling& labels, std::span<const std::int64_t> sample_ids);
ClusterLabeling labeling_from_csv(const std::string& text, std::vector<std::int64_t>* sample_ids = nullptr);
std::string scores_to_csv(const Matrix& scores, std::span<const std::int64_t> sample_ids,
                          std::span<const int> labels);

}  // namespace hdshap
