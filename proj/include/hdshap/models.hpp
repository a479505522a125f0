#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "hdshap/common.hpp"
#include "hdshap/data.hpp"

namespace hdshap {

// ---------------------------------------------------------------------------
// Trees

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double cover = 0.0;  // number of training samples reaching the node
};

// Binary tree with vector-valued nodes. A sample goes left when
// x[feature] < threshold. Nodes are stored in preorder, so the root is 0.
class Tree {
 public:
  Tree() = default;
  explicit Tree(std::size_t value_dim) : value_dim_(value_dim) {}

  std::size_t value_dim() const { return value_dim_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(std::size_t i) const { return nodes_[i]; }
  bool is_leaf(std::size_t i) const { return nodes_[i].feature < 0; }
  std::span<const double> value(std::size_t i) const {
    return {values_.data() + i * value_dim_, value_dim_};
  }

  // Appends a node and returns its index.
  std::size_t add_node(const TreeNode& node, std::span<const double> value);
  void set_children(std::size_t parent, int left, int right);

  std::size_t leaf_node(std::span<const double> x) const;
  // Ordinal of a leaf among all leaves in node order.
  std::size_t leaf_ordinal(std::size_t node) const;
  std::size_t n_leaves() const;
  std::size_t depth() const;
  // Cover-weighted mean of the leaf values.
  std::vector<double> expected_value() const;
  // Throws when children covers do not add up or a cover is not positive.
  void validate() const;

 private:
  std::size_t value_dim_ = 1;
  std::vector<TreeNode> nodes_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// Margin models

class MarginModel {
 public:
  virtual ~MarginModel() = default;
  virtual std::size_t n_features() const = 0;
  virtual std::size_t n_classes() const = 0;
  virtual void predict_margin(std::span<const double> x, std::span<double> out) const = 0;
  // Row-wise margins; subclasses may batch.
  virtual Matrix predict_margins(const Matrix& X) const;

  std::vector<double> margin(std::span<const double> x) const;
  // argmax of the margins, lowest index on ties.
  int predict_class(std::span<const double> x) const;
  std::vector<int> predict_classes(const Matrix& X) const;
};

// Classification tree; leaves hold class-frequency vectors, which are the
// margins explained by SHAP for this model.
class DecisionTree final : public MarginModel {
 public:
  DecisionTree() = default;
  DecisionTree(Tree tree, std::size_t n_features) : tree_(std::move(tree)), n_features_(n_features) {}

  std::size_t n_features() const override { return n_features_; }
  std::size_t n_classes() const override { return tree_.value_dim(); }
  void predict_margin(std::span<const double> x, std::span<double> out) const override;
  const Tree& tree() const { return tree_; }

 private:
  Tree tree_;
  std::size_t n_features_ = 0;
};

// margin(x)_c = base_score_c + learning_rate * sum over rounds of tree[round][c](x)
class BoostedEnsemble final : public MarginModel {
 public:
  BoostedEnsemble() = default;
  BoostedEnsemble(std::vector<double> base_score, double learning_rate, double lambda,
                  int max_depth, std::size_t n_features)
      : base_score_(std::move(base_score)),
        learning_rate_(learning_rate),
        lambda_(lambda),
        max_depth_(max_depth),
        n_features_(n_features) {}

  std::size_t n_features() const override { return n_features_; }
  std::size_t n_classes() const override { return base_score_.size(); }
  void predict_margin(std::span<const double> x, std::span<double> out) const override;

  const std::vector<double>& base_score() const { return base_score_; }
  double learning_rate() const { return learning_rate_; }
  double lambda() const { return lambda_; }
  int max_depth() const { return max_depth_; }
  std::size_t n_rounds() const { return rounds_.size(); }
  // One scalar-leaf tree per class.
  const std::vector<std::vector<Tree>>& rounds() const { return rounds_; }
  void add_round(std::vector<Tree> trees);

 private:
  std::vector<double> base_score_;
  double learning_rate_ = 0.3;
  double lambda_ = 1.0;
  int max_depth_ = 3;
  std::size_t n_features_ = 0;
  std::vector<std::vector<Tree>> rounds_;
};

// Fully connected network; rectifier on hidden layers, identity on the output
// layer so margins are logits. weights[l] is (layer_sizes[l+1] x layer_sizes[l]).
class Mlp final : public MarginModel {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> layer_sizes);

  std::size_t n_features() const override { return static_cast<std::size_t>(layer_sizes_.front()); }
  std::size_t n_classes() const override { return static_cast<std::size_t>(layer_sizes_.back()); }
  void predict_margin(std::span<const double> x, std::span<double> out) const override;
  Matrix predict_margins(const Matrix& X) const override;

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  std::vector<Matrix>& weights() { return weights_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Vector>& biases() const { return biases_; }

 private:
  std::vector<int> layer_sizes_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

// Mean softmax cross-entropy (+ 0.5 * l2 * sum of squared weights) and its
// gradient by backpropagation.
struct MlpGradient {
  double loss = 0.0;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};
MlpGradient mlp_loss_gradient(const Mlp& net, const Matrix& X, std::span<const int> labels,
                              double l2);
double mlp_loss(const Mlp& net, const Matrix& X, std::span<const int> labels, double l2);

enum class ModelKind { kTree, kBoosted, kMlp };
std::string_view model_kind_name(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

using TrainedModel = std::variant<DecisionTree, BoostedEnsemble, Mlp>;
const MarginModel& as_margin_model(const TrainedModel& model);
ModelKind kind_of(const TrainedModel& model);

// ---------------------------------------------------------------------------
// Training

struct TreeParams {
  int max_depth = 5;
  int min_leaf = 5;
};

struct BoostParams {
  int n_rounds = 100;
  int max_depth = 3;
  double learning_rate = 0.3;
  double lambda = 1.0;
  double min_child_weight = 1.0;
};

enum class MlpOptimizer { kSgd, kAdam };

struct MlpParams {
  std::vector<int> hidden = {32};
  int epochs = 200;
  int batch_size = 32;
  double learning_rate = 0.001;
  double l2 = 1e-4;
  MlpOptimizer optimizer = MlpOptimizer::kAdam;
  std::uint64_t seed = 0;
};

using ModelParams = std::variant<TreeParams, BoostParams, MlpParams>;
ModelKind kind_of(const ModelParams& params);
ModelParams default_params(ModelKind kind);
std::string params_to_json(const ModelParams& params);
// Keys absent from the JSON object keep their defaults.
ModelParams params_from_json(ModelKind kind, const std::string& json_text);

DecisionTree train_tree(const Dataset& train, const TreeParams& params);

// `loss_history`, when given, receives the training log-loss before the first
// round and after every round.
BoostedEnsemble train_boosted(const Dataset& train, const BoostParams& params,
                              std::vector<double>* loss_history = nullptr);

Mlp init_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed);
// `loss_history` receives the full-batch training loss after every epoch.
Mlp train_mlp(const Dataset& train, const MlpParams& params,
              std::vector<double>* loss_history = nullptr);

TrainedModel train_model(const Dataset& train, const ModelParams& params);

std::size_t leaf_id(const DecisionTree& model, std::span<const double> x);

// ---------------------------------------------------------------------------
// Evaluation and model selection

struct ClassificationReport {
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<std::size_t> support;
  // Set when the metric's denominator was zero (metric reported as 0).
  std::vector<bool> precision_undefined;
  std::vector<bool> recall_undefined;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
  double accuracy = 0.0;
  std::size_t total = 0;
};

ClassificationReport classification_report(std::span<const int> truth,
                                           std::span<const int> predicted, std::size_t n_classes);
ClassificationReport evaluate(const MarginModel& model, const Dataset& test);

using ParamValue = std::variant<double, std::vector<int>>;

struct GridAxis {
  std::string name;
  std::vector<ParamValue> candidates;
};

struct GridSearchSpec {
  std::vector<GridAxis> axes;
  std::size_t n_folds = 3;
  bool stratified = true;
  std::uint64_t seed = 0;
};

struct GridCell {
  std::vector<ParamValue> values;  // one per axis
  std::vector<double> fold_accuracy;
  double mean_accuracy = 0.0;
};

struct GridSearchResult {
  ModelParams best;
  std::size_t best_index = 0;
  std::vector<GridCell> table;  // row-major over the axes, last axis fastest
};

// Sets one named hyperparameter; throws on unknown names or wrong value types.
void set_param(ModelParams& params, const std::string& name, const ParamValue& value);
GridSearchSpec default_grid(ModelKind kind);
GridSearchResult grid_search(const Dataset& train, const ModelParams& base,
                             const GridSearchSpec& spec);

// ---------------------------------------------------------------------------
// Persistence (versioned JSON)

inline constexpr int kModelSchemaVersion = 1;
std::string model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const std::string& text);
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace hdshap
