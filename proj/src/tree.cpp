#include <algorithm>
#include <cmath>
#include <numeric>

#include "hdshap/models.hpp"

namespace hdshap {

std::size_t Tree::add_node(const TreeNode& node, std::span<const double> value) {
  require(value.size() == value_dim_, "tree node value has wrong dimension");
  nodes_.push_back(node);
  values_.insert(values_.end(), value.begin(), value.end());
  return nodes_.size() - 1;
}

void Tree::set_children(std::size_t parent, int left, int right) {
  nodes_[parent].left = left;
  nodes_[parent].right = right;
}

std::size_t Tree::leaf_node(std::span<const double> x) const {
  std::size_t i = 0;
  while (!is_leaf(i)) {
    const TreeNode& nd = nodes_[i];
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left
                                                                                         : nd.right);
  }
  return i;
}

std::size_t Tree::leaf_ordinal(std::size_t node) const {
  std::size_t ordinal = 0;
  for (std::size_t i = 0; i < node; ++i)
    if (is_leaf(i)) ++ordinal;
  return ordinal;
}

std::size_t Tree::n_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.feature < 0; }));
}

std::size_t Tree::depth() const {
  if (nodes_.empty()) return 0;
  std::vector<std::size_t> d(nodes_.size(), 0);
  std::size_t best = 0;
  // Preorder storage: parents precede children.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (is_leaf(i)) continue;
    d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
    d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    best = std::max(best, d[i] + 1);
  }
  return best;
}

std::vector<double> Tree::expected_value() const {
  std::vector<double> out(value_dim_, 0.0);
  const double total = nodes_.front().cover;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (!is_leaf(i)) continue;
    const auto v = value(i);
    for (std::size_t c = 0; c < value_dim_; ++c) out[c] += nodes_[i].cover / total * v[c];
  }
  return out;
}

void Tree::validate() const {
  require(!nodes_.empty(), "tree has no nodes");
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const TreeNode& nd = nodes_[i];
    require(nd.cover > 0.0, "tree node " + std::to_string(i) + " has zero cover");
    if (nd.feature < 0) continue;
    require(nd.left > static_cast<int>(i) && nd.right > static_cast<int>(i) &&
                static_cast<std::size_t>(nd.left) < nodes_.size() &&
                static_cast<std::size_t>(nd.right) < nodes_.size(),
            "tree node " + std::to_string(i) + " has invalid children");
    const double sum = nodes_[static_cast<std::size_t>(nd.left)].cover +
                       nodes_[static_cast<std::size_t>(nd.right)].cover;
    require(std::abs(sum - nd.cover) <= 1e-9 * nd.cover,
            "children covers do not sum to parent cover at node " + std::to_string(i));
  }
}

// ---------------------------------------------------------------------------

Matrix MarginModel::predict_margins(const Matrix& X) const {
  Matrix out(X.rows(), static_cast<Eigen::Index>(n_classes()));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    predict_margin(std::span<const double>(X.row(i).data(), static_cast<std::size_t>(X.cols())),
                   std::span<double>(out.row(i).data(), n_classes()));
  return out;
}

std::vector<double> MarginModel::margin(std::span<const double> x) const {
  std::vector<double> out(n_classes());
  predict_margin(x, out);
  return out;
}

int MarginModel::predict_class(std::span<const double> x) const {
  const auto m = margin(x);
  return static_cast<int>(std::max_element(m.begin(), m.end()) - m.begin());
}

std::vector<int> MarginModel::predict_classes(const Matrix& X) const {
  const Matrix m = predict_margins(X);
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c)
      if (m(i, c) > m(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

void DecisionTree::predict_margin(std::span<const double> x, std::span<double> out) const {
  const auto v = tree_.value(tree_.leaf_node(x));
  std::copy(v.begin(), v.end(), out.begin());
}

std::size_t leaf_id(const DecisionTree& model, std::span<const double> x) {
  const Tree& t = model.tree();
  return t.leaf_ordinal(t.leaf_node(x));
}

// ---------------------------------------------------------------------------
// CART with Gini impurity

namespace {

double gini(std::span<const double> counts, double total) {
  if (total <= 0.0) return 0.0;
  double s = 0.0;
  for (double c : counts) s += (c / total) * (c / total);
  return 1.0 - s;
}

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;
};

// Midpoint between two distinct sorted values, nudged so that lo < t <= hi.
double split_threshold(double lo, double hi) {
  const double mid = lo + (hi - lo) / 2.0;
  return mid > lo ? mid : hi;
}

class CartBuilder {
 public:
  CartBuilder(const Dataset& ds, const TreeParams& params)
      : ds_(ds), params_(params), k_(ds.n_classes()), tree_(ds.n_classes()) {}

  Tree build() {
    std::vector<std::size_t> rows(ds_.n_samples());
    std::iota(rows.begin(), rows.end(), 0);
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  std::vector<double> class_counts(const std::vector<std::size_t>& rows) const {
    std::vector<double> counts(k_, 0.0);
    for (auto r : rows) counts[static_cast<std::size_t>(ds_.labels[r])] += 1.0;
    return counts;
  }

  SplitChoice best_split(const std::vector<std::size_t>& rows,
                         const std::vector<double>& counts) const {
    const double n = static_cast<double>(rows.size());
    const double parent = gini(counts, n);
    const auto min_leaf = static_cast<std::size_t>(std::max(1, params_.min_leaf));
    SplitChoice best;
    std::vector<std::size_t> order(rows);
    std::vector<double> left(k_), right(k_);
    for (Eigen::Index f = 0; f < ds_.features.cols(); ++f) {
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ds_.features(static_cast<Eigen::Index>(a), f) <
               ds_.features(static_cast<Eigen::Index>(b), f);
      });
      std::fill(left.begin(), left.end(), 0.0);
      right = counts;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        const auto y = static_cast<std::size_t>(ds_.labels[order[i]]);
        left[y] += 1.0;
        right[y] -= 1.0;
        const double lo = ds_.features(static_cast<Eigen::Index>(order[i]), f);
        const double hi = ds_.features(static_cast<Eigen::Index>(order[i + 1]), f);
        if (!(lo < hi)) continue;
        const std::size_t n_left = i + 1;
        const std::size_t n_right = order.size() - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        const double nl = static_cast<double>(n_left);
        const double nr = static_cast<double>(n_right);
        const double gain = parent - (nl / n) * gini(left, nl) - (nr / n) * gini(right, nr);
        // Strict improvement keeps the lowest feature, then the lowest threshold.
        if (gain > best.gain + 1e-12) {
          best.feature = static_cast<int>(f);
          best.threshold = split_threshold(lo, hi);
          best.gain = gain;
        }
      }
    }
    return best;
  }

  std::size_t grow(const std::vector<std::size_t>& rows, int depth) {
    const auto counts = class_counts(rows);
    const double n = static_cast<double>(rows.size());
    std::vector<double> freq(k_);
    for (std::size_t c = 0; c < k_; ++c) freq[c] = counts[c] / n;

    TreeNode node;
    node.cover = n;
    SplitChoice split;
    const bool pure = std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
    if (depth < params_.max_depth && !pure &&
        rows.size() >= 2 * static_cast<std::size_t>(std::max(1, params_.min_leaf)))
      split = best_split(rows, counts);

    if (split.feature < 0) return tree_.add_node(node, freq);

    node.feature = split.feature;
    node.threshold = split.threshold;
    const std::size_t id = tree_.add_node(node, freq);
    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows)
      (ds_.features(static_cast<Eigen::Index>(r), split.feature) < split.threshold ? left_rows
                                                                                   : right_rows)
          .push_back(r);
    const auto l = grow(left_rows, depth + 1);
    const auto r = grow(right_rows, depth + 1);
    tree_.set_children(id, static_cast<int>(l), static_cast<int>(r));
    return id;
  }

  const Dataset& ds_;
  TreeParams params_;
  std::size_t k_;
  Tree tree_;
};

}  // namespace

DecisionTree train_tree(const Dataset& train, const TreeParams& params) {
  require(train.n_samples() >= 1, "cannot train a tree on an empty dataset");
  require(params.max_depth >= 0, "max_depth must be non-negative");
  require(params.min_leaf >= 1, "min_leaf must be at least 1");
  return DecisionTree(CartBuilder(train, params).build(), train.n_features());
}

}  // namespace hdshap
