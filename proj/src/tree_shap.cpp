#include <algorithm>

#include "hdshap/shap.hpp"

namespace hdshap {

namespace {

struct PathElement {
  int feature = -1;
  double zero_fraction = 0.0;
  double one_fraction = 0.0;
  double weight = 0.0;
};

void extend_path(PathElement* path, std::size_t depth, double zero_fraction, double one_fraction,
                 int feature) {
  path[depth] = {feature, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
  const double d1 = static_cast<double>(depth + 1);
  for (std::size_t i = depth; i-- > 0;) {
    path[i + 1].weight += one_fraction * path[i].weight * static_cast<double>(i + 1) / d1;
    path[i].weight = zero_fraction * path[i].weight * static_cast<double>(depth - i) / d1;
  }
}

void unwind_path(PathElement* path, std::size_t depth, std::size_t index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  const double d1 = static_cast<double>(depth + 1);
  double next_one = path[depth].weight;
  for (std::size_t i = depth; i-- > 0;) {
    if (one != 0.0) {
      const double tmp = path[i].weight;
      path[i].weight = next_one * d1 / (static_cast<double>(i + 1) * one);
      next_one = tmp - path[i].weight * zero * static_cast<double>(depth - i) / d1;
    } else {
      path[i].weight = path[i].weight * d1 / (zero * static_cast<double>(depth - i));
    }
  }
  for (std::size_t i = index; i < depth; ++i) {
    path[i].feature = path[i + 1].feature;
    path[i].zero_fraction = path[i + 1].zero_fraction;
    path[i].one_fraction = path[i + 1].one_fraction;
  }
}

// Total permutation weight if the element at `index` were unwound.
double unwound_path_sum(const PathElement* path, std::size_t depth, std::size_t index) {
  const double one = path[index].one_fraction;
  const double zero = path[index].zero_fraction;
  const double d1 = static_cast<double>(depth + 1);
  double next_one = path[depth].weight;
  double total = 0.0;
  for (std::size_t i = depth; i-- > 0;) {
    if (one != 0.0) {
      const double tmp = next_one * d1 / (static_cast<double>(i + 1) * one);
      total += tmp;
      next_one = path[i].weight - tmp * zero * static_cast<double>(depth - i) / d1;
    } else if (zero != 0.0) {
      total += path[i].weight / zero / (static_cast<double>(depth - i) / d1);
    }
  }
  return total;
}

class TreeShapWalker {
 public:
  TreeShapWalker(const Tree& tree, std::span<const double> x, std::span<double> phi, double scale)
      : tree_(tree), x_(x), phi_(phi), scale_(scale), dim_(tree.value_dim()) {
    const std::size_t d = tree.depth() + 2;
    storage_.resize(d * (d + 1) / 2);
  }

  void run() { recurse(0, 0, storage_.data(), 1.0, 1.0, -1); }

 private:
  void recurse(std::size_t node, std::size_t depth, PathElement* parent_path, double zero_fraction,
               double one_fraction, int feature) {
    PathElement* path = parent_path + depth + 1;
    std::copy(parent_path, parent_path + depth + 1, path);
    extend_path(path, depth, zero_fraction, one_fraction, feature);

    if (tree_.is_leaf(node)) {
      const auto leaf = tree_.value(node);
      for (std::size_t i = 1; i <= depth; ++i) {
        const double w = unwound_path_sum(path, depth, i);
        const PathElement& el = path[i];
        const double factor = scale_ * w * (el.one_fraction - el.zero_fraction);
        double* out = phi_.data() + static_cast<std::size_t>(el.feature) * dim_;
        for (std::size_t c = 0; c < dim_; ++c) out[c] += factor * leaf[c];
      }
      return;
    }

    const TreeNode& nd = tree_.node(node);
    const auto split = nd.feature;
    const bool go_left = x_[static_cast<std::size_t>(split)] < nd.threshold;
    const auto hot = static_cast<std::size_t>(go_left ? nd.left : nd.right);
    const auto cold = static_cast<std::size_t>(go_left ? nd.right : nd.left);
    const double hot_zero = tree_.node(hot).cover / nd.cover;
    const double cold_zero = tree_.node(cold).cover / nd.cover;
    double incoming_zero = 1.0;
    double incoming_one = 1.0;

    // A feature already on the path is unwound and re-extended here.
    std::size_t index = 0;
    for (; index <= depth; ++index)
      if (path[index].feature == split) break;
    if (index != depth + 1) {
      incoming_zero = path[index].zero_fraction;
      incoming_one = path[index].one_fraction;
      unwind_path(path, depth, index);
      depth -= 1;
    }
    recurse(hot, depth + 1, path, hot_zero * incoming_zero, incoming_one, split);
    recurse(cold, depth + 1, path, cold_zero * incoming_zero, 0.0, split);
  }

  const Tree& tree_;
  std::span<const double> x_;
  std::span<double> phi_;
  double scale_;
  std::size_t dim_;
  std::vector<PathElement> storage_;
};

void check_tree(const Tree& tree) {
  for (std::size_t i = 0; i < tree.size(); ++i)
    require(tree.node(i).cover > 0.0,
            "tree node " + std::to_string(i) + " has zero cover; TreeSHAP needs covers",
            ErrorCode::kInvalidArgument);
}

std::span<const double> row_span(const Matrix& X, Eigen::Index i) {
  return {X.row(i).data(), static_cast<std::size_t>(X.cols())};
}

}  // namespace

void tree_shap_accumulate(const Tree& tree, std::span<const double> x, std::span<double> phi,
                          double scale) {
  TreeShapWalker(tree, x, phi, scale).run();
}

ShapTensor tree_shap(const DecisionTree& model, const Matrix& X) {
  require(static_cast<std::size_t>(X.cols()) == model.n_features(),
          "feature count does not match model");
  check_tree(model.tree());
  ShapTensor t(static_cast<std::size_t>(X.rows()), model.n_features(), model.n_classes());
  t.base = model.tree().expected_value();
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    tree_shap_accumulate(model.tree(), row_span(X, i), t.sample(static_cast<std::size_t>(i)), 1.0);
  t.method = "tree_shap";
  return t;
}

ShapTensor tree_shap(const BoostedEnsemble& model, const Matrix& X) {
  require(static_cast<std::size_t>(X.cols()) == model.n_features(),
          "feature count does not match model");
  const std::size_t p = model.n_features();
  const std::size_t k = model.n_classes();
  ShapTensor t(static_cast<std::size_t>(X.rows()), p, k);
  t.base = model.base_score();
  for (const auto& round : model.rounds())
    for (std::size_t c = 0; c < k; ++c) {
      check_tree(round[c]);
      t.base[c] += model.learning_rate() * round[c].expected_value()[0];
    }
  std::vector<double> phi(p);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    auto out = t.sample(static_cast<std::size_t>(i));
    for (const auto& round : model.rounds())
      for (std::size_t c = 0; c < k; ++c) {
        std::fill(phi.begin(), phi.end(), 0.0);
        tree_shap_accumulate(round[c], row_span(X, i), phi, model.learning_rate());
        for (std::size_t j = 0; j < p; ++j) out[j * k + c] += phi[j];
      }
  }
  t.method = "tree_shap";
  return t;
}

ShapTensor tree_shap(const TrainedModel& model, const Matrix& X) {
  if (const auto* tree = std::get_if<DecisionTree>(&model)) return tree_shap(*tree, X);
  if (const auto* boosted = std::get_if<BoostedEnsemble>(&model)) return tree_shap(*boosted, X);
  fail(ErrorCode::kInvalidArgument, "TreeSHAP needs a tree model; use Kernel SHAP for the MLP");
}

}  // namespace hdshap
