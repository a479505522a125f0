#include <algorithm>
#include <cmath>
#include <numeric>

#include "hdshap/models.hpp"

namespace hdshap {

void BoostedEnsemble::predict_margin(std::span<const double> x, std::span<double> out) const {
  std::copy(base_score_.begin(), base_score_.end(), out.begin());
  for (const auto& round : rounds_)
    for (std::size_t c = 0; c < round.size(); ++c)
      out[c] += learning_rate_ * round[c].value(round[c].leaf_node(x))[0];
}

void BoostedEnsemble::add_round(std::vector<Tree> trees) {
  require(trees.size() == base_score_.size(), "boosting round must hold one tree per class");
  rounds_.push_back(std::move(trees));
}

namespace {

// Second-order tree growth on per-sample gradient/hessian statistics.
class NewtonTreeBuilder {
 public:
  NewtonTreeBuilder(const Matrix& X, const std::vector<double>& grad, const std::vector<double>& hess,
                    const BoostParams& params)
      : X_(X), g_(grad), h_(hess), params_(params), tree_(1) {}

  Tree build() {
    std::vector<std::size_t> rows(static_cast<std::size_t>(X_.rows()));
    std::iota(rows.begin(), rows.end(), 0);
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  double score(double G, double H) const { return G * G / (H + params_.lambda); }

  std::size_t grow(const std::vector<std::size_t>& rows, int depth) {
    double G = 0.0, H = 0.0;
    for (auto r : rows) {
      G += g_[r];
      H += h_[r];
    }
    const double weight = -G / (H + params_.lambda);
    TreeNode node;
    node.cover = static_cast<double>(rows.size());

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_gain = 1e-12;
    if (depth < params_.max_depth && rows.size() >= 2) {
      const double parent = score(G, H);
      std::vector<std::size_t> order(rows);
      for (Eigen::Index f = 0; f < X_.cols(); ++f) {
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          return X_(static_cast<Eigen::Index>(a), f) < X_(static_cast<Eigen::Index>(b), f);
        });
        double GL = 0.0, HL = 0.0;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
          GL += g_[order[i]];
          HL += h_[order[i]];
          const double lo = X_(static_cast<Eigen::Index>(order[i]), f);
          const double hi = X_(static_cast<Eigen::Index>(order[i + 1]), f);
          if (!(lo < hi)) continue;
          const double GR = G - GL;
          const double HR = H - HL;
          if (HL < params_.min_child_weight || HR < params_.min_child_weight) continue;
          const double gain = 0.5 * (score(GL, HL) + score(GR, HR) - parent);
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            const double mid = lo + (hi - lo) / 2.0;
            best_threshold = mid > lo ? mid : hi;
          }
        }
      }
    }

    const double value[1] = {weight};
    if (best_feature < 0) return tree_.add_node(node, value);
    node.feature = best_feature;
    node.threshold = best_threshold;
    const std::size_t id = tree_.add_node(node, value);
    std::vector<std::size_t> left_rows, right_rows;
    for (auto r : rows)
      (X_(static_cast<Eigen::Index>(r), best_feature) < best_threshold ? left_rows : right_rows)
          .push_back(r);
    const auto l = grow(left_rows, depth + 1);
    const auto r = grow(right_rows, depth + 1);
    tree_.set_children(id, static_cast<int>(l), static_cast<int>(r));
    return id;
  }

  const Matrix& X_;
  const std::vector<double>& g_;
  const std::vector<double>& h_;
  BoostParams params_;
  Tree tree_;
};

double mean_log_loss(const Matrix& margins, std::span<const int> labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < margins.rows(); ++i) {
    const double m = margins.row(i).maxCoeff();
    const double lse = m + std::log((margins.row(i).array() - m).exp().sum());
    total += lse - margins(i, labels[static_cast<std::size_t>(i)]);
  }
  return total / static_cast<double>(margins.rows());
}

}  // namespace

BoostedEnsemble train_boosted(const Dataset& train, const BoostParams& params,
                              std::vector<double>* loss_history) {
  const std::size_t n = train.n_samples();
  const std::size_t k = train.n_classes();
  require(n >= 1, "cannot train a boosted model on an empty dataset");
  require(k >= 2, "boosting needs at least two classes");
  require(params.n_rounds >= 0 && params.max_depth >= 0, "rounds and depth must be non-negative");
  require(params.learning_rate > 0.0 && params.learning_rate <= 1.0,
          "learning rate must lie in (0, 1]");
  require(params.lambda >= 0.0, "lambda must be non-negative");

  // Base score: log class frequency; absent classes get a floor instead of -inf.
  std::vector<double> base(k);
  const auto counts = train.class_counts();
  for (std::size_t c = 0; c < k; ++c)
    base[c] = std::log(std::max(static_cast<double>(counts[c]) / static_cast<double>(n), 1e-12));

  BoostedEnsemble model(base, params.learning_rate, params.lambda, params.max_depth,
                        train.n_features());
  Matrix margins(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < margins.rows(); ++i)
    for (std::size_t c = 0; c < k; ++c) margins(i, static_cast<Eigen::Index>(c)) = base[c];
  if (loss_history) loss_history->push_back(mean_log_loss(margins, train.labels));

  std::vector<double> grad(n), hess(n);
  Matrix prob(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (int round = 0; round < params.n_rounds; ++round) {
    for (Eigen::Index i = 0; i < margins.rows(); ++i) {
      const double m = margins.row(i).maxCoeff();
      prob.row(i) = (margins.row(i).array() - m).exp();
      prob.row(i) /= prob.row(i).sum();
    }
    std::vector<Tree> trees;
    trees.reserve(k);
    for (std::size_t c = 0; c < k; ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      for (std::size_t i = 0; i < n; ++i) {
        const double pr = prob(static_cast<Eigen::Index>(i), cc);
        grad[i] = pr - (train.labels[i] == static_cast<int>(c) ? 1.0 : 0.0);
        hess[i] = std::max(pr * (1.0 - pr), 1e-16);
      }
      trees.push_back(NewtonTreeBuilder(train.features, grad, hess, params).build());
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = std::span<const double>(train.features.row(static_cast<Eigen::Index>(i)).data(),
                                             train.n_features());
      for (std::size_t c = 0; c < k; ++c)
        margins(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) +=
            params.learning_rate * trees[c].value(trees[c].leaf_node(x))[0];
    }
    model.add_round(std::move(trees));
    const double loss = mean_log_loss(margins, train.labels);
    require(std::isfinite(loss), "boosting loss became non-finite at round " + std::to_string(round + 1),
            ErrorCode::kNumerical);
    if (loss_history) loss_history->push_back(loss);
  }
  return model;
}

}  // namespace hdshap
