#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>

#include "hdshap/data.hpp"
#include "hdshap/models.hpp"

using namespace hdshap;

namespace {

Dataset simulated(std::size_t n, std::uint64_t seed) {
  SimulationSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  return simulate(spec);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an hdshap::Error");
  return ErrorCode::kInvalidArgument;
}

double gini_of(const std::vector<int>& labels, std::size_t k) {
  if (labels.empty()) return 0.0;
  std::vector<double> c(k, 0.0);
  for (int y : labels) c[static_cast<std::size_t>(y)] += 1.0;
  double s = 0.0;
  for (double v : c) s += (v / labels.size()) * (v / labels.size());
  return 1.0 - s;
}

// Best single split by trying every observed value as a "< t" cut.
double best_stump_gain(const Dataset& ds, int min_leaf) {
  const double parent = gini_of(ds.labels, ds.n_classes());
  double best = 0.0;
  for (Eigen::Index f = 0; f < ds.features.cols(); ++f)
    for (Eigen::Index t = 0; t < ds.features.rows(); ++t) {
      std::vector<int> l, r;
      for (Eigen::Index i = 0; i < ds.features.rows(); ++i)
        (ds.features(i, f) < ds.features(t, f) ? l : r).push_back(ds.labels[static_cast<std::size_t>(i)]);
      if (static_cast<int>(l.size()) < min_leaf || static_cast<int>(r.size()) < min_leaf) continue;
      const double n = static_cast<double>(ds.n_samples());
      best = std::max(best, parent - l.size() / n * gini_of(l, ds.n_classes()) -
                                r.size() / n * gini_of(r, ds.n_classes()));
    }
  return best;
}

std::vector<double> walk(const Tree& t, std::span<const double> x) {
  std::size_t i = 0;
  while (!t.is_leaf(i)) {
    const auto& nd = t.node(i);
    i = static_cast<std::size_t>(x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right);
  }
  auto v = t.value(i);
  return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("tree structure queries") {
  Tree t(2);
  const double root[] = {0.5, 0.5}, a[] = {1.0, 0.0}, b[] = {0.0, 1.0};
  t.add_node(TreeNode{0, 0.0, -1, -1, 4}, root);
  t.add_node(TreeNode{-1, 0, -1, -1, 1}, a);
  t.add_node(TreeNode{-1, 0, -1, -1, 3}, b);
  t.set_children(0, 1, 2);
  t.validate();
  CHECK(t.n_leaves() == 2);
  CHECK(t.depth() == 1);
  const double left[] = {-1.0}, right[] = {0.0};
  CHECK(t.leaf_node(left) == 1);
  CHECK(t.leaf_node(right) == 2);  // equal to the threshold goes right
  CHECK(t.leaf_ordinal(2) == 1);
  const auto e = t.expected_value();
  CHECK(e[0] == doctest::Approx(0.25));
  CHECK(e[1] == doctest::Approx(0.75));

  Tree bad(1);
  const double z[] = {0.0};
  bad.add_node(TreeNode{0, 0.0, -1, -1, 5}, z);
  bad.add_node(TreeNode{-1, 0, -1, -1, 1}, z);
  bad.add_node(TreeNode{-1, 0, -1, -1, 1}, z);
  bad.set_children(0, 1, 2);
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("CART stump finds the brute-force best Gini split") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset ds = simulated(120, seed);
    const auto model = train_tree(ds, TreeParams{1, 5});
    const Tree& t = model.tree();
    REQUIRE(t.size() == 3);
    std::vector<int> l, r;
    for (std::size_t i = 0; i < ds.n_samples(); ++i)
      (ds.features(static_cast<Eigen::Index>(i), t.node(0).feature) < t.node(0).threshold ? l : r)
          .push_back(ds.labels[i]);
    const double n = static_cast<double>(ds.n_samples());
    const double gain = gini_of(ds.labels, 3) - l.size() / n * gini_of(l, 3) - r.size() / n * gini_of(r, 3);
    CHECK(gain == doctest::Approx(best_stump_gain(ds, 5)).epsilon(1e-12));
    CHECK(l.size() == static_cast<std::size_t>(t.node(1).cover));
  }
}

TEST_CASE("CART leaves hold class frequencies and covers count samples") {
  const Dataset ds = simulated(400, 2);
  const auto model = train_tree(ds, TreeParams{5, 5});
  const Tree& t = model.tree();
  t.validate();
  CHECK(t.depth() <= 5);
  CHECK(t.node(0).cover == 400.0);
  std::vector<std::vector<double>> counts(t.size(), std::vector<double>(3, 0.0));
  for (std::size_t i = 0; i < ds.n_samples(); ++i) {
    const auto x = std::span<const double>(ds.features.row(static_cast<Eigen::Index>(i)).data(), 10);
    counts[t.leaf_node(x)][static_cast<std::size_t>(ds.labels[i])] += 1.0;
  }
  for (std::size_t node = 0; node < t.size(); ++node) {
    if (!t.is_leaf(node)) continue;
    const double n = counts[node][0] + counts[node][1] + counts[node][2];
    CHECK(n == t.node(node).cover);
    CHECK(n >= 5.0);
    for (std::size_t c = 0; c < 3; ++c) CHECK(t.value(node)[c] == doctest::Approx(counts[node][c] / n));
  }
  // Separable data is fitted exactly.
  Dataset sep;
  sep.features.resize(6, 1);
  sep.features << 0, 1, 2, 10, 11, 12;
  sep.labels = {0, 0, 0, 1, 1, 1};
  sep.feature_names = {"f"};
  sep.class_names = {"a", "b"};
  sep.sample_ids = {0, 1, 2, 3, 4, 5};
  CHECK(evaluate(train_tree(sep, TreeParams{3, 1}), sep).accuracy == 1.0);
}

TEST_CASE("boosted margins are base plus scaled tree sums") {
  const Dataset ds = simulated(300, 4);
  std::vector<double> history;
  const auto model = train_boosted(ds, BoostParams{10, 2, 0.3, 1.0, 1.0}, &history);
  CHECK(model.n_rounds() == 10);
  CHECK(history.size() == 11);
  const auto counts = ds.class_counts();
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(model.base_score()[c] == doctest::Approx(std::log(counts[c] / 300.0)));
  for (std::size_t i = 0; i < 20; ++i) {
    const auto x = std::span<const double>(ds.features.row(static_cast<Eigen::Index>(i)).data(), 10);
    std::vector<double> want = model.base_score();
    for (const auto& round : model.rounds())
      for (std::size_t c = 0; c < 3; ++c) want[c] += 0.3 * walk(round[c], x)[0];
    const auto got = model.margin(x);
    for (std::size_t c = 0; c < 3; ++c) CHECK(got[c] == doctest::Approx(want[c]).epsilon(1e-13));
  }
  for (const auto& round : model.rounds())
    for (const auto& t : round) CHECK(t.depth() <= 2);
}

TEST_CASE("boosting log-loss is non-increasing and the first stump-free round is zero") {
  const Dataset ds = simulated(300, 6);
  std::vector<double> history;
  train_boosted(ds, BoostParams{30, 3, 0.3, 1.0, 1.0}, &history);
  for (std::size_t r = 1; r < history.size(); ++r) CHECK(history[r] <= history[r - 1] + 1e-12);
  // Log-frequency base scores zero the summed gradient, so a leaf-only round
  // moves nothing.
  const auto flat = train_boosted(ds, BoostParams{1, 0, 0.3, 1.0, 1.0});
  for (const auto& t : flat.rounds()[0]) CHECK(std::abs(t.value(0)[0]) < 1e-12);
}

TEST_CASE("MLP gradient matches central differences") {
  const Dataset ds = simulated(40, 3);
  Mlp net = init_mlp({10, 6, 3}, 5);
  const double l2 = 1e-3;
  const auto g = mlp_loss_gradient(net, ds.features, ds.labels, l2);
  CHECK(g.loss == doctest::Approx(mlp_loss(net, ds.features, ds.labels, l2)));
  const double h = 1e-6;
  for (std::size_t l = 0; l < net.weights().size(); ++l) {
    for (Eigen::Index r = 0; r < net.weights()[l].rows(); r += 2)
      for (Eigen::Index c = 0; c < net.weights()[l].cols(); c += 3) {
        const double w = net.weights()[l](r, c);
        net.weights()[l](r, c) = w + h;
        const double up = mlp_loss(net, ds.features, ds.labels, l2);
        net.weights()[l](r, c) = w - h;
        const double down = mlp_loss(net, ds.features, ds.labels, l2);
        net.weights()[l](r, c) = w;
        const double fd = (up - down) / (2 * h);
        CHECK(std::abs(fd - g.weights[l](r, c)) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    for (Eigen::Index r = 0; r < net.biases()[l].size(); ++r) {
      const double b = net.biases()[l](r);
      net.biases()[l](r) = b + h;
      const double up = mlp_loss(net, ds.features, ds.labels, l2);
      net.biases()[l](r) = b - h;
      const double down = mlp_loss(net, ds.features, ds.labels, l2);
      net.biases()[l](r) = b;
      CHECK(std::abs((up - down) / (2 * h) - g.biases[l](r)) <= 1e-5);
    }
  }
}

TEST_CASE("MLP training is seeded and reduces the loss") {
  const auto ds = min_max_scale(simulated(300, 7)).dataset;
  MlpParams params;
  params.epochs = 30;
  params.seed = 3;
  std::vector<double> h1, h2;
  const Mlp a = train_mlp(ds, params, &h1);
  const Mlp b = train_mlp(ds, params, &h2);
  CHECK(h1 == h2);
  CHECK(h1.size() == 30);
  CHECK(h1.back() < h1.front());
  CHECK(a.weights()[0] == b.weights()[0]);
  params.optimizer = MlpOptimizer::kSgd;
  params.learning_rate = 0.05;
  std::vector<double> h3;
  train_mlp(ds, params, &h3);
  CHECK(h3.back() < h3.front());
}

TEST_CASE("classification report against a hand count") {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2, 2};
  const std::vector<int> pred = {0, 1, 1, 1, 1, 0, 0};
  const auto r = classification_report(truth, pred, 3);
  CHECK(r.total == 7);
  CHECK(r.accuracy == doctest::Approx(3.0 / 7.0));
  CHECK(r.confusion[2][0] == 2);
  CHECK(r.precision[0] == doctest::Approx(1.0 / 3.0));
  CHECK(r.recall[1] == doctest::Approx(1.0));
  CHECK(r.precision[1] == doctest::Approx(0.5));
  CHECK(r.precision[2] == 0.0);
  CHECK(r.precision_undefined[2]);
  CHECK(!r.recall_undefined[2]);
  CHECK(r.support == std::vector<std::size_t>{2, 2, 3});
}

TEST_CASE("model JSON round trip reproduces margins bit for bit") {
  const Dataset ds = simulated(200, 9);
  MlpParams mp;
  mp.epochs = 5;
  const std::vector<TrainedModel> models = {train_tree(ds, TreeParams{}),
                                            train_boosted(ds, BoostParams{5, 3, 0.3, 1.0, 1.0}),
                                            train_mlp(ds, mp)};
  for (const auto& m : models) {
    const auto back = model_from_json(model_to_json(m));
    CHECK(kind_of(back) == kind_of(m));
    CHECK(as_margin_model(back).predict_margins(ds.features) == as_margin_model(m).predict_margins(ds.features));
  }
  const std::string path = (std::filesystem::temp_directory_path() / "hdshap_test_model.json").string();
  save_model(models[1], path);
  CHECK(model_to_json(load_model(path)) == model_to_json(models[1]));
  std::remove(path.c_str());
  CHECK(code_of([] { model_from_json("{\"schema_version\": 99}"); }) == ErrorCode::kSchemaMismatch);
  CHECK(code_of([] { model_from_json("not json"); }) == ErrorCode::kParse);
}

TEST_CASE("hyperparameters: JSON, set_param and errors") {
  auto p = params_from_json(ModelKind::kBoosted, R"({"n_rounds": 7, "learning_rate": 0.1})");
  CHECK(std::get<BoostParams>(p).n_rounds == 7);
  CHECK(std::get<BoostParams>(p).max_depth == 3);
  set_param(p, "max_depth", 2.0);
  CHECK(std::get<BoostParams>(p).max_depth == 2);
  CHECK(code_of([&] { set_param(p, "hidden", 1.0); }) == ErrorCode::kInvalidArgument);
  auto m = default_params(ModelKind::kMlp);
  set_param(m, "hidden", std::vector<int>{8, 4});
  CHECK(std::get<MlpParams>(m).hidden == std::vector<int>{8, 4});
  CHECK(params_from_json(ModelKind::kMlp, params_to_json(m)).index() == m.index());
  CHECK(code_of([] { params_from_json(ModelKind::kTree, "[1]"); }) == ErrorCode::kParse);
  CHECK(code_of([] { parse_model_kind("forest"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("grid search enumerates the product and picks the best mean") {
  const Dataset ds = simulated(240, 5);
  GridSearchSpec spec;
  spec.axes = {{"max_depth", {1.0, 3.0}}, {"min_leaf", {1.0, 5.0, 20.0}}};
  spec.seed = 2;
  const auto r = grid_search(ds, TreeParams{}, spec);
  REQUIRE(r.table.size() == 6);
  CHECK(std::get<double>(r.table[1].values[1]) == 5.0);
  CHECK(std::get<double>(r.table[3].values[0]) == 3.0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < r.table.size(); ++i) {
    CHECK(r.table[i].fold_accuracy.size() == 3);
    const double mean = std::accumulate(r.table[i].fold_accuracy.begin(), r.table[i].fold_accuracy.end(), 0.0) / 3.0;
    CHECK(r.table[i].mean_accuracy == doctest::Approx(mean));
    if (r.table[i].mean_accuracy > r.table[best].mean_accuracy) best = i;
  }
  CHECK(r.best_index == best);
  const auto& bp = std::get<TreeParams>(r.best);
  CHECK(bp.max_depth == static_cast<int>(std::get<double>(r.table[best].values[0])));
  const auto again = grid_search(ds, TreeParams{}, spec);
  CHECK(again.best_index == r.best_index);
  CHECK(again.table[4].fold_accuracy == r.table[4].fold_accuracy);
}
