#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "hdshap/data.hpp"
#include "hdshap/models.hpp"
#include "hdshap/shap.hpp"
#include "oracles.hpp"

using namespace hdshap;

namespace {

std::vector<double> random_point(Rng& rng, int p) {
  std::vector<double> x(static_cast<std::size_t>(p));
  for (auto& v : x) v = rng.uniform(-1.2, 1.2);
  return x;
}

Dataset simulated(std::size_t n, std::size_t p, std::uint64_t seed) {
  SimulationSpec spec;
  spec.n_samples = n;
  spec.n_features = p;
  spec.seed = seed;
  return simulate(spec);
}

}  // namespace

TEST_CASE("TreeSHAP equals the subset-enumeration oracle on random trees") {
  Rng rng(2024);
  int trees = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 60; ++trial) {
    const int p = 1 + static_cast<int>(rng.below(8));
    const int depth = 1 + static_cast<int>(rng.below(4));
    const std::size_t k = 1 + rng.below(3);
    const Tree t = oracle::random_tree(rng, depth, p, k);
    t.validate();
    ++trees;
    for (int rep = 0; rep < 4; ++rep) {
      const auto x = random_point(rng, p);
      std::vector<double> phi(static_cast<std::size_t>(p) * k, 0.0);
      tree_shap_accumulate(t, x, phi, 1.0);
      const auto want = oracle::tree_shapley(t, x, p);
      for (int j = 0; j < p; ++j)
        for (std::size_t c = 0; c < k; ++c)
          worst = std::max(worst, std::abs(phi[static_cast<std::size_t>(j) * k + c] - want[static_cast<std::size_t>(j)][c]));
    }
  }
  CHECK(trees >= 50);
  CHECK(worst < 1e-8);
}

TEST_CASE("TreeSHAP on a single split puts everything on the split feature") {
  Tree t(1);
  const double r[] = {0.0}, a[] = {1.0}, b[] = {3.0};
  t.add_node(TreeNode{1, 0.5, -1, -1, 4}, r);
  t.add_node(TreeNode{-1, 0, -1, -1, 1}, a);
  t.add_node(TreeNode{-1, 0, -1, -1, 3}, b);
  t.set_children(0, 1, 2);
  const DecisionTree model(t, 3);
  Matrix X(1, 3);
  X << 9.0, 0.0, 9.0;
  const auto s = tree_shap(model, X);
  CHECK(s.base[0] == doctest::Approx(2.5));
  CHECK(s.at(0, 1, 0) == doctest::Approx(-1.5));
  CHECK(s.at(0, 0, 0) == 0.0);
  CHECK(s.at(0, 2, 0) == 0.0);
}

TEST_CASE("ensemble TreeSHAP is the scaled sum of per-tree values") {
  Rng rng(5);
  const int p = 5;
  BoostedEnsemble model({0.1, -0.2}, 0.3, 1.0, 3, p);
  std::vector<std::vector<Tree>> rounds;
  for (int r = 0; r < 4; ++r) {
    std::vector<Tree> round = {oracle::random_tree(rng, 3, p, 1), oracle::random_tree(rng, 3, p, 1)};
    rounds.push_back(round);
    model.add_round(round);
  }
  Matrix X(3, p);
  for (Eigen::Index i = 0; i < 3; ++i)
    for (Eigen::Index j = 0; j < p; ++j) X(i, j) = rng.uniform(-1, 1);
  const auto s = tree_shap(model, X);
  for (std::size_t c = 0; c < 2; ++c) {
    double base = model.base_score()[c];
    for (const auto& round : rounds) base += 0.3 * round[c].expected_value()[0];
    CHECK(s.base[c] == doctest::Approx(base).epsilon(1e-14));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::vector<double> x(X.row(static_cast<Eigen::Index>(i)).data(), X.row(static_cast<Eigen::Index>(i)).data() + p);
    for (std::size_t c = 0; c < 2; ++c)
      for (int j = 0; j < p; ++j) {
        double want = 0.0;
        for (const auto& round : rounds) want += 0.3 * oracle::tree_shapley(round[c], x, p)[static_cast<std::size_t>(j)][0];
        CHECK(s.at(i, static_cast<std::size_t>(j), c) == doctest::Approx(want).epsilon(1e-10));
      }
  }
  CHECK(max_additivity_error(s, model.predict_margins(X)) < 1e-12);
}

TEST_CASE("TreeSHAP is additive for trained tree models") {
  const Dataset ds = simulated(500, 10, 3);
  const TrainedModel tree = train_tree(ds, TreeParams{});
  const TrainedModel boosted = train_boosted(ds, BoostParams{40, 3, 0.3, 1.0, 1.0});
  for (const auto* m : {&tree, &boosted}) {
    auto s = tree_shap(*m, ds.features);
    CHECK(s.n == 500);
    CHECK(s.method == "tree_shap");
    CHECK(max_additivity_error(s, as_margin_model(*m).predict_margins(ds.features)) < 1e-9);
  }
  MlpParams mp;
  mp.epochs = 1;
  const TrainedModel mlp = train_mlp(ds, mp);
  CHECK_THROWS_AS(tree_shap(mlp, ds.features), Error);
}

TEST_CASE("shapley kernel weight formula") {
  CHECK(shapley_kernel_weight(4, 1) == doctest::Approx(3.0 / (4.0 * 1 * 3)));
  CHECK(shapley_kernel_weight(4, 2) == doctest::Approx(3.0 / (6.0 * 2 * 2)));
  CHECK(shapley_kernel_weight(5, 2) == doctest::Approx(shapley_kernel_weight(5, 3)));
}

TEST_CASE("exact Kernel SHAP equals the interventional permutation oracle") {
  double worst = 0.0;
  for (int p = 2; p <= 5; ++p) {
    const Dataset ds = simulated(150, static_cast<std::size_t>(p), static_cast<std::uint64_t>(p));
    const auto boosted = train_boosted(ds, BoostParams{8, 3, 0.3, 1.0, 1.0});
    Mlp mlp = init_mlp({p, 7, 3}, static_cast<std::uint64_t>(p));
    const Background bg = make_background(ds, 12, 1);
    CHECK(bg.rows.rows() == 12);
    for (const MarginModel* m : {static_cast<const MarginModel*>(&boosted), static_cast<const MarginModel*>(&mlp)}) {
      const Matrix X = ds.features.topRows(3);
      KernelShapReport report;
      const auto s = kernel_shap(*m, X, bg, KernelShapOptions{}, &report);
      CHECK(report.exact);
      CHECK(report.coalitions == (1u << p) - 2);
      CHECK(report.max_additivity_error < 1e-9);
      const auto base = oracle::interventional_value(*m, std::vector<double>(static_cast<std::size_t>(p), 0.0), bg.rows, std::vector<bool>(static_cast<std::size_t>(p), false));
      for (std::size_t c = 0; c < 3; ++c) worst = std::max(worst, std::abs(s.base[c] - base[c]));
      for (std::size_t i = 0; i < 3; ++i) {
        const std::vector<double> x(X.row(static_cast<Eigen::Index>(i)).data(), X.row(static_cast<Eigen::Index>(i)).data() + p);
        const auto want = oracle::permutation_shapley(*m, x, bg.rows);
        for (int j = 0; j < p; ++j)
          for (std::size_t c = 0; c < 3; ++c)
            worst = std::max(worst, std::abs(s.at(i, static_cast<std::size_t>(j), c) - want[static_cast<std::size_t>(j)][c]));
      }
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("sampled Kernel SHAP is seeded, additive and ignores a dummy feature") {
  const Dataset ds = simulated(200, 10, 4);
  const auto boosted = train_boosted(ds, BoostParams{10, 2, 0.3, 1.0, 1.0});
  const Background bg = make_background(ds, 20, 3);
  KernelShapOptions opt;
  opt.n_coalitions = 300;
  opt.seed = 9;
  KernelShapReport report;
  const Matrix X = ds.features.topRows(4);
  const auto a = kernel_shap(boosted, X, bg, opt, &report);
  CHECK(!report.exact);
  CHECK(report.coalitions <= 300);
  CHECK(report.max_additivity_error < 1e-9);
  opt.threads = 2;
  const auto b = kernel_shap(boosted, X, bg, opt);
  CHECK(a.values == b.values);

  // A model that never reads feature 2.
  Tree t(1);
  const double r[] = {0.0}, u[] = {1.0}, v[] = {-1.0};
  t.add_node(TreeNode{0, 0.0, -1, -1, 2}, r);
  t.add_node(TreeNode{-1, 0, -1, -1, 1}, u);
  t.add_node(TreeNode{-1, 0, -1, -1, 1}, v);
  t.set_children(0, 1, 2);
  const DecisionTree dummy(t, 3);
  Background small{Matrix::Random(6, 3), "rand"};
  const auto d = kernel_shap(dummy, Matrix::Random(5, 3), small);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(d.at(i, 2, 0)) < 1e-9);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(d.at(i, 1, 0)) < 1e-9);
}

TEST_CASE("explicit base values are honoured") {
  const Dataset ds = simulated(100, 4, 2);
  const auto tree = train_tree(ds, TreeParams{3, 5});
  const Background bg = make_background(ds, 10, 0);
  KernelShapOptions opt;
  opt.base = std::vector<double>{0.2, 0.3, 0.5};
  const auto s = kernel_shap(tree, ds.features.topRows(5), bg, opt);
  CHECK(s.base == *opt.base);
  CHECK(max_additivity_error(s, tree.predict_margins(ds.features.topRows(5))) < 1e-9);
}

TEST_CASE("tensor helpers: flatten, mean_abs, cluster_mean, persistence") {
  ShapTensor t(4, 2, 3);
  for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = static_cast<double>(i) - 10.0;
  t.base = {1, 2, 3};
  t.sample_ids = {10, 11, 12, 13};
  t.feature_names = {"a", "b"};
  t.class_names = {"x", "y", "z"};
  t.model_id = "tree:00";
  t.background_id = "none";
  t.method = "tree";
  const Matrix flat = flatten(t);
  CHECK(flat.rows() == 4);
  CHECK(flat.cols() == 6);
  CHECK(flat(2, 1 * 3 + 2) == t.at(2, 1, 2));
  CHECK(unflatten(flat, 2, 3).values == t.values);

  const Matrix ma = mean_abs(t);
  double want = 0.0;
  for (std::size_t i = 0; i < 4; ++i) want += std::abs(t.at(i, 1, 0));
  CHECK(ma(1, 0) == doctest::Approx(want / 4));

  const std::vector<int> labels = {1, -1, 0, 1};
  const auto cm = cluster_mean(t, labels);
  REQUIRE(cm.size() == 2);
  CHECK(cm[0].label == 0);
  CHECK(cm[1].size == 2);
  CHECK(cm[1].mean(0, 1) == doctest::Approx((t.at(0, 0, 1) + t.at(3, 0, 1)) / 2));

  const auto rs = t.row_sum(1);
  CHECK(rs[2] == doctest::Approx(t.at(1, 0, 2) + t.at(1, 1, 2)));

  const auto dir = std::filesystem::temp_directory_path();
  const std::string manifest = (dir / "hdshap_test_tensor.json").string();
  const std::string csv = (dir / "hdshap_test_tensor.csv").string();
  save_tensor(t, manifest, csv);
  const auto back = load_tensor(manifest);
  CHECK(back.values == t.values);
  CHECK(back.base == t.base);
  CHECK(back.sample_ids == t.sample_ids);
  CHECK(back.model_id == t.model_id);
  CHECK(back.class_names == t.class_names);
  std::remove(manifest.c_str());
  std::remove(csv.c_str());
}

TEST_CASE("path-dependent values of one tree can differ within a leaf") {
  // Root splits on x0; only the right branch splits on x1. Both samples land
  // in the left leaf but disagree on x1, which the coalition {x1} still reads
  // in the branch the samples never visit.
  Tree t(1);
  const double zero[] = {0.0}, a[] = {1.0}, b[] = {2.0}, c[] = {5.0};
  t.add_node(TreeNode{0, 0.0, -1, -1, 4}, zero);
  t.add_node(TreeNode{-1, 0, -1, -1, 2}, a);
  t.add_node(TreeNode{1, 0.0, -1, -1, 2}, zero);
  t.add_node(TreeNode{-1, 0, -1, -1, 1}, b);
  t.add_node(TreeNode{-1, 0, -1, -1, 1}, c);
  t.set_children(0, 1, 2);
  t.set_children(2, 3, 4);
  const DecisionTree model(t, 2);
  Matrix X(2, 2);
  X << -1.0, -1.0, -1.0, 1.0;
  CHECK(leaf_id(model, std::span<const double>(X.row(0).data(), 2)) ==
        leaf_id(model, std::span<const double>(X.row(1).data(), 2)));
  const auto s = tree_shap(model, X);
  for (std::size_t i = 0; i < 2; ++i) {
    const std::vector<double> x = {X(static_cast<Eigen::Index>(i), 0), X(static_cast<Eigen::Index>(i), 1)};
    const auto want = oracle::tree_shapley(t, x, 2);
    CHECK(s.at(i, 1, 0) == doctest::Approx(want[1][0]));
  }
  CHECK(s.at(0, 1, 0) != doctest::Approx(s.at(1, 1, 0)));
}
