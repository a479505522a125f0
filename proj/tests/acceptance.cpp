// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <string>

#include "hdshap/data.hpp"
#include "hdshap/models.hpp"
#include "hdshap/shap.hpp"
#include "hdshap/subgroup.hpp"
#include "hdshap/viz.hpp"
#include "oracles.hpp"

using namespace hdshap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Line {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Default pipeline for one seed: simulate, split, train the three models.
struct SeedRun {
  std::uint64_t seed = 0;
  TrainTestSplit data;
  DecisionTree tree;
  BoostedEnsemble boosted;
  Mlp mlp;
  double acc[3] = {0, 0, 0};
};

SeedRun run_seed(std::uint64_t seed) {
  SeedRun r;
  r.seed = seed;
  SimulationSpec spec;  // n = 1500, p = 10, half-width 5
  spec.seed = seed;
  r.data = split(simulate(spec), SplitSpec{0.7, false, seed});
  r.tree = train_tree(r.data.train, TreeParams{});
  r.boosted = train_boosted(r.data.train, BoostParams{});
  MlpParams mp;
  mp.seed = seed;
  r.mlp = train_mlp(r.data.train, mp);
  r.acc[0] = evaluate(r.tree, r.data.test).accuracy;
  r.acc[1] = evaluate(r.boosted, r.data.test).accuracy;
  r.acc[2] = evaluate(r.mlp, r.data.test).accuracy;
  return r;
}

ShapTensor explain_mlp(const SeedRun& r) {
  const Background bg = make_background(r.data.train, 100, r.seed);
  KernelShapOptions opt;
  opt.seed = r.seed;
  const Matrix margins = r.mlp.predict_margins(r.data.train.features);
  std::vector<double> base(3);
  for (Eigen::Index c = 0; c < 3; ++c) base[static_cast<std::size_t>(c)] = margins.col(c).mean();
  opt.base = base;
  auto t = kernel_shap(r.mlp, r.data.test.features, bg, opt);
  t.describe(r.data.test);
  return t;
}

Line criterion1(const std::vector<SeedRun>& runs, double secs) {
  const double target[3] = {0.89, 0.94, 0.96};
  const char* names[3] = {"tree", "boosted", "mlp"};
  bool ok = secs < 300.0;
  std::string detail;
  for (int m = 0; m < 3; ++m) {
    std::vector<double> acc;
    for (const auto& r : runs) acc.push_back(r.acc[m]);
    const double med = median(acc);
    ok = ok && std::abs(med - target[m]) <= 0.04;
    detail += std::string(names[m]) + " median " + fmt("%.3f", med) + " (";
    for (std::size_t s = 0; s < acc.size(); ++s) detail += (s ? " " : "") + fmt("%.3f", acc[s]);
    detail += "), ";
  }
  detail += "train time " + fmt("%.1f s", secs);
  return {ok, detail};
}

Line criterion2() {
  Rng rng(42);
  double tree_err = 0.0;
  int trees = 0;
  for (int trial = 0; trial < 60; ++trial, ++trees) {
    const int p = 1 + static_cast<int>(rng.below(8));
    const int depth = 1 + static_cast<int>(rng.below(4));
    const std::size_t k = 1 + rng.below(3);
    const Tree t = oracle::random_tree(rng, depth, p, k);
    for (int rep = 0; rep < 3; ++rep) {
      std::vector<double> x(static_cast<std::size_t>(p));
      for (auto& v : x) v = rng.uniform(-1.2, 1.2);
      std::vector<double> phi(static_cast<std::size_t>(p) * k, 0.0);
      tree_shap_accumulate(t, x, phi, 1.0);
      const auto want = oracle::tree_shapley(t, x, p);
      for (int j = 0; j < p; ++j)
        for (std::size_t c = 0; c < k; ++c)
          tree_err = std::max(tree_err, std::abs(phi[static_cast<std::size_t>(j) * k + c] - want[static_cast<std::size_t>(j)][c]));
    }
  }
  double kernel_err = 0.0;
  bool exact = true;
  for (int p = 2; p <= 5; ++p) {
    SimulationSpec spec;
    spec.n_samples = 200;
    spec.n_features = static_cast<std::size_t>(p);
    spec.seed = static_cast<std::uint64_t>(10 + p);
    const Dataset ds = simulate(spec);
    const auto boosted = train_boosted(ds, BoostParams{10, 3, 0.3, 1.0, 1.0});
    const Mlp mlp = init_mlp({p, 8, 3}, static_cast<std::uint64_t>(p));
    const auto tree = train_tree(ds, TreeParams{4, 5});
    const Background bg = make_background(ds, 15, 1);
    const Matrix X = ds.features.topRows(4);
    for (const MarginModel* m : {static_cast<const MarginModel*>(&boosted), static_cast<const MarginModel*>(&mlp),
                                 static_cast<const MarginModel*>(&tree)}) {
      KernelShapReport rep;
      const auto s = kernel_shap(*m, X, bg, KernelShapOptions{}, &rep);
      exact = exact && rep.exact;
      for (std::size_t i = 0; i < 4; ++i) {
        const std::vector<double> x(X.row(static_cast<Eigen::Index>(i)).data(), X.row(static_cast<Eigen::Index>(i)).data() + p);
        const auto want = oracle::permutation_shapley(*m, x, bg.rows);
        for (int j = 0; j < p; ++j)
          for (std::size_t c = 0; c < 3; ++c)
            kernel_err = std::max(kernel_err, std::abs(s.at(i, static_cast<std::size_t>(j), c) - want[static_cast<std::size_t>(j)][c]));
      }
    }
  }
  const bool ok = trees >= 50 && tree_err < 1e-8 && exact && kernel_err < 1e-6;
  return {ok, std::to_string(trees) + " random trees, TreeSHAP max error " + fmt("%.1e", tree_err) +
                  "; exact Kernel SHAP (p = 2..5) max error " + fmt("%.1e", kernel_err)};
}

Line criterion3(const SeedRun& r, const ShapTensor& tree_t, const ShapTensor& boost_t) {
  const double e1 = max_additivity_error(tree_t, r.tree.predict_margins(r.data.test.features));
  const double e2 = max_additivity_error(boost_t, r.boosted.predict_margins(r.data.test.features));
  return {std::max(e1, e2) < 1e-9, std::to_string(tree_t.n) + " test rows x 3 classes, tree " + fmt("%.1e", e1) +
                                       ", boosted " + fmt("%.1e", e2)};
}

// Subgroup structure of the boosted tensor for one seed.
bool subgroups_ok(const SeedRun& r, const ShapTensor& t, std::string& note) {
  const auto l = hdbscan(flatten(t), HdbscanParams{15, 0});
  const auto& groups = *r.data.test.groups;
  std::map<int, std::map<int, int>> label_counts, pattern_counts;
  for (std::size_t i = 0; i < t.n; ++i) {
    if (l.labels[i] < 0) continue;
    ++label_counts[l.labels[i]][r.data.test.labels[i]];
    ++pattern_counts[l.labels[i]][groups[i]];
  }
  auto majority = [](const std::map<int, int>& m) {
    return std::max_element(m.begin(), m.end(), [](auto& a, auto& b) { return a.second < b.second; })->first;
  };
  int class3_clusters = 0, hits = 0, members = 0;
  std::set<int> patterns;
  for (const auto& [c, counts] : label_counts) {
    if (majority(counts) != 2) continue;  // internal class 2 is class "3"
    ++class3_clusters;
    const int pat = majority(pattern_counts[c]);
    patterns.insert(pat);
    for (const auto& [g, n] : pattern_counts[c]) {
      members += n;
      if (g == pat) hits += n;
    }
  }
  const double purity = members ? static_cast<double>(hits) / members : 0.0;
  const bool ok = l.n_clusters >= 4 && class3_clusters >= 2 && purity >= 0.9 && patterns.count(2) && patterns.count(3);
  note = std::to_string(l.n_clusters) + " clusters/" + std::to_string(class3_clusters) + " class-3/purity " +
         fmt("%.2f", purity) + (patterns.count(2) && patterns.count(3) ? "/(+,-)&(-,+)" : "/patterns missing");
  return ok;
}

Line criterion4(const std::vector<SeedRun>& runs, const std::vector<ShapTensor>& boosted) {
  int passed = 0;
  std::string detail;
  for (std::size_t s = 0; s < runs.size(); ++s) {
    std::string note;
    passed += subgroups_ok(runs[s], boosted[s], note) ? 1 : 0;
    detail += "seed " + std::to_string(runs[s].seed) + ": " + note + "; ";
  }
  return {passed >= 4, std::to_string(passed) + "/" + std::to_string(runs.size()) + " seeds pass; " + detail};
}

Line criterion5(const std::vector<const ShapTensor*>& tensors) {
  const char* names[3] = {"tree", "boosted", "mlp"};
  bool ok = true;
  std::string detail;
  for (std::size_t m = 0; m < tensors.size(); ++m) {
    const Matrix ma = mean_abs(*tensors[m]);
    const Vector total = ma.rowwise().sum();
    double other = 0.0;
    for (Eigen::Index j = 2; j < total.size(); ++j) other = std::max(other, total(j));
    const double ratio = std::min(total(0), total(1)) / other;
    ok = ok && ratio >= 2.0;
    detail += std::string(m ? ", " : "") + names[m] + " min ratio " + fmt("%.1f", ratio);
  }
  return {ok, detail};
}

Line criterion6(const SeedRun& r, const ShapTensor& t) {
  Rng rng(r.seed, "acceptance.waterfall");
  const Matrix margins = r.boosted.predict_margins(r.data.test.features);
  double tip_err = 0.0;
  for (int draw = 0; draw < 100; ++draw) {
    const auto i = static_cast<std::size_t>(rng.below(t.n));
    for (std::size_t c = 0; c < t.k; ++c) {
      const auto wf = classical_waterfall(t, i, c, PlotSpec{});
      tip_err = std::max(tip_err, std::abs(wf.tip - margins(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c))));
    }
  }

  // k = 1: one class sliced out, one path per sample.
  bool k1_exact = true;
  for (std::size_t c = 0; c < t.k; ++c) {
    ShapTensor one(t.n, t.p, 1);
    for (std::size_t i = 0; i < t.n; ++i)
      for (std::size_t j = 0; j < t.p; ++j) one.at(i, j, 0) = t.at(i, j, c);
    one.base = {t.base[c]};
    one.feature_names = t.feature_names;
    one.class_names = {t.class_names[c]};
    one.sample_ids = t.sample_ids;
    const auto proj = project_paths(build_paths(one, per_sample_grouping(t.n), 0, "sample "), 2);
    PlotSpec spec;
    spec.top_n = t.p;
    for (std::size_t i = 0; i < t.n && k1_exact; ++i) {
      const auto wf = classical_waterfall(one, i, 0, spec);
      const auto& v = proj.paths[i].vertices;
      double running = 0.0;
      for (std::size_t b = 0; b < wf.bars.size(); ++b) {
        running += wf.bars[b].value;
        if (proj.paths[i].features[b] != wf.bars[b].feature || v(static_cast<Eigen::Index>(b + 1), 1) != running)
          k1_exact = false;
      }
      // Features with zero contribution leave no bar but still add a zero segment.
      for (Eigen::Index s = static_cast<Eigen::Index>(wf.bars.size()) + 1; s < v.rows(); ++s)
        if (v(s, 1) != running) k1_exact = false;
    }
  }

  const auto labels = hdbscan(flatten(t), HdbscanParams{15, 0});
  const auto set = build_paths(t, labels.labels);
  double end_err = 0.0;
  for (const auto& path : set.paths)
    for (std::size_t c = 0; c < t.k; ++c) {
      double want = 0.0;
      for (std::size_t i = 0; i < t.n; ++i)
        if (labels.labels[i] == path.group_label)
          want += margins(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) - t.base[c];
      want /= static_cast<double>(path.size);
      end_err = std::max(end_err, std::abs(path.endpoint[c] - want));
    }
  const bool ok = tip_err < 1e-9 && k1_exact && end_err < 1e-9 && !set.paths.empty();
  return {ok, "tip error " + fmt("%.1e", tip_err) + ", k = 1 paths " + (k1_exact ? "exact" : "NOT exact") +
                  ", endpoint error " + fmt("%.1e", end_err) + " over " + std::to_string(set.paths.size()) +
                  " clusters"};
}

Line criterion7(const SeedRun& r, const ShapTensor& t) {
  std::map<std::vector<double>, std::set<std::size_t>> leaves_by_row;
  std::map<std::size_t, std::set<std::vector<double>>> rows_by_leaf;
  for (std::size_t i = 0; i < t.n; ++i) {
    const auto s = t.sample(i);
    std::vector<double> row(s.begin(), s.end());
    const auto x = std::span<const double>(r.data.test.features.row(static_cast<Eigen::Index>(i)).data(), t.p);
    const std::size_t leaf = leaf_id(r.tree, x);
    leaves_by_row[row].insert(leaf);
    rows_by_leaf[leaf].insert(row);
  }
  std::size_t split_leaves = 0, shared_rows = 0;
  for (const auto& [leaf, rows] : rows_by_leaf) split_leaves += rows.size() > 1 ? 1 : 0;
  for (const auto& [row, leaves] : leaves_by_row) shared_rows += leaves.size() > 1 ? 1 : 0;
  const bool ok = leaves_by_row.size() == rows_by_leaf.size() && split_leaves == 0 && shared_rows == 0;
  return {ok, std::to_string(rows_by_leaf.size()) + " reached leaves, " + std::to_string(leaves_by_row.size()) +
                  " distinct SHAP rows; " + std::to_string(split_leaves) + " leaves hold several distinct rows"};
}

Line criterion8() {
  const auto t0 = Clock::now();
  const int status = std::system(HDSHAP_PROPERTIES " > /dev/null");
  const double secs = seconds_since(t0);
  const bool ok = status == 0 && secs < 120.0;
  return {ok, std::string("standalone property binary ") + (status == 0 ? "green" : "RED") + " in " + fmt("%.1f s", secs)};
}

Line criterion9() {
  const std::string dir = HDSHAP_TEST_DATA;
  const Dataset all = load_idx_images(dir + "/mnist-1k-images.idx3-ubyte", dir + "/mnist-1k-labels.idx1-ubyte");
  const std::vector<int> digits = {3, 5, 8};
  const Dataset three = filter_classes(all, digits);
  const auto parts = split(three, SplitSpec{0.7, true, 1});
  const auto scaled = min_max_scale(parts.train);
  const Dataset test = apply_scaling(parts.test, scaled.meta);
  const auto model = train_boosted(scaled.dataset, BoostParams{});
  const double acc = evaluate(model, test).accuracy;
  const auto t = tree_shap(model, test.features);
  const bool finite = std::all_of(t.values.begin(), t.values.end(), [](double v) { return std::isfinite(v); });
  const double err = max_additivity_error(t, model.predict_margins(test.features));
  const bool shape = t.n == test.n_samples() && t.p == 784 && t.k == 3;
  const bool ok = all.n_samples() == 1000 && acc >= 0.85 && finite && shape && err < 1e-9;
  return {ok, "loaded " + std::to_string(all.n_samples()) + " images; digits 3/5/8 boosted accuracy " +
                  fmt("%.3f", acc) + "; tensor " + std::to_string(t.n) + "x784x3, additivity " + fmt("%.1e", err)};
}

}  // namespace

int main() {
  std::vector<Line> lines(9);
  const char* titles[9] = {"accuracy band over 5 seeds",
                           "SHAP oracle equivalence",
                           "local accuracy on the test set",
                           "subgroup discovery",
                           "features 0 and 1 dominate",
                           "waterfall identities",
                           "decision-tree SHAP rows are leaf-determined",
                           "property suites standalone",
                           "MNIST IDX smoke test"};
  auto guard = [&](int idx, const std::function<Line()>& f) {
    try {
      lines[static_cast<std::size_t>(idx)] = f();
    } catch (const std::exception& e) {
      lines[static_cast<std::size_t>(idx)] = {false, std::string("threw: ") + e.what()};
    }
  };

  const auto t0 = Clock::now();
  std::vector<SeedRun> runs;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) runs.push_back(run_seed(seed));
  const double train_secs = seconds_since(t0);
  guard(0, [&] { return criterion1(runs, train_secs); });

  std::vector<ShapTensor> boosted;
  for (const auto& r : runs) {
    boosted.push_back(tree_shap(r.boosted, r.data.test.features));
    boosted.back().describe(r.data.test);
  }
  const SeedRun& main_run = runs.front();
  ShapTensor tree_t = tree_shap(main_run.tree, main_run.data.test.features);
  tree_t.describe(main_run.data.test);

  guard(1, criterion2);
  guard(2, [&] { return criterion3(main_run, tree_t, boosted.front()); });
  guard(3, [&] { return criterion4(runs, boosted); });
  guard(4, [&] {
    const ShapTensor mlp_t = explain_mlp(main_run);
    return criterion5({&tree_t, &boosted.front(), &mlp_t});
  });
  guard(5, [&] { return criterion6(main_run, boosted.front()); });
  guard(6, [&] { return criterion7(main_run, tree_t); });
  guard(7, criterion8);
  guard(8, criterion9);

  int failed = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::printf("%s  %zu. %s: %s\n", lines[i].ok ? "PASS" : "FAIL", i + 1, titles[i], lines[i].detail.c_str());
    failed += lines[i].ok ? 0 : 1;
  }
  std::printf("total runtime %.1f s\n", seconds_since(t0));
  return failed == 0 ? 0 : 1;
}
