#include "doctest.h"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iterator>
#include <fstream>
#include <set>
#include <string>

#include "hdshap/data.hpp"

using namespace hdshap;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("hdshap_test_data_" + name)).string();
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

// Direct softmax over (f1, f2, 0) with no overflow guard.
std::array<double, 3> naive_probabilities(const std::vector<double>& x, const Matrix& beta) {
  double f1 = 4 * x[0] * x[1] + 4 * x[0] + 4 * x[1];
  double f2 = 4 * x[0] * x[1] - 4 * x[0] - 4 * x[1];
  for (std::size_t i = 2; i < x.size(); ++i) {
    f1 += beta(0, static_cast<Eigen::Index>(i - 2)) * x[i];
    f2 += beta(1, static_cast<Eigen::Index>(i - 2)) * x[i];
  }
  const double z = std::exp(f1) + std::exp(f2) + 1.0;
  return {std::exp(f1) / z, std::exp(f2) / z, 1.0 / z};
}

}  // namespace

TEST_CASE("simulation probabilities match the direct softmax") {
  Rng rng(11);
  Matrix beta(2, 3);
  beta << 0.5, -1.0, 0.25, 2.0, 0.0, -0.75;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(5);
    for (auto& v : x) v = rng.uniform(-2.0, 2.0);
    const auto got = simulation_probabilities(x, beta);
    const auto want = naive_probabilities(x, beta);
    for (int c = 0; c < 3; ++c) CHECK(got[c] == doctest::Approx(want[c]).epsilon(1e-12));
    CHECK(got[0] + got[1] + got[2] == doctest::Approx(1.0));
  }
  // Far from the origin the naive form overflows; the stable one must not.
  std::vector<double> far = {5.0, 5.0, 5.0, 5.0, 5.0};
  const auto p = simulation_probabilities(far, beta);
  for (double v : p) CHECK(std::isfinite(v));
  CHECK(p[0] == doctest::Approx(1.0));
}

TEST_CASE("simulated dataset shape, ranges, groups and determinism") {
  SimulationSpec spec;
  spec.n_samples = 600;
  spec.seed = 3;
  const Dataset a = simulate(spec);
  const Dataset b = simulate(spec);
  CHECK(a.n_samples() == 600);
  CHECK(a.n_features() == 10);
  CHECK(a.n_classes() == 3);
  CHECK(a.class_names == std::vector<std::string>{"1", "2", "3"});
  CHECK(a.features.cwiseAbs().maxCoeff() <= 5.0);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  REQUIRE(a.groups.has_value());
  for (std::size_t i = 0; i < a.n_samples(); ++i) {
    const double x0 = a.features(static_cast<Eigen::Index>(i), 0);
    const double x1 = a.features(static_cast<Eigen::Index>(i), 1);
    const int want = x0 >= 0 && x1 >= 0 ? 0 : (x0 < 0 && x1 < 0 ? 1 : (x0 >= 0 ? 2 : 3));
    CHECK((*a.groups)[i] == want);
  }
  spec.seed = 4;
  CHECK(simulate(spec).labels != a.labels);
  CHECK(resolve_noise_coefficients(spec).cols() == 8);
}

TEST_CASE("simulated labels follow the model probabilities") {
  SimulationSpec spec;
  spec.n_samples = 20000;
  spec.n_features = 4;
  spec.domain_half_width = 1.0;
  spec.noise_coefficients = Matrix::Zero(2, 2);
  spec.seed = 9;
  const Dataset ds = simulate(spec);
  std::array<double, 3> expected{0, 0, 0}, observed{0, 0, 0};
  for (std::size_t i = 0; i < ds.n_samples(); ++i) {
    std::vector<double> x(ds.features.row(static_cast<Eigen::Index>(i)).data(),
                          ds.features.row(static_cast<Eigen::Index>(i)).data() + 4);
    const auto p = naive_probabilities(x, *spec.noise_coefficients);
    for (int c = 0; c < 3; ++c) expected[c] += p[c];
    observed[static_cast<std::size_t>(ds.labels[i])] += 1.0;
  }
  // Binomial standard error is below 0.004 here.
  for (int c = 0; c < 3; ++c) CHECK(std::abs(observed[c] - expected[c]) / 20000.0 < 0.015);
}

TEST_CASE("simulation rejects bad specs") {
  SimulationSpec spec;
  spec.n_features = 1;
  CHECK(code_of([&] { simulate(spec); }) == ErrorCode::kInvalidSpec);
  spec.n_features = 4;
  spec.noise_coefficients = Matrix::Zero(2, 3);
  CHECK(code_of([&] { simulate(spec); }) == ErrorCode::kInvalidSpec);
}

TEST_CASE("csv parsing, dropping and errors") {
  const std::string text =
      "a,b,y\n"
      "1.5,2,cat\n"
      "3,,dog\n"
      "\"4\",-1e-3,dog\n"
      "\n"
      "0,0,cat\r\n";
  const auto r = parse_csv(text, "y");
  CHECK(r.dropped_rows == 1);
  CHECK(r.dataset.n_samples() == 3);
  CHECK(r.dataset.feature_names == std::vector<std::string>{"a", "b"});
  CHECK(r.dataset.class_names == std::vector<std::string>{"cat", "dog"});
  CHECK(r.dataset.labels == std::vector<int>{0, 1, 0});
  CHECK(r.dataset.features(1, 1) == -1e-3);

  CHECK(code_of([] { parse_csv("", "y"); }) == ErrorCode::kParse);
  CHECK(code_of([] { parse_csv("a,b\n1,2\n", "y"); }) == ErrorCode::kParse);
  CHECK(code_of([] { parse_csv("a,y\nx,1\n", "y"); }) == ErrorCode::kParse);
  CHECK(code_of([] { parse_csv("a,y\n1,2,3\n", "y"); }) == ErrorCode::kParse);
  CHECK(code_of([] { parse_csv("a,y\n,1\n", "y"); }) == ErrorCode::kParse);
}

TEST_CASE("csv round trip is exact") {
  SimulationSpec spec;
  spec.n_samples = 50;
  spec.seed = 1;
  const Dataset ds = simulate(spec);
  const auto back = parse_csv(to_csv(ds, "label"), "label").dataset;
  CHECK(back.features == ds.features);
  for (std::size_t i = 0; i < ds.n_samples(); ++i)
    CHECK(back.class_names[static_cast<std::size_t>(back.labels[i])] ==
          ds.class_names[static_cast<std::size_t>(ds.labels[i])]);
}

TEST_CASE("idx fixture loads 1000 digits") {
  const std::string dir = HDSHAP_TEST_DATA;
  const Dataset ds = load_idx_images(dir + "/mnist-1k-images.idx3-ubyte", dir + "/mnist-1k-labels.idx1-ubyte");
  CHECK(ds.n_samples() == 1000);
  CHECK(ds.n_features() == 784);
  CHECK(ds.n_classes() == 10);
  CHECK(ds.features.minCoeff() >= 0.0);
  CHECK(ds.features.maxCoeff() <= 255.0);
  for (auto c : ds.class_counts()) CHECK(c == 100);
  CHECK(ds.feature_names[29] == "px_1_1");
}

TEST_CASE("idx errors are parse errors") {
  const std::string dir = HDSHAP_TEST_DATA;
  const std::string labels = dir + "/mnist-1k-labels.idx1-ubyte";
  const std::string images = dir + "/mnist-1k-images.idx3-ubyte";
  // Labels file given as images: wrong magic.
  CHECK(code_of([&] { load_idx_images(labels, labels); }) == ErrorCode::kParse);

  std::ifstream in(images, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string truncated = tmp_path("trunc.idx3");
  {
    std::ofstream out(truncated, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
  }
  CHECK(code_of([&] { load_idx_images(truncated, labels); }) == ErrorCode::kParse);

  std::string fewer = bytes;
  fewer[7] = static_cast<char>(static_cast<unsigned char>(fewer[7]) - 1);  // count 999
  const std::string mismatch = tmp_path("mismatch.idx3");
  {
    std::ofstream out(mismatch, std::ios::binary);
    out.write(fewer.data(), static_cast<std::streamsize>(fewer.size()));
  }
  CHECK(code_of([&] { load_idx_images(mismatch, labels); }) == ErrorCode::kParse);
  CHECK(code_of([&] { load_idx_images(tmp_path("absent"), labels); }) == ErrorCode::kIo);
  std::remove(truncated.c_str());
  std::remove(mismatch.c_str());
}

TEST_CASE("min-max scaling and its inverse") {
  Dataset ds;
  ds.features.resize(3, 2);
  ds.features << 1, 7, 3, 7, 5, 7;
  ds.labels = {0, 1, 0};
  ds.feature_names = {"u", "v"};
  ds.class_names = {"a", "b"};
  ds.sample_ids = {0, 1, 2};
  const auto s = min_max_scale(ds);
  CHECK(s.dataset.features(0, 0) == 0.0);
  CHECK(s.dataset.features(1, 0) == 0.5);
  CHECK(s.dataset.features(2, 0) == 1.0);
  CHECK(s.dataset.features.col(1).isZero());
  CHECK(s.meta.range[1] == 1.0);
  const auto back = inverse_scale(s.dataset, s.meta);
  CHECK((back.features - ds.features).cwiseAbs().maxCoeff() < 1e-12);

  Dataset other = ds;
  other.features(0, 0) = 9.0;
  CHECK(apply_scaling(other, s.meta).features(0, 0) == 2.0);
}

TEST_CASE("stratified split keeps class proportions and partitions rows") {
  SimulationSpec spec;
  spec.n_samples = 1500;
  spec.seed = 5;
  const Dataset ds = simulate(spec);
  const auto parts = split(ds, SplitSpec{0.7, true, 5});
  CHECK(parts.train.n_samples() == 1050);
  CHECK(parts.test.n_samples() == 450);
  const auto all = ds.class_counts();
  const auto tr = parts.train.class_counts();
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(std::abs(static_cast<double>(tr[c]) - 0.7 * static_cast<double>(all[c])) <= 1.0);
  std::set<std::int64_t> ids(parts.train.sample_ids.begin(), parts.train.sample_ids.end());
  for (auto id : parts.test.sample_ids) CHECK(ids.insert(id).second);
  CHECK(ids.size() == 1500);
  REQUIRE(parts.test.groups.has_value());

  const auto again = split(ds, SplitSpec{0.7, true, 5});
  CHECK(again.test.sample_ids == parts.test.sample_ids);
  const auto plain = split(ds, SplitSpec{0.7, false, 5});
  CHECK(plain.train.n_samples() == 1050);
}

TEST_CASE("split and filter reject degenerate input") {
  Dataset ds;
  ds.features = Matrix::Zero(3, 1);
  ds.labels = {0, 0, 1};
  ds.feature_names = {"f"};
  ds.class_names = {"a", "b"};
  ds.sample_ids = {0, 1, 2};
  CHECK(code_of([&] { split(ds, SplitSpec{0.7, true, 0}); }) == ErrorCode::kInvalidSpec);
  CHECK(code_of([&] { split(ds, SplitSpec{1.0, false, 0}); }) == ErrorCode::kInvalidSpec);
  const std::vector<int> one = {0};
  CHECK(code_of([&] { filter_classes(ds, one); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("filter_classes re-encodes in the given order") {
  SimulationSpec spec;
  spec.n_samples = 200;
  spec.seed = 2;
  const Dataset ds = simulate(spec);
  const std::vector<int> keep = {2, 0};
  const Dataset f = filter_classes(ds, keep);
  CHECK(f.class_names == std::vector<std::string>{"3", "1"});
  const auto counts = ds.class_counts();
  CHECK(f.n_samples() == counts[0] + counts[2]);
  for (std::size_t i = 0; i < f.n_samples(); ++i) {
    const auto src = static_cast<std::size_t>(f.sample_ids[i]);
    CHECK(f.labels[i] == (ds.labels[src] == 2 ? 0 : 1));
  }
}

TEST_CASE("dataset artifact round trip keeps ids, groups and scaling") {
  SimulationSpec spec;
  spec.n_samples = 120;
  spec.seed = 8;
  const auto parts = split(simulate(spec), SplitSpec{0.5, true, 8});
  const auto scaled = min_max_scale(parts.test).dataset;
  const std::string csv = tmp_path("ds.csv"), manifest = tmp_path("ds.json");
  save_dataset(scaled, csv, manifest);
  const Dataset back = load_dataset(manifest);
  CHECK(back.features == scaled.features);
  CHECK(back.labels == scaled.labels);
  CHECK(back.sample_ids == scaled.sample_ids);
  CHECK(back.groups == scaled.groups);
  REQUIRE(back.scaling.has_value());
  CHECK(back.scaling->min == scaled.scaling->min);
  CHECK(back.scaling->range == scaled.scaling->range);
  std::remove(csv.c_str());
  std::remove(manifest.c_str());
}
