#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "hdshap/shap.hpp"
#include "json.hpp"

namespace hdshap {

using nlohmann::json;

ShapTensor::ShapTensor(std::size_t n_samples, std::size_t n_features, std::size_t n_classes)
    : n(n_samples), p(n_features), k(n_classes), values(n_samples * n_features * n_classes, 0.0),
      base(n_classes, 0.0) {}

std::vector<double> ShapTensor::row_sum(std::size_t i) const {
  std::vector<double> out(k, 0.0);
  const auto s = sample(i);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t c = 0; c < k; ++c) out[c] += s[j * k + c];
  return out;
}

void ShapTensor::describe(const Dataset& ds) {
  require(ds.n_samples() == n && ds.n_features() == p, "dataset shape does not match tensor");
  sample_ids = ds.sample_ids;
  feature_names = ds.feature_names;
  class_names = ds.class_names;
}

Background make_background(const Dataset& train, std::size_t max_rows, std::uint64_t seed) {
  require(max_rows >= 1, "background needs at least one row");
  Background bg;
  const std::size_t n = train.n_samples();
  if (n <= max_rows) {
    bg.rows = train.features;
    bg.id = "all:" + std::to_string(n);
    return bg;
  }
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng(seed, "background");
  rng.shuffle(rows);
  rows.resize(max_rows);
  std::sort(rows.begin(), rows.end());
  bg.rows.resize(static_cast<Eigen::Index>(max_rows), train.features.cols());
  for (std::size_t r = 0; r < max_rows; ++r)
    bg.rows.row(static_cast<Eigen::Index>(r)) = train.features.row(static_cast<Eigen::Index>(rows[r]));
  bg.id = "subsample:" + std::to_string(max_rows) + ":seed=" + std::to_string(seed);
  return bg;
}

Matrix flatten(const ShapTensor& t) {
  // The storage order already is the flattened layout.
  return Eigen::Map<const Matrix>(t.values.data(), static_cast<Eigen::Index>(t.n),
                                  static_cast<Eigen::Index>(t.p * t.k));
}

ShapTensor unflatten(const Matrix& flat, std::size_t p, std::size_t k) {
  require(static_cast<std::size_t>(flat.cols()) == p * k, "flattened width must equal p * k");
  ShapTensor t(static_cast<std::size_t>(flat.rows()), p, k);
  Eigen::Map<Matrix>(t.values.data(), flat.rows(), flat.cols()) = flat;
  return t;
}

Matrix mean_abs(const ShapTensor& t) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(t.p), static_cast<Eigen::Index>(t.k));
  if (t.n == 0) return out;
  for (std::size_t i = 0; i < t.n; ++i)
    for (std::size_t j = 0; j < t.p; ++j)
      for (std::size_t c = 0; c < t.k; ++c)
        out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) += std::abs(t.at(i, j, c));
  return out / static_cast<double>(t.n);
}

std::vector<ClusterMean> cluster_mean(const ShapTensor& t, std::span<const int> labels) {
  require(labels.size() == t.n, "labeling length does not match tensor");
  std::map<int, ClusterMean> acc;
  for (std::size_t i = 0; i < t.n; ++i) {
    if (labels[i] < 0) continue;
    auto [it, inserted] = acc.try_emplace(labels[i]);
    ClusterMean& cm = it->second;
    if (inserted) {
      cm.label = labels[i];
      cm.mean = Matrix::Zero(static_cast<Eigen::Index>(t.p), static_cast<Eigen::Index>(t.k));
    }
    ++cm.size;
    cm.mean += Eigen::Map<const Matrix>(t.sample(i).data(), static_cast<Eigen::Index>(t.p),
                                        static_cast<Eigen::Index>(t.k));
  }
  require(!acc.empty(), "labeling has no non-noise cluster");
  std::vector<ClusterMean> out;
  for (auto& [label, cm] : acc) {
    cm.mean /= static_cast<double>(cm.size);
    out.push_back(std::move(cm));
  }
  return out;
}

double max_additivity_error(const ShapTensor& t, const Matrix& margins) {
  require(static_cast<std::size_t>(margins.rows()) == t.n &&
              static_cast<std::size_t>(margins.cols()) == t.k,
          "margin matrix shape does not match tensor");
  double worst = 0.0;
  for (std::size_t i = 0; i < t.n; ++i) {
    const auto s = t.row_sum(i);
    for (std::size_t c = 0; c < t.k; ++c)
      worst = std::max(worst, std::abs(s[c] - (margins(static_cast<Eigen::Index>(i),
                                                         static_cast<Eigen::Index>(c)) - t.base[c])));
  }
  return worst;
}

void save_tensor(const ShapTensor& t, const std::string& manifest_path, const std::string& csv_path) {
  std::string csv = "sample_id";
  for (std::size_t j = 0; j < t.p; ++j)
    for (std::size_t c = 0; c < t.k; ++c) {
      csv += ',';
      csv += (j < t.feature_names.size() ? t.feature_names[j] : "f" + std::to_string(j)) + ":" +
             (c < t.class_names.size() ? t.class_names[c] : "c" + std::to_string(c));
    }
  csv += '\n';
  for (std::size_t i = 0; i < t.n; ++i) {
    csv += std::to_string(i < t.sample_ids.size() ? t.sample_ids[i] : static_cast<std::int64_t>(i));
    for (double v : t.sample(i)) {
      csv += ',';
      csv += format_double(v);
    }
    csv += '\n';
  }
  write_text_file(csv_path, csv);

  json j;
  j["schema_version"] = 1;
  j["kind"] = "shap_tensor";
  j["layout"] = "feature-major: column = feature * n_classes + class";
  j["csv"] = std::filesystem::path(csv_path).filename().string();
  j["n_samples"] = t.n;
  j["n_features"] = t.p;
  j["n_classes"] = t.k;
  j["base"] = t.base;
  j["feature_names"] = t.feature_names;
  j["class_names"] = t.class_names;
  j["provenance"] = {{"model_id", t.model_id}, {"background_id", t.background_id}, {"method", t.method}};
  write_text_file(manifest_path, j.dump(1) + "\n");
}

ShapTensor load_tensor(const std::string& manifest_path) {
  json j;
  try {
    j = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "corrupt tensor manifest " + manifest_path + ": " + e.what());
  }
  require(j.value("kind", "") == "shap_tensor", "not a SHAP tensor manifest: " + manifest_path,
          ErrorCode::kSchemaMismatch);
  require(j.value("schema_version", 0) == 1, "unsupported tensor schema version",
          ErrorCode::kSchemaMismatch);
  try {
    ShapTensor t(j.at("n_samples").get<std::size_t>(), j.at("n_features").get<std::size_t>(),
                 j.at("n_classes").get<std::size_t>());
    t.base = j.at("base").get<std::vector<double>>();
    t.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    t.class_names = j.at("class_names").get<std::vector<std::string>>();
    t.model_id = j["provenance"].value("model_id", "");
    t.background_id = j["provenance"].value("background_id", "");
    t.method = j["provenance"].value("method", "");
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    const std::string csv = read_text_file((dir / j.at("csv").get<std::string>()).string());
    std::size_t pos = csv.find('\n');
    require(pos != std::string::npos, "tensor csv has no header", ErrorCode::kParse);
    ++pos;
    for (std::size_t i = 0; i < t.n; ++i) {
      const auto eol = csv.find('\n', pos);
      require(eol != std::string::npos, "tensor csv has too few rows", ErrorCode::kParse);
      const std::string line = csv.substr(pos, eol - pos);
      pos = eol + 1;
      std::size_t start = 0;
      std::vector<std::string> cells;
      while (true) {
        const auto comma = line.find(',', start);
        cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      require(cells.size() == 1 + t.p * t.k, "tensor csv row has wrong width", ErrorCode::kParse);
      t.sample_ids.push_back(std::stoll(cells[0]));
      auto out = t.sample(i);
      for (std::size_t q = 0; q < t.p * t.k; ++q) out[q] = std::stod(cells[q + 1]);
    }
    return t;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "corrupt tensor manifest " + manifest_path + ": " + e.what());
  } catch (const std::logic_error& e) {
    fail(ErrorCode::kParse, std::string("corrupt tensor csv: ") + e.what());
  }
}

}  // namespace hdshap
