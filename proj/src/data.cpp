#include "hdshap/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <unordered_map>

#include "json.hpp"

namespace hdshap {

using nlohmann::json;

void Dataset::validate() const {
  const std::size_t n = n_samples();
  const std::size_t p = n_features();
  require(n >= 1, "dataset must contain at least one sample");
  require(p >= 1, "dataset must contain at least one feature");
  require(n_classes() >= 2, "dataset must declare at least two classes");
  require(labels.size() == n, "label count does not match sample count");
  require(feature_names.size() == p, "feature name count does not match feature count");
  require(sample_ids.size() == n, "sample id count does not match sample count");
  if (groups) require(groups->size() == n, "group count does not match sample count");
  for (int y : labels)
    require(y >= 0 && static_cast<std::size_t>(y) < n_classes(), "label out of range");
  std::set<std::string> seen(feature_names.begin(), feature_names.end());
  require(seen.size() == feature_names.size(), "duplicate feature names");
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(n_classes(), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

// ---------------------------------------------------------------------------
// Simulation

Matrix resolve_noise_coefficients(const SimulationSpec& spec) {
  require(spec.n_features >= 2, "simulation needs at least two features", ErrorCode::kInvalidSpec);
  const auto extra = static_cast<Eigen::Index>(spec.n_features - 2);
  if (spec.noise_coefficients) {
    const Matrix& beta = *spec.noise_coefficients;
    require(beta.rows() == 2 && beta.cols() == extra,
            "noise coefficients must be 2 x (n_features - 2)", ErrorCode::kInvalidSpec);
    return beta;
  }
  Rng rng(spec.seed, "simulate.beta");
  Matrix beta(2, extra);
  for (Eigen::Index j = 0; j < 2; ++j)
    for (Eigen::Index i = 0; i < extra; ++i) beta(j, i) = rng.normal();
  return beta;
}

std::array<double, 3> simulation_probabilities(std::span<const double> x,
                                               const Matrix& beta) {
  const double x1 = x[0];
  const double x2 = x[1];
  double f1 = 4.0 * x1 * x2 + 4.0 * x1 + 4.0 * x2;
  double f2 = 4.0 * x1 * x2 - 4.0 * x1 - 4.0 * x2;
  for (Eigen::Index i = 0; i < beta.cols(); ++i) {
    f1 += beta(0, i) * x[static_cast<std::size_t>(i) + 2];
    f2 += beta(1, i) * x[static_cast<std::size_t>(i) + 2];
  }
  // exp(f1) : exp(f2) : 1, normalized with the max subtracted.
  const double m = std::max({f1, f2, 0.0});
  const double e1 = std::exp(f1 - m);
  const double e2 = std::exp(f2 - m);
  const double e3 = std::exp(-m);
  const double z = e1 + e2 + e3;
  return {e1 / z, e2 / z, e3 / z};
}

int quadrant_group(double x0, double x1) {
  const bool a = x0 >= 0.0;
  const bool b = x1 >= 0.0;
  if (a && b) return 0;
  if (!a && !b) return 1;
  return a ? 2 : 3;
}

Dataset simulate(const SimulationSpec& spec) {
  require(spec.n_features >= 2, "simulation needs at least two features", ErrorCode::kInvalidSpec);
  require(spec.n_samples >= 1, "simulation needs at least one sample", ErrorCode::kInvalidSpec);
  require(spec.domain_half_width > 0.0, "domain half width must be positive",
          ErrorCode::kInvalidSpec);
  const Matrix beta = resolve_noise_coefficients(spec);
  const std::size_t n = spec.n_samples;
  const std::size_t p = spec.n_features;
  const double w = spec.domain_half_width;

  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  Rng feature_rng(spec.seed, "simulate.features");
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i)
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j)
      ds.features(i, j) = feature_rng.uniform(-w, w);

  Rng label_rng(spec.seed, "simulate.labels");
  ds.labels.resize(n);
  std::vector<int> groups(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = std::span<const double>(ds.features.row(static_cast<Eigen::Index>(i)).data(), p);
    const auto prob = simulation_probabilities(row, beta);
    const double u = label_rng.uniform();
    ds.labels[i] = u < prob[0] ? 0 : (u < prob[0] + prob[1] ? 1 : 2);
    groups[i] = quadrant_group(row[0], row[1]);
  }
  for (std::size_t j = 0; j < p; ++j) ds.feature_names.push_back("x" + std::to_string(j));
  ds.class_names = {"1", "2", "3"};
  ds.sample_ids.resize(n);
  std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), 0);
  ds.groups = std::move(groups);
  return ds;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::optional<double> parse_number(const std::string& cell) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable read_table(const std::string& text) {
  CsvTable table;
  std::size_t pos = 0;
  bool first = true;
  if (text.rfind("\xEF\xBB\xBF", 0) == 0) pos = 3;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    auto cells = split_csv_line(line);
    for (auto& c : cells) c = trim(std::move(c));
    if (first) {
      table.header = std::move(cells);
      first = false;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  require(!first, "csv has no header row", ErrorCode::kParse);
  return table;
}

// Builds a dataset from a table; `class_order` fixes the class encoding when
// given, otherwise classes are factor-encoded in first-appearance order.
CsvLoadResult table_to_dataset(const CsvTable& table, const std::string& target_column,
                               const std::vector<std::string>* class_order) {
  const auto target_it = std::find(table.header.begin(), table.header.end(), target_column);
  require(target_it != table.header.end(), "target column not found: " + target_column,
          ErrorCode::kParse);
  const auto target = static_cast<std::size_t>(target_it - table.header.begin());

  CsvLoadResult out;
  Dataset& ds = out.dataset;
  for (std::size_t c = 0; c < table.header.size(); ++c)
    if (c != target) ds.feature_names.push_back(table.header[c]);
  const std::size_t p = ds.feature_names.size();
  require(p >= 1, "csv has no feature columns", ErrorCode::kParse);

  std::map<std::string, int> class_index;
  if (class_order) {
    ds.class_names = *class_order;
    for (std::size_t k = 0; k < class_order->size(); ++k)
      class_index[(*class_order)[k]] = static_cast<int>(k);
  }

  std::vector<double> values;
  std::size_t line_no = 1;
  for (const auto& row : table.rows) {
    ++line_no;
    require(row.size() == table.header.size(),
            "csv row " + std::to_string(line_no) + " has " + std::to_string(row.size()) +
                " cells, expected " + std::to_string(table.header.size()),
            ErrorCode::kParse);
    bool missing = std::any_of(row.begin(), row.end(), [](const std::string& c) { return c.empty(); });
    if (missing) {
      ++out.dropped_rows;
      continue;
    }
    std::vector<double> parsed;
    parsed.reserve(p);
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == target) continue;
      auto v = parse_number(row[c]);
      require(v.has_value(),
              "non-numeric feature cell '" + row[c] + "' in column " + table.header[c] +
                  " at line " + std::to_string(line_no),
              ErrorCode::kParse);
      parsed.push_back(*v);
    }
    const std::string& label = row[target];
    auto it = class_index.find(label);
    if (it == class_index.end()) {
      require(class_order == nullptr, "unknown class label: " + label, ErrorCode::kParse);
      it = class_index.emplace(label, static_cast<int>(ds.class_names.size())).first;
      ds.class_names.push_back(label);
    }
    ds.labels.push_back(it->second);
    values.insert(values.end(), parsed.begin(), parsed.end());
  }
  const std::size_t n = ds.labels.size();
  require(n >= 1, "no complete rows remain after dropping rows with missing cells",
          ErrorCode::kParse);
  ds.features = Eigen::Map<Matrix>(values.data(), static_cast<Eigen::Index>(n),
                                   static_cast<Eigen::Index>(p));
  ds.sample_ids.resize(n);
  std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), 0);
  return out;
}

}  // namespace

CsvLoadResult parse_csv(const std::string& text, const std::string& target_column) {
  auto result = table_to_dataset(read_table(text), target_column, nullptr);
  result.dataset.validate();
  return result;
}

CsvLoadResult load_csv(const std::string& path, const std::string& target_column) {
  return parse_csv(read_text_file(path), target_column);
}

std::string to_csv(const Dataset& ds, const std::string& target_column) {
  std::string out;
  for (const auto& name : ds.feature_names) out += name + ",";
  out += target_column + "\n";
  for (Eigen::Index i = 0; i < ds.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.features.cols(); ++j) {
      out += format_double(ds.features(i, j));
      out += ',';
    }
    out += ds.class_names[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])];
    out += '\n';
  }
  return out;
}

void write_csv(const Dataset& ds, const std::string& path, const std::string& target_column) {
  write_text_file(path, to_csv(ds, target_column));
}

// ---------------------------------------------------------------------------
// IDX (MNIST layout, big-endian headers)

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  require(offset + 4 <= bytes.size(), "truncated idx header", ErrorCode::kParse);
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i)
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

}  // namespace

Dataset load_idx_images(const std::string& images_path, const std::string& labels_path) {
  const std::string images = read_text_file(images_path);
  const std::string labels = read_text_file(labels_path);
  require(read_be32(images, 0) == 0x00000803, "bad magic number in idx image file",
          ErrorCode::kParse);
  require(read_be32(labels, 0) == 0x00000801, "bad magic number in idx label file",
          ErrorCode::kParse);
  const std::size_t n = read_be32(images, 4);
  const std::size_t rows = read_be32(images, 8);
  const std::size_t cols = read_be32(images, 12);
  const std::size_t n_labels = read_be32(labels, 4);
  require(n == n_labels,
          "image/label count mismatch: " + std::to_string(n) + " vs " + std::to_string(n_labels),
          ErrorCode::kParse);
  const std::size_t p = rows * cols;
  require(images.size() >= 16 + n * p, "truncated idx image payload", ErrorCode::kParse);
  require(labels.size() >= 8 + n, "truncated idx label payload", ErrorCode::kParse);

  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j)
      ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          static_cast<unsigned char>(images[16 + i * p + j]);

  std::set<int> distinct;
  std::vector<int> raw(n);
  for (std::size_t i = 0; i < n; ++i) {
    raw[i] = static_cast<unsigned char>(labels[8 + i]);
    distinct.insert(raw[i]);
  }
  std::map<int, int> code;
  for (int v : distinct) {
    code[v] = static_cast<int>(ds.class_names.size());
    ds.class_names.push_back(std::to_string(v));
  }
  // A single-digit file still yields a valid two-class layout only if the
  // caller filters; keep the declared classes as seen.
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = code[raw[i]];
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      ds.feature_names.push_back("px_" + std::to_string(r) + "_" + std::to_string(c));
  ds.sample_ids.resize(n);
  std::iota(ds.sample_ids.begin(), ds.sample_ids.end(), 0);
  return ds;
}

// ---------------------------------------------------------------------------
// Scaling

ScaledDataset min_max_scale(const Dataset& ds) {
  ScalingMeta meta;
  const auto p = ds.features.cols();
  meta.min.resize(static_cast<std::size_t>(p));
  meta.range.resize(static_cast<std::size_t>(p));
  for (Eigen::Index j = 0; j < p; ++j) {
    const double lo = ds.features.col(j).minCoeff();
    const double hi = ds.features.col(j).maxCoeff();
    meta.min[static_cast<std::size_t>(j)] = lo;
    meta.range[static_cast<std::size_t>(j)] = hi > lo ? hi - lo : 1.0;
  }
  ScaledDataset out{apply_scaling(ds, meta), meta};
  // Rounding can push (hi - lo) / (hi - lo) a hair past 1.
  out.dataset.features = out.dataset.features.cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

Dataset apply_scaling(const Dataset& ds, const ScalingMeta& meta) {
  require(meta.min.size() == ds.n_features() && meta.range.size() == ds.n_features(),
          "scaling metadata does not match feature count");
  Dataset out = ds;
  for (Eigen::Index j = 0; j < out.features.cols(); ++j) {
    const auto sj = static_cast<std::size_t>(j);
    out.features.col(j) = (out.features.col(j).array() - meta.min[sj]) / meta.range[sj];
  }
  out.scaling = meta;
  return out;
}

Dataset inverse_scale(const Dataset& ds, const ScalingMeta& meta) {
  require(meta.min.size() == ds.n_features() && meta.range.size() == ds.n_features(),
          "scaling metadata does not match feature count");
  Dataset out = ds;
  for (Eigen::Index j = 0; j < out.features.cols(); ++j) {
    const auto sj = static_cast<std::size_t>(j);
    out.features.col(j) = out.features.col(j).array() * meta.range[sj] + meta.min[sj];
  }
  out.scaling.reset();
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and subsetting

Dataset subset_rows(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
  out.feature_names = ds.feature_names;
  out.class_names = ds.class_names;
  out.scaling = ds.scaling;
  if (ds.groups) out.groups.emplace();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::size_t i = rows[r];
    require(i < ds.n_samples(), "row index out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = ds.features.row(static_cast<Eigen::Index>(i));
    out.labels.push_back(ds.labels[i]);
    out.sample_ids.push_back(ds.sample_ids[i]);
    if (ds.groups) out.groups->push_back((*ds.groups)[i]);
  }
  return out;
}

TrainTestSplit split(const Dataset& ds, const SplitSpec& spec) {
  require(spec.train_fraction > 0.0 && spec.train_fraction < 1.0,
          "train fraction must lie in (0, 1)", ErrorCode::kInvalidSpec);
  const std::size_t n = ds.n_samples();
  const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
  Rng rng(spec.seed, "split");
  std::vector<char> in_train(n, 0);

  if (!spec.stratified) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t r = 0; r < n_train; ++r) in_train[order[r]] = 1;
  } else {
    const std::size_t k = ds.n_classes();
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (std::size_t c = 0; c < k; ++c)
      require(members[c].empty() || members[c].size() >= 2,
              "stratified split needs at least two samples in class " + ds.class_names[c],
              ErrorCode::kInvalidSpec);
    // Largest-remainder allocation: floors first, then the biggest fractional
    // parts (lowest class index on ties) until the total is reached.
    std::vector<std::size_t> quota(k);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double exact = spec.train_fraction * static_cast<double>(members[c].size());
      quota[c] = static_cast<std::size_t>(std::floor(exact));
      assigned += quota[c];
      remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n_train && r < remainders.size(); ++r) {
      ++quota[remainders[r].second];
      ++assigned;
    }
    for (std::size_t c = 0; c < k; ++c) {
      rng.shuffle(members[c]);
      for (std::size_t r = 0; r < quota[c]; ++r) in_train[members[c][r]] = 1;
    }
  }

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t i = 0; i < n; ++i) (in_train[i] ? train_rows : test_rows).push_back(i);
  return {subset_rows(ds, train_rows), subset_rows(ds, test_rows)};
}

Dataset filter_classes(const Dataset& ds, std::span<const int> classes) {
  require(classes.size() >= 2, "need at least two classes to keep");
  std::map<int, int> recode;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    require(classes[k] >= 0 && static_cast<std::size_t>(classes[k]) < ds.n_classes(),
            "class index out of range");
    recode[classes[k]] = static_cast<int>(k);
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.n_samples(); ++i)
    if (recode.count(ds.labels[i])) rows.push_back(i);
  Dataset out = subset_rows(ds, rows);
  for (auto& y : out.labels) y = recode[y];
  out.class_names.clear();
  for (int c : classes) out.class_names.push_back(ds.class_names[static_cast<std::size_t>(c)]);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset artifact

void save_dataset(const Dataset& ds, const std::string& csv_path, const std::string& manifest_path) {
  ds.validate();
  write_csv(ds, csv_path, "label");
  json j;
  j["schema_version"] = 1;
  j["kind"] = "dataset";
  j["csv"] = std::filesystem::path(csv_path).filename().string();
  j["target_column"] = "label";
  j["n_samples"] = ds.n_samples();
  j["feature_names"] = ds.feature_names;
  j["class_names"] = ds.class_names;
  j["sample_ids"] = ds.sample_ids;
  if (ds.groups) j["groups"] = *ds.groups;
  if (ds.scaling) j["scaling"] = {{"min", ds.scaling->min}, {"range", ds.scaling->range}};
  write_text_file(manifest_path, j.dump(1) + "\n");
}

Dataset load_dataset(const std::string& manifest_path) {
  json j;
  try {
    j = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "corrupt dataset manifest " + manifest_path + ": " + e.what());
  }
  require(j.value("kind", "") == "dataset", "not a dataset manifest: " + manifest_path,
          ErrorCode::kSchemaMismatch);
  require(j.value("schema_version", 0) == 1, "unsupported dataset schema version",
          ErrorCode::kSchemaMismatch);
  try {
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    const auto class_names = j.at("class_names").get<std::vector<std::string>>();
    auto table = read_table(read_text_file((dir / j.at("csv").get<std::string>()).string()));
    auto loaded = table_to_dataset(table, j.at("target_column").get<std::string>(), &class_names);
    require(loaded.dropped_rows == 0, "dataset artifact contains incomplete rows", ErrorCode::kParse);
    Dataset ds = std::move(loaded.dataset);
    require(ds.feature_names == j.at("feature_names").get<std::vector<std::string>>(),
            "dataset csv header does not match manifest", ErrorCode::kSchemaMismatch);
    ds.sample_ids = j.at("sample_ids").get<std::vector<std::int64_t>>();
    if (j.contains("groups")) ds.groups = j.at("groups").get<std::vector<int>>();
    if (j.contains("scaling"))
      ds.scaling = ScalingMeta{j["scaling"].at("min").get<std::vector<double>>(),
                               j["scaling"].at("range").get<std::vector<double>>()};
    ds.validate();
    return ds;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, "corrupt dataset manifest " + manifest_path + ": " + e.what());
  }
}

}  // namespace hdshap
