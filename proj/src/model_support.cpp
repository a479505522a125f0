#include <algorithm>
#include <numeric>

#include "hdshap/models.hpp"
#include "json.hpp"

namespace hdshap {

using nlohmann::json;

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTree: return "tree";
    case ModelKind::kBoosted: return "boosted";
    case ModelKind::kMlp: return "mlp";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "tree") return ModelKind::kTree;
  if (name == "boosted") return ModelKind::kBoosted;
  if (name == "mlp") return ModelKind::kMlp;
  fail(ErrorCode::kInvalidArgument, "unknown model kind: " + std::string(name));
}

const MarginModel& as_margin_model(const TrainedModel& model) {
  return std::visit([](const auto& m) -> const MarginModel& { return m; }, model);
}

ModelKind kind_of(const TrainedModel& model) { return static_cast<ModelKind>(model.index()); }
ModelKind kind_of(const ModelParams& params) { return static_cast<ModelKind>(params.index()); }

ModelParams default_params(ModelKind kind) {
  switch (kind) {
    case ModelKind::kTree: return TreeParams{};
    case ModelKind::kBoosted: return BoostParams{};
    case ModelKind::kMlp: return MlpParams{};
  }
  fail(ErrorCode::kInvalidArgument, "unknown model kind");
}

// ---------------------------------------------------------------------------
// Hyperparameters

void set_param(ModelParams& params, const std::string& name, const ParamValue& value) {
  auto number = [&]() -> double {
    const double* v = std::get_if<double>(&value);
    require(v != nullptr, "hyperparameter " + name + " expects a number");
    return *v;
  };
  auto integer = [&]() -> int { return static_cast<int>(std::llround(number())); };
  auto unknown = [&]() {
    fail(ErrorCode::kInvalidArgument, "unknown hyperparameter '" + name + "' for model kind " +
                                          std::string(model_kind_name(kind_of(params))));
  };
  std::visit(
      [&](auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TreeParams>) {
          if (name == "max_depth") p.max_depth = integer();
          else if (name == "min_leaf") p.min_leaf = integer();
          else unknown();
        } else if constexpr (std::is_same_v<T, BoostParams>) {
          if (name == "n_rounds") p.n_rounds = integer();
          else if (name == "max_depth") p.max_depth = integer();
          else if (name == "learning_rate") p.learning_rate = number();
          else if (name == "lambda") p.lambda = number();
          else if (name == "min_child_weight") p.min_child_weight = number();
          else unknown();
        } else {
          if (name == "hidden") {
            const auto* v = std::get_if<std::vector<int>>(&value);
            require(v != nullptr, "hyperparameter hidden expects a list of layer sizes");
            p.hidden = *v;
          } else if (name == "epochs") p.epochs = integer();
          else if (name == "batch_size") p.batch_size = integer();
          else if (name == "learning_rate") p.learning_rate = number();
          else if (name == "l2") p.l2 = number();
          else if (name == "seed") p.seed = static_cast<std::uint64_t>(number());
          else unknown();
        }
      },
      params);
}

std::string params_to_json(const ModelParams& params) {
  json j;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TreeParams>) {
          j = {{"max_depth", p.max_depth}, {"min_leaf", p.min_leaf}};
        } else if constexpr (std::is_same_v<T, BoostParams>) {
          j = {{"n_rounds", p.n_rounds},         {"max_depth", p.max_depth},
               {"learning_rate", p.learning_rate}, {"lambda", p.lambda},
               {"min_child_weight", p.min_child_weight}};
        } else {
          j = {{"hidden", p.hidden},
               {"epochs", p.epochs},
               {"batch_size", p.batch_size},
               {"learning_rate", p.learning_rate},
               {"l2", p.l2},
               {"optimizer", p.optimizer == MlpOptimizer::kAdam ? "adam" : "sgd"},
               {"seed", p.seed}};
        }
      },
      params);
  return j.dump();
}

ModelParams params_from_json(ModelKind kind, const std::string& json_text) {
  ModelParams params = default_params(kind);
  if (json_text.empty()) return params;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("invalid hyperparameter JSON: ") + e.what());
  }
  require(j.is_object(), "hyperparameters must be a JSON object", ErrorCode::kParse);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "optimizer") {
      auto* mlp = std::get_if<MlpParams>(&params);
      require(mlp != nullptr, "optimizer applies to the mlp model only");
      const auto name = it.value().get<std::string>();
      require(name == "adam" || name == "sgd", "optimizer must be adam or sgd");
      mlp->optimizer = name == "adam" ? MlpOptimizer::kAdam : MlpOptimizer::kSgd;
    } else if (it.value().is_array()) {
      set_param(params, it.key(), it.value().get<std::vector<int>>());
    } else if (it.value().is_number()) {
      set_param(params, it.key(), it.value().get<double>());
    } else {
      fail(ErrorCode::kParse, "hyperparameter " + it.key() + " has an unsupported type");
    }
  }
  return params;
}

TrainedModel train_model(const Dataset& train, const ModelParams& params) {
  return std::visit(
      [&](const auto& p) -> TrainedModel {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TreeParams>) return train_tree(train, p);
        else if constexpr (std::is_same_v<T, BoostParams>) return train_boosted(train, p);
        else return train_mlp(train, p);
      },
      params);
}

// ---------------------------------------------------------------------------
// Evaluation

ClassificationReport classification_report(std::span<const int> truth,
                                           std::span<const int> predicted, std::size_t k) {
  require(truth.size() == predicted.size(), "truth and prediction lengths differ");
  ClassificationReport r;
  r.total = truth.size();
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    ++r.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
    if (truth[i] == predicted[i]) ++correct;
  }
  r.accuracy = r.total ? static_cast<double>(correct) / static_cast<double>(r.total) : 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t predicted_c = 0, support = 0;
    for (std::size_t t = 0; t < k; ++t) predicted_c += r.confusion[t][c];
    for (std::size_t q = 0; q < k; ++q) support += r.confusion[c][q];
    const double tp = static_cast<double>(r.confusion[c][c]);
    r.support.push_back(support);
    r.precision_undefined.push_back(predicted_c == 0);
    r.recall_undefined.push_back(support == 0);
    r.precision.push_back(predicted_c ? tp / static_cast<double>(predicted_c) : 0.0);
    r.recall.push_back(support ? tp / static_cast<double>(support) : 0.0);
  }
  return r;
}

ClassificationReport evaluate(const MarginModel& model, const Dataset& test) {
  require(model.n_features() == test.n_features(), "feature count does not match model");
  const auto predicted = model.predict_classes(test.features);
  return classification_report(test.labels, predicted, std::max(model.n_classes(), test.n_classes()));
}

// ---------------------------------------------------------------------------
// Grid search

GridSearchSpec default_grid(ModelKind kind) {
  GridSearchSpec spec;
  auto nums = [](std::initializer_list<double> v) {
    std::vector<ParamValue> out;
    for (double x : v) out.emplace_back(x);
    return out;
  };
  switch (kind) {
    case ModelKind::kTree:
      spec.axes = {{"max_depth", nums({3, 5, 7, 10})}, {"min_leaf", nums({1, 5, 20})}};
      break;
    case ModelKind::kBoosted:
      spec.axes = {{"n_rounds", nums({50, 100, 200})},
                   {"max_depth", nums({3, 5})},
                   {"learning_rate", nums({0.1, 0.3})},
                   {"lambda", nums({1})}};
      break;
    case ModelKind::kMlp:
      spec.axes = {{"hidden", {std::vector<int>{16}, std::vector<int>{32}, std::vector<int>{32, 16}}},
                   {"learning_rate", nums({0.01, 0.001})},
                   {"epochs", nums({200})}};
      break;
  }
  return spec;
}

namespace {

std::vector<std::size_t> assign_folds(const Dataset& ds, const GridSearchSpec& spec) {
  const std::size_t n = ds.n_samples();
  std::vector<std::size_t> fold(n);
  Rng rng(spec.seed, "grid_search.folds");
  if (spec.stratified) {
    std::vector<std::vector<std::size_t>> members(ds.n_classes());
    for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (std::size_t c = 0; c < members.size(); ++c) {
      require(members[c].empty() || members[c].size() >= spec.n_folds,
              "class " + ds.class_names[c] + " has fewer samples than folds");
      rng.shuffle(members[c]);
      for (std::size_t r = 0; r < members[c].size(); ++r) fold[members[c][r]] = r % spec.n_folds;
    }
  } else {
    require(n >= spec.n_folds, "fewer samples than folds");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (std::size_t r = 0; r < n; ++r) fold[order[r]] = r % spec.n_folds;
  }
  return fold;
}

}  // namespace

GridSearchResult grid_search(const Dataset& train, const ModelParams& base,
                             const GridSearchSpec& spec) {
  require(!spec.axes.empty(), "grid search needs at least one axis");
  for (const auto& axis : spec.axes)
    require(!axis.candidates.empty(), "grid axis " + axis.name + " has no candidates");
  require(spec.n_folds >= 2, "grid search needs at least two folds");

  const auto fold = assign_folds(train, spec);
  std::vector<Dataset> fit_sets, holdout_sets;
  for (std::size_t f = 0; f < spec.n_folds; ++f) {
    std::vector<std::size_t> fit_rows, holdout_rows;
    for (std::size_t i = 0; i < fold.size(); ++i) (fold[i] == f ? holdout_rows : fit_rows).push_back(i);
    fit_sets.push_back(subset_rows(train, fit_rows));
    holdout_sets.push_back(subset_rows(train, holdout_rows));
  }

  std::size_t cells = 1;
  for (const auto& axis : spec.axes) cells *= axis.candidates.size();

  GridSearchResult result;
  double best = -1.0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    GridCell row;
    ModelParams params = base;
    std::size_t rest = cell;
    row.values.resize(spec.axes.size());
    for (std::size_t a = spec.axes.size(); a-- > 0;) {
      const auto& axis = spec.axes[a];
      row.values[a] = axis.candidates[rest % axis.candidates.size()];
      rest /= axis.candidates.size();
    }
    for (std::size_t a = 0; a < spec.axes.size(); ++a) set_param(params, spec.axes[a].name, row.values[a]);
    for (std::size_t f = 0; f < spec.n_folds; ++f) {
      const TrainedModel model = train_model(fit_sets[f], params);
      row.fold_accuracy.push_back(evaluate(as_margin_model(model), holdout_sets[f]).accuracy);
    }
    row.mean_accuracy = std::accumulate(row.fold_accuracy.begin(), row.fold_accuracy.end(), 0.0) /
                        static_cast<double>(spec.n_folds);
    if (row.mean_accuracy > best) {
      best = row.mean_accuracy;
      result.best_index = cell;
      result.best = params;
    }
    result.table.push_back(std::move(row));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json tree_to_json(const Tree& t) {
  json nodes = json::array();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const auto& nd = t.node(i);
    const auto v = t.value(i);
    nodes.push_back({{"feature", nd.feature},
                     {"threshold", nd.threshold},
                     {"left", nd.left},
                     {"right", nd.right},
                     {"cover", nd.cover},
                     {"value", std::vector<double>(v.begin(), v.end())}});
  }
  return {{"value_dim", t.value_dim()}, {"nodes", nodes}};
}

Tree tree_from_json(const json& j) {
  Tree t(j.at("value_dim").get<std::size_t>());
  for (const auto& nj : j.at("nodes")) {
    TreeNode nd;
    nd.feature = nj.at("feature").get<int>();
    nd.threshold = nj.at("threshold").get<double>();
    nd.left = nj.at("left").get<int>();
    nd.right = nj.at("right").get<int>();
    nd.cover = nj.at("cover").get<double>();
    t.add_node(nd, nj.at("value").get<std::vector<double>>());
  }
  t.validate();
  return t;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    rows.push_back(std::vector<double>(m.row(i).data(), m.row(i).data() + m.cols()));
  return rows;
}

Matrix matrix_from_json(const json& j, Eigen::Index rows, Eigen::Index cols) {
  require(static_cast<Eigen::Index>(j.size()) == rows, "matrix has wrong row count", ErrorCode::kParse);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = j[static_cast<std::size_t>(i)].get<std::vector<double>>();
    require(static_cast<Eigen::Index>(row.size()) == cols, "matrix has wrong column count",
            ErrorCode::kParse);
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

}  // namespace

std::string model_to_json(const TrainedModel& model) {
  json j;
  j["schema_version"] = kModelSchemaVersion;
  j["kind"] = model_kind_name(kind_of(model));
  const MarginModel& mm = as_margin_model(model);
  j["n_features"] = mm.n_features();
  j["n_classes"] = mm.n_classes();
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, DecisionTree>) {
          j["tree"] = tree_to_json(m.tree());
        } else if constexpr (std::is_same_v<T, BoostedEnsemble>) {
          j["base_score"] = m.base_score();
          j["learning_rate"] = m.learning_rate();
          j["lambda"] = m.lambda();
          j["max_depth"] = m.max_depth();
          json rounds = json::array();
          for (const auto& round : m.rounds()) {
            json trees = json::array();
            for (const auto& t : round) trees.push_back(tree_to_json(t));
            rounds.push_back(trees);
          }
          j["rounds"] = rounds;
        } else {
          j["layer_sizes"] = m.layer_sizes();
          json weights = json::array(), biases = json::array();
          for (std::size_t l = 0; l < m.weights().size(); ++l) {
            weights.push_back(matrix_to_json(m.weights()[l]));
            biases.push_back(std::vector<double>(m.biases()[l].data(),
                                                 m.biases()[l].data() + m.biases()[l].size()));
          }
          j["weights"] = weights;
          j["biases"] = biases;
        }
      },
      model);
  return j.dump(1) + "\n";
}

TrainedModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("corrupt model file: ") + e.what());
  }
  require(j.is_object() && j.contains("schema_version"), "corrupt model file: no schema_version",
          ErrorCode::kParse);
  const int version = j["schema_version"].get<int>();
  require(version == kModelSchemaVersion,
          "model schema version " + std::to_string(version) + " is not supported (expected " +
              std::to_string(kModelSchemaVersion) + ")",
          ErrorCode::kSchemaMismatch);
  try {
    const ModelKind kind = parse_model_kind(j.at("kind").get<std::string>());
    const auto p = j.at("n_features").get<std::size_t>();
    const auto k = j.at("n_classes").get<std::size_t>();
    switch (kind) {
      case ModelKind::kTree: {
        Tree t = tree_from_json(j.at("tree"));
        require(t.value_dim() == k, "tree value dimension does not match n_classes", ErrorCode::kParse);
        return DecisionTree(std::move(t), p);
      }
      case ModelKind::kBoosted: {
        BoostedEnsemble m(j.at("base_score").get<std::vector<double>>(),
                          j.at("learning_rate").get<double>(), j.at("lambda").get<double>(),
                          j.at("max_depth").get<int>(), p);
        require(m.n_classes() == k, "base score length does not match n_classes", ErrorCode::kParse);
        for (const auto& round : j.at("rounds")) {
          std::vector<Tree> trees;
          for (const auto& tj : round) trees.push_back(tree_from_json(tj));
          m.add_round(std::move(trees));
        }
        return m;
      }
      case ModelKind::kMlp: {
        Mlp m(j.at("layer_sizes").get<std::vector<int>>());
        require(m.n_features() == p && m.n_classes() == k, "layer sizes do not match header",
                ErrorCode::kParse);
        const auto& weights = j.at("weights");
        const auto& biases = j.at("biases");
        require(weights.size() == m.weights().size() && biases.size() == m.biases().size(),
                "wrong number of layers", ErrorCode::kParse);
        for (std::size_t l = 0; l < m.weights().size(); ++l) {
          m.weights()[l] = matrix_from_json(weights[l], m.weights()[l].rows(), m.weights()[l].cols());
          const auto b = biases[l].get<std::vector<double>>();
          require(static_cast<Eigen::Index>(b.size()) == m.biases()[l].size(), "bias has wrong size",
                  ErrorCode::kParse);
          m.biases()[l] = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
        }
        return m;
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("corrupt model file: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInvalidArgument) fail(ErrorCode::kParse, std::string("corrupt model file: ") + e.what());
    throw;
  }
  fail(ErrorCode::kParse, "corrupt model file");
}

void save_model(const TrainedModel& model, const std::string& path) {
  write_text_file(path, model_to_json(model));
}

TrainedModel load_model(const std::string& path) { return model_from_json(read_text_file(path)); }

}  // namespace hdshap
