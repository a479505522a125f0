// hdshap command-line driver. Talks to the library only through hdshap.h.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hdshap/hdshap.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitMissing = 3;
constexpr int kExitNumerical = 4;

const char* const kKinds[] = {"tree", "boosted", "mlp"};

struct CliError {
  int code;
  std::string message;
};

[[noreturn]] void die(int code, const std::string& message) { throw CliError{code, message}; }

int exit_code_for(hds_status s) {
  switch (s) {
    case HDS_ERR_INVALID_ARGUMENT:
    case HDS_ERR_INVALID_SPEC:
    case HDS_ERR_PARSE:
    case HDS_ERR_SCHEMA_MISMATCH:
      return kExitConfig;
    case HDS_ERR_IO:
    case HDS_ERR_MISSING_ARTIFACT:
      return kExitMissing;
    case HDS_ERR_NUMERICAL:
      return kExitNumerical;
    default:
      return kExitInternal;
  }
}

void check(hds_status s, const std::string& what) {
  if (s != HDS_OK) die(exit_code_for(s), what + ": " + hds_last_error_message());
}

std::string take(char* s) {
  std::string out = s ? s : "";
  hds_string_free(s);
  return out;
}

json take_json(char* s) { return json::parse(take(s)); }

template <typename T, void (*Free)(T*)>
class Handle {
 public:
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (p_) Free(p_);
  }
  T** out() {
    if (p_) Free(p_);
    p_ = nullptr;
    return &p_;
  }
  T* get() const { return p_; }
  void swap(Handle& o) noexcept { std::swap(p_, o.p_); }

 private:
  T* p_ = nullptr;
};

using DatasetH = Handle<hds_dataset, hds_dataset_free>;
using ModelH = Handle<hds_model, hds_model_free>;
using TensorH = Handle<hds_tensor, hds_tensor_free>;
using LabelingH = Handle<hds_labeling, hds_labeling_free>;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) die(kExitMissing, "cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) die(kExitMissing, "cannot write " + p.string());
  out << text;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_text(const std::string& s) { return hex(hds_hash_bytes(s.data(), s.size())); }

// ---------------------------------------------------------------------------
// Configuration

json default_config() {
  return json{
      {"seed", 7},
      {"threads", 1},
      {"data",
       {{"source", "simulate"},
        {"n_samples", 1500},
        {"n_features", 10},
        {"domain_half_width", 5.0},
        {"csv_path", ""},
        {"target", "label"},
        {"idx_images", ""},
        {"idx_labels", ""},
        {"classes", json::array()},
        {"limit", 0},
        {"scale", false},
        {"train_fraction", 0.7},
        {"stratified", false}}},
      {"models",
       {{"kinds", {"tree", "boosted", "mlp"}},
        {"grid_search", false},
        {"tree", json::object()},
        {"boosted", json::object()},
        {"mlp", json::object()}}},
      {"shap", {{"background_size", 100}, {"n_coalitions", 0}, {"explain_rows", 0}}},
      {"cluster", {{"model", "boosted"}, {"min_cluster_size", 15}, {"min_samples", 0}}},
      {"plots",
       {{"top_n", 10},
        {"width", 720},
        {"height", 480},
        {"fit_on", "segments"},
        {"grouping", "clusters"},
        {"path_top_n", 0},
        {"waterfall_sample", 0},
        {"waterfall_class", 0},
        {"embed_dims", 2},
        {"heatmap_features", json::array()}}}};
}

bool open_object(const std::string& path) {
  return path == "models.tree" || path == "models.boosted" || path == "models.mlp";
}

// Every key must exist in the defaults; hyperparameter objects are checked by
// the library when a model is trained.
void validate_keys(const json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) die(kExitConfig, "config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) die(kExitConfig, "unknown config key '" + path + "'");
    if (base[key].is_object() && !open_object(path)) validate_keys(base[key], value, path);
  }
}

void set_path(json& cfg, const std::string& dotted, const json& value) {
  json* node = &cfg;
  std::string walked;
  std::stringstream ss(dotted);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) die(kExitConfig, "empty config key");
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const bool last = i + 1 == parts.size();
    if (!node->is_object()) die(kExitConfig, "config key '" + dotted + "' descends into a non-object");
    if (!node->contains(parts[i]) && !open_object(walked)) die(kExitConfig, "unknown config key '" + dotted + "'");
    walked += (walked.empty() ? "" : ".") + parts[i];
    if (last)
      (*node)[parts[i]] = value;
    else
      node = &(*node)[parts[i]];
  }
}

void validate_config(const json& c) {
  auto need = [&](bool ok, const std::string& msg) {
    if (!ok) die(kExitConfig, "invalid config: " + msg);
  };
  need(c["seed"].is_number_integer() && c["seed"].get<long long>() >= 0, "seed must be a non-negative integer");
  need(c["threads"].is_number_integer() && c["threads"].get<int>() >= 1, "threads must be >= 1");
  const auto& d = c["data"];
  const std::string src = d["source"].get<std::string>();
  need(src == "simulate" || src == "csv" || src == "idx", "data.source must be simulate, csv or idx");
  if (src == "csv") need(!d["csv_path"].get<std::string>().empty(), "data.csv_path is required for csv");
  if (src == "idx")
    need(!d["idx_images"].get<std::string>().empty() && !d["idx_labels"].get<std::string>().empty(),
         "data.idx_images and data.idx_labels are required for idx");
  need(d["train_fraction"].get<double>() > 0 && d["train_fraction"].get<double>() < 1,
       "data.train_fraction must lie in (0, 1)");
  for (const auto& k : c["models"]["kinds"]) {
    const auto s = k.get<std::string>();
    need(s == "tree" || s == "boosted" || s == "mlp", "unknown model kind '" + s + "'");
  }
  const auto cm = c["cluster"]["model"].get<std::string>();
  need(cm == "tree" || cm == "boosted" || cm == "mlp", "cluster.model must be tree, boosted or mlp");
  need(c["plots"]["top_n"].get<int>() >= 1, "plots.top_n must be >= 1");
}

// Hash over the canonical (key-sorted) config; the thread count does not
// change any result and is left out.
std::string config_hash(json cfg) {
  cfg.erase("threads");
  return hash_text(cfg.dump());
}

json parse_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

// ---------------------------------------------------------------------------
// Run directory and manifest

struct Options {
  std::string out;
  std::string config_file;
  std::vector<std::pair<std::string, json>> overrides;
};

class Run {
 public:
  fs::path dir;
  json config;
  std::string hash;
  json manifest;

  std::uint64_t seed() const { return config["seed"].get<std::uint64_t>(); }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }

  void record(const std::string& name, const std::vector<std::string>& rels) {
    json files = json::array();
    for (const auto& rel : rels) files.push_back({{"path", rel}, {"hash", hash_text(read_file(dir / rel))}});
    manifest["artifacts"][name] = files;
  }

  bool has(const std::string& name) const {
    if (!manifest["artifacts"].contains(name)) return false;
    for (const auto& f : manifest["artifacts"][name]) {
      const fs::path p = dir / f["path"].get<std::string>();
      if (!fs::exists(p) || hash_text(read_file(p)) != f["hash"].get<std::string>()) return false;
    }
    return true;
  }

  void timing(const std::string& stage, double seconds) { manifest["timings"][stage] = seconds; }

  void save() const { write_file(dir / "manifest.json", manifest.dump(2) + "\n"); }
};

fs::path default_output_root() {
  const char* env = std::getenv("HDSHAP_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("hdshap-runs");
}

Run open_run(const Options& opt) {
  Run run;
  run.dir = opt.out.empty() ? default_output_root() / "default" : fs::path(opt.out);
  const fs::path manifest_path = run.dir / "manifest.json";
  json cfg = default_config();
  std::optional<std::string> stored_hash;
  if (fs::exists(manifest_path)) {
    try {
      run.manifest = json::parse(read_file(manifest_path));
      cfg.merge_patch(run.manifest.at("config"));
      stored_hash = run.manifest.at("config_hash").get<std::string>();
    } catch (const json::exception& e) {
      die(kExitConfig, "corrupt manifest " + manifest_path.string() + ": " + e.what());
    }
  }
  if (!opt.config_file.empty()) {
    if (!fs::exists(opt.config_file)) die(kExitMissing, "config file not found: " + opt.config_file);
    json file;
    try {
      file = json::parse(read_file(opt.config_file));
    } catch (const json::exception& e) {
      die(kExitConfig, "config file " + opt.config_file + " is not valid JSON: " + e.what());
    }
    validate_keys(default_config(), file, "");
    cfg.merge_patch(file);
  }
  for (const auto& [key, value] : opt.overrides) set_path(cfg, key, value);
  try {
    validate_config(cfg);
  } catch (const json::exception& e) {
    die(kExitConfig, std::string("invalid config value: ") + e.what());
  }
  run.config = cfg;
  run.hash = config_hash(cfg);
  if (stored_hash && *stored_hash != run.hash)
    die(kExitConfig, "config hash mismatch: " + run.dir.string() + " was created with config " + *stored_hash +
                         " but the current config hashes to " + run.hash +
                         "; use a fresh --out directory to run a different configuration");
  if (!stored_hash) {
    run.manifest = json::object();
    run.manifest["artifacts"] = json::object();
    run.manifest["timings"] = json::object();
  }
  run.manifest["tool_version"] = hds_version();
  run.manifest["config_hash"] = run.hash;
  run.manifest["config"] = cfg;
  fs::create_directories(run.dir);
  run.save();
  return run;
}

template <typename F>
void timed(Run& run, const std::string& stage, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  body();
  run.timing(stage, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  run.save();
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path)) die(kExitMissing, "missing artifact: " + path + " (" + hint + ")");
}

// ---------------------------------------------------------------------------
// Artifact access

void load_split(const Run& run, const std::string& name, DatasetH& out) {
  const std::string p = run.path("data/" + name + ".json");
  require_file(p, "run `hdshap simulate` or `hdshap load` first");
  check(hds_dataset_load(p.c_str(), out.out()), "loading " + p);
}

// The rows that tensors describe: the test split, optionally truncated.
void load_explained(const Run& run, DatasetH& out) {
  DatasetH test;
  load_split(run, "test", test);
  const auto rows = run.config["shap"]["explain_rows"].get<std::size_t>();
  if (rows == 0) {
    check(hds_dataset_head(test.get(), static_cast<std::size_t>(-1), out.out()), "selecting rows");
  } else {
    check(hds_dataset_head(test.get(), rows, out.out()), "selecting rows");
  }
}

void load_model(const Run& run, const std::string& kind, ModelH& out) {
  const std::string p = run.path("models/" + kind + ".json");
  require_file(p, "run `hdshap train --model " + kind + "` first");
  check(hds_model_load(p.c_str(), out.out()), "loading " + p);
}

void load_tensor(const Run& run, const std::string& kind, TensorH& out) {
  const std::string p = run.path("shap/" + kind + ".json");
  require_file(p, "run `hdshap explain --model " + kind + "` first");
  check(hds_tensor_load(p.c_str(), out.out()), "loading " + p);
}

void load_labeling(const Run& run, const std::string& kind, LabelingH& out) {
  const std::string p = run.path("clusters/" + kind + ".labels.csv");
  require_file(p, "run `hdshap cluster --model " + kind + "` first");
  check(hds_labeling_load(p.c_str(), out.out()), "loading " + p);
}

json dataset_info(const hds_dataset* ds) {
  char* s = nullptr;
  check(hds_dataset_info(ds, &s), "dataset info");
  return take_json(s);
}

json plot_options(const Run& run) {
  const auto& p = run.config["plots"];
  return json{{"width", p["width"]}, {"height", p["height"]}, {"top_n", p["top_n"]}};
}

std::vector<std::string> config_kinds(const Run& run) {
  return run.config["models"]["kinds"].get<std::vector<std::string>>();
}

void check_kind(const std::string& kind) {
  for (const char* k : kKinds)
    if (kind == k) return;
  die(kExitConfig, "unknown model kind '" + kind + "' (expected tree, boosted or mlp)");
}

// ---------------------------------------------------------------------------
// Stages

void stage_data(Run& run) {
  timed(run, "data", [&] {
    const json& d = run.config["data"];
    const std::string src = d["source"];
    DatasetH full;
    if (src == "simulate") {
      const json spec{{"n_samples", d["n_samples"]},
                      {"n_features", d["n_features"]},
                      {"domain_half_width", d["domain_half_width"]},
                      {"seed", run.seed()}};
      check(hds_dataset_simulate(spec.dump().c_str(), full.out()), "simulating data");
    } else if (src == "csv") {
      const std::string p = d["csv_path"];
      require_file(p, "data.csv_path");
      std::size_t dropped = 0;
      check(hds_dataset_load_csv(p.c_str(), d["target"].get<std::string>().c_str(), full.out(), &dropped),
            "loading " + p);
      if (dropped) std::cerr << "load: dropped " << dropped << " rows with missing values\n";
    } else {
      const std::string imgs = d["idx_images"], labs = d["idx_labels"];
      require_file(imgs, "data.idx_images");
      require_file(labs, "data.idx_labels");
      check(hds_dataset_load_idx(imgs.c_str(), labs.c_str(), full.out()), "loading IDX files");
    }
    if (d["limit"].get<std::size_t>() > 0) {
      DatasetH head;
      check(hds_dataset_head(full.get(), d["limit"].get<std::size_t>(), head.out()), "limiting rows");
      full.swap(head);
    }
    const auto classes = d["classes"].get<std::vector<int>>();
    if (!classes.empty()) {
      DatasetH sub;
      check(hds_dataset_filter_classes(full.get(), classes.data(), classes.size(), sub.out()), "filtering classes");
      full.swap(sub);
    }
    DatasetH train, test;
    check(hds_dataset_split(full.get(), d["train_fraction"].get<double>(), d["stratified"].get<bool>() ? 1 : 0,
                            run.seed(), train.out(), test.out()),
          "splitting");
    if (d["scale"].get<bool>()) {
      DatasetH strain, stest;
      check(hds_dataset_scale(train.get(), train.get(), strain.out()), "scaling");
      check(hds_dataset_scale(train.get(), test.get(), stest.out()), "scaling");
      train.swap(strain);
      test.swap(stest);
    }
    fs::create_directories(run.dir / "data");
    const std::pair<const char*, hds_dataset*> parts[] = {
        {"dataset", full.get()}, {"train", train.get()}, {"test", test.get()}};
    for (const auto& [name, ds] : parts) {
      const std::string base = std::string("data/") + name;
      check(hds_dataset_save(ds, run.path(base + ".csv").c_str(), run.path(base + ".json").c_str()),
            "saving " + base);
      run.record(name, {base + ".json", base + ".csv"});
    }
    const json info = dataset_info(full.get());
    std::cout << "data: " << info["n_samples"] << " samples, " << info["n_features"] << " features, "
              << info["n_classes"] << " classes -> " << dataset_info(train.get())["n_samples"] << " train / "
              << dataset_info(test.get())["n_samples"] << " test\n";
  });
}

void stage_train(Run& run, const std::string& kind) {
  check_kind(kind);
  timed(run, "train." + kind, [&] {
    DatasetH train, test;
    load_split(run, "train", train);
    load_split(run, "test", test);
    json params = run.config["models"][kind];
    if (kind == "mlp" && !params.contains("seed")) params["seed"] = run.seed();
    fs::create_directories(run.dir / "models");
    std::vector<std::string> files;
    if (run.config["models"]["grid_search"].get<bool>()) {
      const json spec{{"base", params}, {"seed", run.seed()}};
      char* res = nullptr;
      check(hds_grid_search(train.get(), kind.c_str(), spec.dump().c_str(), &res), "grid search (" + kind + ")");
      const json result = take_json(res);
      params = result["best"];
      write_file(run.dir / ("models/" + kind + ".grid.json"), result.dump(2) + "\n");
      files.push_back("models/" + kind + ".grid.json");
    }
    ModelH model;
    char* info_s = nullptr;
    check(hds_model_train(train.get(), kind.c_str(), params.dump().c_str(), model.out(), &info_s),
          "training " + kind);
    const json info = take_json(info_s);
    const std::string model_rel = "models/" + kind + ".json";
    check(hds_model_save(model.get(), run.path(model_rel).c_str()), "saving " + model_rel);
    char* rep = nullptr;
    check(hds_model_evaluate(model.get(), test.get(), &rep), "evaluating " + kind);
    const json test_report = take_json(rep);
    check(hds_model_evaluate(model.get(), train.get(), &rep), "evaluating " + kind);
    const json train_report = take_json(rep);
    json metrics{{"model", kind}, {"params", info["params"]}, {"test", test_report},
                 {"train_accuracy", train_report["accuracy"]}};
    if (!info["loss_history"].empty()) metrics["final_training_loss"] = info["loss_history"].back();
    const std::string metrics_rel = "models/" + kind + ".metrics.json";
    write_file(run.dir / metrics_rel, metrics.dump(2) + "\n");
    files.insert(files.begin(), model_rel);
    run.record("model." + kind, files);
    run.record("metrics." + kind, {metrics_rel});
    std::cout << "train " << kind << ": test accuracy " << test_report["accuracy"].get<double>() << "\n";
  });
}

void stage_explain(Run& run, const std::string& kind) {
  check_kind(kind);
  timed(run, "explain." + kind, [&] {
    ModelH model;
    load_model(run, kind, model);
    DatasetH rows, train;
    load_explained(run, rows);
    load_split(run, "train", train);
    TensorH tensor;
    json summary{{"model", kind}};
    if (kind == "mlp") {
      const json& s = run.config["shap"];
      const json opts{{"background_size", s["background_size"]},
                      {"n_coalitions", s["n_coalitions"]},
                      {"seed", run.seed()},
                      {"threads", run.config["threads"]}};
      char* rep = nullptr;
      check(hds_explain_kernel(model.get(), rows.get(), train.get(), opts.dump().c_str(), tensor.out(), &rep),
            "Kernel SHAP (" + kind + ")");
      summary["method"] = "kernel_shap";
      summary["kernel"] = take_json(rep);
    } else {
      check(hds_explain_tree(model.get(), rows.get(), tensor.out()), "TreeSHAP (" + kind + ")");
      summary["method"] = "tree_shap_path_dependent";
    }
    double err = 0.0;
    check(hds_tensor_additivity_error(tensor.get(), model.get(), rows.get(), &err), "additivity check");
    summary["max_additivity_error"] = err;
    fs::create_directories(run.dir / "shap");
    const std::string base = "shap/" + kind;
    check(hds_tensor_save(tensor.get(), run.path(base + ".json").c_str(), run.path(base + ".csv").c_str()),
          "saving " + base);
    write_file(run.dir / (base + ".summary.json"), summary.dump(2) + "\n");
    run.record("tensor." + kind, {base + ".json", base + ".csv", base + ".summary.json"});
    std::cout << "explain " << kind << ": max additivity error " << err << "\n";
  });
}

void stage_cluster(Run& run, const std::string& kind) {
  check_kind(kind);
  timed(run, "cluster." + kind, [&] {
    TensorH tensor;
    load_tensor(run, kind, tensor);
    const json& c = run.config["cluster"];
    const json params{{"min_cluster_size", c["min_cluster_size"]}, {"min_samples", c["min_samples"]}};
    LabelingH labels;
    check(hds_cluster(tensor.get(), params.dump().c_str(), labels.out()), "HDBSCAN (" + kind + ")");
    fs::create_directories(run.dir / "clusters");
    const std::string base = "clusters/" + kind;
    check(hds_labeling_save(labels.get(), run.path(base + ".labels.csv").c_str()), "saving labeling");
    char* info_s = nullptr;
    check(hds_labeling_info(labels.get(), &info_s), "labeling info");
    const json info = take_json(info_s);
    write_file(run.dir / (base + ".summary.json"), info.dump(2) + "\n");
    std::vector<std::string> files{base + ".labels.csv", base + ".summary.json"};
    DatasetH rows;
    load_explained(run, rows);
    if (dataset_info(rows.get())["has_groups"].get<bool>()) {
      char* pur = nullptr;
      check(hds_purity(labels.get(), rows.get(), &pur), "purity");
      write_file(run.dir / (base + ".purity.json"), take(pur) + "\n");
      files.push_back(base + ".purity.json");
    }
    run.record("labeling." + kind, files);
    std::cout << "cluster " << kind << ": " << info["n_clusters"] << " clusters, " << info["noise"]
              << " noise points\n";
  });
}

void stage_embed(Run& run, const std::string& kind) {
  check_kind(kind);
  timed(run, "embed." + kind, [&] {
    TensorH tensor;
    load_tensor(run, kind, tensor);
    LabelingH labels;
    if (fs::exists(run.path("clusters/" + kind + ".labels.csv"))) load_labeling(run, kind, labels);
    fs::create_directories(run.dir / "plots");
    const std::string csv = "clusters/" + kind + ".embedding.csv";
    const std::string svg = "plots/" + kind + ".embedding.svg";
    fs::create_directories(run.dir / "clusters");
    char* info_s = nullptr;
    check(hds_embed(tensor.get(), run.config["plots"]["embed_dims"].get<std::size_t>(), labels.get(),
                    run.path(csv).c_str(), run.path(svg).c_str(), &info_s),
          "embedding");
    const json info = take_json(info_s);
    run.record("embedding." + kind, {csv});
    run.record("plot.embedding." + kind, {svg});
    std::cout << "embed " << kind << ": explained variance " << info["explained"].dump() << "\n";
  });
}

void stage_waterfall(Run& run, const std::string& kind, const std::string& mode) {
  check_kind(kind);
  if (mode != "classical" && mode != "paths" && mode != "both")
    die(kExitConfig, "--mode must be classical, paths or both");
  timed(run, "waterfall." + kind, [&] {
    TensorH tensor;
    load_tensor(run, kind, tensor);
    const json& p = run.config["plots"];
    fs::create_directories(run.dir / "plots");
    if (mode != "paths") {
      json opts = plot_options(run);
      const auto sample = p["waterfall_sample"].get<std::size_t>();
      const auto cls = p["waterfall_class"].get<std::size_t>();
      opts["title"] = "Waterfall: sample " + std::to_string(sample) + ", class index " + std::to_string(cls);
      const std::string svg = "plots/" + kind + ".waterfall.svg";
      const std::string info_rel = "plots/" + kind + ".waterfall.json";
      char* info = nullptr;
      check(hds_plot_waterfall(tensor.get(), sample, cls, opts.dump().c_str(), run.path(svg).c_str(), &info),
            "waterfall plot");
      write_file(run.dir / info_rel, take(info) + "\n");
      run.record("plot.waterfall." + kind, {svg, info_rel});
    }
    if (mode != "classical") {
      json opts = plot_options(run);
      opts["grouping"] = p["grouping"];
      opts["fit_on"] = p["fit_on"];
      opts["path_top_n"] = p["path_top_n"];
      LabelingH labels;
      if (p["grouping"] == "clusters") load_labeling(run, kind, labels);
      const std::string svg = "plots/" + kind + ".paths.svg";
      const std::string csv = "plots/" + kind + ".paths.csv";
      const std::string info_rel = "plots/" + kind + ".paths.json";
      char* info = nullptr;
      check(hds_plot_paths(tensor.get(), labels.get(), opts.dump().c_str(), run.path(svg).c_str(),
                           run.path(csv).c_str(), &info),
            "path plot");
      const json j = take_json(info);
      if (!j["warning"].get<std::string>().empty()) std::cerr << "waterfall: " << j["warning"].get<std::string>() << "\n";
      write_file(run.dir / info_rel, j.dump(2) + "\n");
      run.record("plot.paths." + kind, {svg, csv, info_rel});
    }
    std::cout << "waterfall " << kind << ": written\n";
  });
}

void stage_bar(Run& run, const std::string& kind) {
  check_kind(kind);
  timed(run, "bar." + kind, [&] {
    TensorH tensor;
    load_tensor(run, kind, tensor);
    json opts = plot_options(run);
    opts["title"] = "Mean |SHAP value| (" + kind + ")";
    fs::create_directories(run.dir / "plots");
    const std::string svg = "plots/" + kind + ".bar.svg";
    char* info = nullptr;
    check(hds_plot_bar(tensor.get(), opts.dump().c_str(), run.path(svg).c_str(), &info), "bar chart");
    const json j = take_json(info);
    run.record("plot.bar." + kind, {svg});
    std::cout << "bar " << kind << ": feature order " << j["order"].dump() << "\n";
  });
}

void stage_heatmap(Run& run, const std::string& kind) {
  check_kind(kind);
  timed(run, "heatmap." + kind, [&] {
    TensorH tensor;
    load_tensor(run, kind, tensor);
    LabelingH labels;
    load_labeling(run, kind, labels);
    DatasetH rows;
    load_explained(run, rows);
    json opts = plot_options(run);
    const auto& feats = run.config["plots"]["heatmap_features"];
    if (!feats.empty()) opts["features"] = feats;
    opts["title"] = "Cluster means of raw features (" + kind + " SHAP clusters)";
    fs::create_directories(run.dir / "plots");
    const std::string svg = "plots/" + kind + ".heatmap.svg";
    const std::string info_rel = "plots/" + kind + ".heatmap.json";
    char* info = nullptr;
    check(hds_plot_heatmap(rows.get(), labels.get(), tensor.get(), opts.dump().c_str(), run.path(svg).c_str(), &info),
          "heatmap");
    write_file(run.dir / info_rel, take(info) + "\n");
    run.record("plot.heatmap." + kind, {svg, info_rel});
    std::cout << "heatmap " << kind << ": written\n";
  });
}

// ---------------------------------------------------------------------------
// Report

std::string html_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<')
      out += "&lt;";
    else if (c == '>')
      out += "&gt;";
    else if (c == '&')
      out += "&amp;";
    else
      out += c;
  }
  return out;
}

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string inline_svg(const Run& run, const std::string& rel) {
  std::string svg = read_file(run.dir / rel);
  if (svg.rfind("<?xml", 0) == 0) svg.erase(0, svg.find('\n') + 1);
  return "<figure>" + svg + "<figcaption>" + html_escape(rel) + "</figcaption></figure>\n";
}

struct ReportPlan {
  std::vector<std::string> kinds;
  std::string cluster_kind;
};

// (stage, artifact) pairs the report needs.
std::vector<std::pair<std::string, std::string>> report_requirements(const ReportPlan& plan) {
  std::vector<std::pair<std::string, std::string>> req{{"data", "dataset"}, {"data", "train"}, {"data", "test"}};
  for (const auto& k : plan.kinds) {
    req.push_back({"train --model " + k, "metrics." + k});
    req.push_back({"explain --model " + k, "tensor." + k});
    req.push_back({"bar --model " + k, "plot.bar." + k});
  }
  const auto& c = plan.cluster_kind;
  req.push_back({"cluster --model " + c, "labeling." + c});
  req.push_back({"embed --model " + c, "plot.embedding." + c});
  req.push_back({"waterfall --model " + c, "plot.waterfall." + c});
  req.push_back({"waterfall --model " + c, "plot.paths." + c});
  req.push_back({"heatmap --model " + c, "plot.heatmap." + c});
  return req;
}

std::string group_name(const Run& run, int g) {
  static const char* const quadrants[] = {"(+,+)", "(-,-)", "(+,-)", "(-,+)"};
  if (run.config["data"]["source"] == "simulate" && g >= 0 && g < 4)
    return std::string("sign(x0, x1) = ") + quadrants[g];
  return "group " + std::to_string(g);
}

void stage_report(Run& run) {
  ReportPlan plan{config_kinds(run), run.config["cluster"]["model"].get<std::string>()};
  std::vector<std::string> missing;
  for (const auto& [stage, artifact] : report_requirements(plan))
    if (!run.has(artifact) && std::find(missing.begin(), missing.end(), stage) == missing.end())
      missing.push_back(stage);
  if (!missing.empty()) {
    std::string msg = "run incomplete; missing stages:";
    for (const auto& m : missing) msg += "\n  " + m;
    die(kExitMissing, msg);
  }
  timed(run, "report", [&] {
    const json ds = json::parse(read_file(run.dir / "data/dataset.json"));
    const auto class_names = ds["class_names"].get<std::vector<std::string>>();
    std::string h;
    h += "<!DOCTYPE html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>hdshap report</title>\n";
    h += "<style>body{font-family:sans-serif;max-width:1100px;margin:2em auto;color:#222}"
         "table{border-collapse:collapse;margin:1em 0}td,th{border:1px solid #bbb;padding:4px 10px;text-align:right}"
         "th{background:#f0f0f0}td.l,th.l{text-align:left}figure{margin:1.5em 0}"
         "figcaption{font-size:80%;color:#666}</style></head><body>\n";
    h += "<h1>hdshap run report</h1>\n";
    h += "<p>Tool version " + std::string(hds_version()) + ", config hash <code>" + run.hash + "</code>, seed " +
         std::to_string(run.seed()) + ".</p>\n";
    const json train = json::parse(read_file(run.dir / "data/train.json"));
    const json test = json::parse(read_file(run.dir / "data/test.json"));
    h += "<p>Data source: " + html_escape(run.config["data"]["source"].get<std::string>()) + "; " +
         std::to_string(ds["sample_ids"].size()) + " samples, " + std::to_string(ds["feature_names"].size()) +
         " features, " + std::to_string(class_names.size()) + " classes; " +
         std::to_string(train["sample_ids"].size()) + " training and " + std::to_string(test["sample_ids"].size()) +
         " test samples.</p>\n";

    h += "<h2>Classifier performance (test set)</h2>\n<table><tr><th class=\"l\">Model</th><th class=\"l\">Class</th>"
         "<th>Precision</th><th>Recall</th><th>Support</th></tr>\n";
    for (const auto& k : plan.kinds) {
      const json m = json::parse(read_file(run.dir / ("models/" + k + ".metrics.json")));
      const json& t = m["test"];
      for (std::size_t c = 0; c < class_names.size(); ++c)
        h += "<tr><td class=\"l\">" + k + "</td><td class=\"l\">" + html_escape(class_names[c]) + "</td><td>" +
             fixed(t["precision"][c].get<double>(), 2) + "</td><td>" + fixed(t["recall"][c].get<double>(), 2) +
             "</td><td>" + std::to_string(t["support"][c].get<std::size_t>()) + "</td></tr>\n";
      h += "<tr><td class=\"l\">" + k + "</td><td class=\"l\"><b>accuracy</b></td><td colspan=\"2\"><b>" +
           fixed(t["accuracy"].get<double>(), 3) + "</b></td><td>" + std::to_string(t["total"].get<std::size_t>()) +
           "</td></tr>\n";
    }
    h += "</table>\n";

    h += "<h2>SHAP explanations</h2>\n<table><tr><th class=\"l\">Model</th><th class=\"l\">Method</th>"
         "<th>Max additivity error</th></tr>\n";
    for (const auto& k : plan.kinds) {
      const json s = json::parse(read_file(run.dir / ("shap/" + k + ".summary.json")));
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2e", s["max_additivity_error"].get<double>());
      h += "<tr><td class=\"l\">" + k + "</td><td class=\"l\">" + s["method"].get<std::string>() + "</td><td>" +
           buf + "</td></tr>\n";
    }
    h += "</table>\n";
    for (const auto& k : plan.kinds) h += inline_svg(run, "plots/" + k + ".bar.svg");

    const auto& c = plan.cluster_kind;
    const json cl = json::parse(read_file(run.dir / ("clusters/" + c + ".summary.json")));
    h += "<h2>Subgroups (HDBSCAN on flattened " + c + " SHAP vectors)</h2>\n";
    h += "<p>" + std::to_string(cl["n_clusters"].get<std::size_t>()) + " clusters, " +
         std::to_string(cl["noise"].get<std::size_t>()) + " noise points.</p>\n";
    h += "<table><tr><th class=\"l\">Cluster</th><th>Size</th><th>Stability</th></tr>\n";
    for (std::size_t i = 0; i < cl["sizes"].size(); ++i)
      h += "<tr><td class=\"l\">" + std::to_string(i) + "</td><td>" + std::to_string(cl["sizes"][i].get<std::size_t>()) +
           "</td><td>" + fixed(cl["stability"][i].get<double>(), 3) + "</td></tr>\n";
    h += "</table>\n";
    h += inline_svg(run, "plots/" + c + ".paths.svg");
    h += inline_svg(run, "plots/" + c + ".heatmap.svg");
    h += inline_svg(run, "plots/" + c + ".embedding.svg");
    h += inline_svg(run, "plots/" + c + ".waterfall.svg");

    const fs::path purity_path = run.dir / ("clusters/" + c + ".purity.json");
    if (fs::exists(purity_path)) {
      const json pu = json::parse(read_file(purity_path));
      h += "<h2>Cluster purity against the generative groups</h2>\n<table><tr><th class=\"l\">Cluster</th>";
      for (const auto& g : pu["truth_values"]) h += "<th>" + html_escape(group_name(run, g.get<int>())) + "</th>";
      h += "<th class=\"l\">Majority</th><th>Purity</th></tr>\n";
      for (std::size_t r = 0; r < pu["clusters"].size(); ++r) {
        h += "<tr><td class=\"l\">" + std::to_string(pu["clusters"][r].get<int>()) + "</td>";
        for (const auto& v : pu["contingency"][r]) h += "<td>" + std::to_string(v.get<std::size_t>()) + "</td>";
        h += "<td class=\"l\">" + html_escape(group_name(run, pu["majority"][r].get<int>())) + "</td><td>" +
             fixed(pu["purity"][r].get<double>(), 3) + "</td></tr>\n";
      }
      h += "</table>\n<p>Overall purity " + fixed(pu["overall"].get<double>(), 3) + " over clustered points; " +
           std::to_string(pu["noise"].get<std::size_t>()) + " noise points excluded.</p>\n";
    }
    h += "</body></html>\n";
    write_file(run.dir / "report.html", h);
    run.record("report", {"report.html"});
    std::cout << "report: " << (run.dir / "report.html").string() << "\n";
  });
}

// ---------------------------------------------------------------------------
// Full pipeline with resume

void stage_run(Run& run, bool force) {
  const auto kinds = config_kinds(run);
  const std::string ck = run.config["cluster"]["model"];
  auto done = [&](std::initializer_list<std::string> names) {
    if (force) return false;
    for (const auto& n : names)
      if (!run.has(n)) return false;
    return true;
  };
  auto skip = [](const std::string& stage) { std::cout << stage << ": up to date\n"; };
  if (done({"dataset", "train", "test"}))
    skip("data");
  else {
    stage_data(run);
    force = true;  // everything downstream depends on the data
  }
  for (const auto& k : kinds) {
    if (done({"model." + k, "metrics." + k}))
      skip("train " + k);
    else
      stage_train(run, k);
    if (done({"tensor." + k}))
      skip("explain " + k);
    else
      stage_explain(run, k);
  }
  if (std::find(kinds.begin(), kinds.end(), ck) == kinds.end() && !done({"tensor." + ck})) {
    stage_train(run, ck);
    stage_explain(run, ck);
  }
  if (done({"labeling." + ck}))
    skip("cluster " + ck);
  else
    stage_cluster(run, ck);
  if (done({"embedding." + ck, "plot.embedding." + ck}))
    skip("embed " + ck);
  else
    stage_embed(run, ck);
  if (done({"plot.waterfall." + ck, "plot.paths." + ck}))
    skip("waterfall " + ck);
  else
    stage_waterfall(run, ck, "both");
  for (const auto& k : kinds) {
    if (done({"plot.bar." + k}))
      skip("bar " + k);
    else
      stage_bar(run, k);
  }
  if (done({"plot.heatmap." + ck}))
    skip("heatmap " + ck);
  else
    stage_heatmap(run, ck);
  stage_report(run);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hdshap: multi-class SHAP tensors, SHAP-based subgroup discovery and waterfall-path plots"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(hds_version()));

  Options opt;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--out", opt.out, "run directory (default: $HDSHAP_OUTPUT_ROOT/default)");
    sub->add_option("--config", opt.config_file, "JSON config file");
    sub->add_option_function<std::vector<std::string>>(
        "--set",
        [&](const std::vector<std::string>& items) {
          for (const auto& item : items) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected KEY=VALUE, got " + item);
            opt.overrides.emplace_back(item.substr(0, eq), parse_value(item.substr(eq + 1)));
          }
        },
        "override a config key, e.g. --set models.tree.max_depth=6");
    sub->add_option_function<long long>(
        "--seed", [&](const long long& v) { opt.overrides.emplace_back("seed", v); }, "master seed");
    sub->add_option_function<int>(
        "--threads", [&](const int& v) { opt.overrides.emplace_back("threads", v); }, "worker threads");
  };
  auto mirror = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    return sub->add_option_function<std::string>(
        flag, [&opt, key](const std::string& v) { opt.overrides.emplace_back(key, parse_value(v)); }, help);
  };
  auto mirror_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    return sub->add_flag_callback(flag, [&opt, key] { opt.overrides.emplace_back(key, true); }, help);
  };

  auto* simulate = app.add_subcommand("simulate", "simulate the three-class dataset and split it");
  common(simulate);
  mirror(simulate, "--n", "data.n_samples", "number of samples");
  mirror(simulate, "--p", "data.n_features", "number of features");
  mirror(simulate, "--half-width", "data.domain_half_width", "features are uniform on [-w, w]");
  mirror(simulate, "--train-fraction", "data.train_fraction", "training fraction");
  mirror_flag(simulate, "--stratified", "data.stratified", "stratified split");

  auto* load = app.add_subcommand("load", "load a CSV or IDX dataset and split it");
  common(load);
  std::string csv_path, idx_images, idx_labels;
  load->add_option("--csv", csv_path, "CSV file");
  mirror(load, "--target", "data.target", "CSV target column");
  load->add_option("--idx-images", idx_images, "IDX image file");
  load->add_option("--idx-labels", idx_labels, "IDX label file");
  load->add_option_function<std::vector<int>>(
      "--classes", [&](const std::vector<int>& v) { opt.overrides.emplace_back("data.classes", v); },
      "keep only these classes (label indices)")->delimiter(',');
  mirror(load, "--limit", "data.limit", "keep only the first N rows");
  mirror_flag(load, "--scale", "data.scale", "min-max scale features (fitted on the training split)");
  mirror(load, "--train-fraction", "data.train_fraction", "training fraction");
  mirror_flag(load, "--stratified", "data.stratified", "stratified split");

  std::vector<std::string> models;
  std::string model;
  auto* train = app.add_subcommand("train", "train classifiers");
  common(train);
  train->add_option("--model", models, "model kinds (default: models.kinds)")->delimiter(',');
  mirror_flag(train, "--grid-search", "models.grid_search", "select hyperparameters by cross-validated grid search");

  auto* explain = app.add_subcommand("explain", "compute SHAP tensors on the test split");
  common(explain);
  explain->add_option("--model", models, "model kinds (default: models.kinds)")->delimiter(',');
  mirror(explain, "--background-size", "shap.background_size", "Kernel SHAP background rows");
  mirror(explain, "--coalitions", "shap.n_coalitions", "Kernel SHAP coalition budget (0 = automatic)");
  mirror(explain, "--explain-rows", "shap.explain_rows", "explain only the first N test rows (0 = all)");

  auto* cluster = app.add_subcommand("cluster", "HDBSCAN on flattened SHAP vectors");
  common(cluster);
  cluster->add_option("--model", model, "source tensor (default: cluster.model)");
  mirror(cluster, "--min-cluster-size", "cluster.min_cluster_size", "HDBSCAN min_cluster_size");
  mirror(cluster, "--min-samples", "cluster.min_samples", "HDBSCAN min_samples (0 = min_cluster_size)");

  auto* embed = app.add_subcommand("embed", "PCA embedding of flattened SHAP vectors");
  common(embed);
  embed->add_option("--model", model, "source tensor (default: cluster.model)");
  mirror(embed, "--dims", "plots.embed_dims", "number of components");

  std::string mode = "both";
  auto* waterfall = app.add_subcommand("waterfall", "classical and high-dimensional waterfall plots");
  common(waterfall);
  waterfall->add_option("--model", model, "source tensor (default: cluster.model)");
  waterfall->add_option("--mode", mode, "classical, paths or both");
  mirror(waterfall, "--sample", "plots.waterfall_sample", "row of the explained set (classical plot)");
  mirror(waterfall, "--class", "plots.waterfall_class", "class index (classical plot)");
  mirror(waterfall, "--grouping", "plots.grouping", "clusters, per-sample or per-class");
  mirror(waterfall, "--fit-on", "plots.fit_on", "segments or vertices");
  mirror(waterfall, "--top-n", "plots.top_n", "bars before aggregation");
  mirror(waterfall, "--path-top-n", "plots.path_top_n", "path segments before aggregation (0 = all)");

  auto* bar = app.add_subcommand("bar", "stacked mean-|SHAP| bar charts");
  common(bar);
  bar->add_option("--model", models, "model kinds (default: models.kinds)")->delimiter(',');
  mirror(bar, "--top-n", "plots.top_n", "bars shown");

  auto* heatmap = app.add_subcommand("heatmap", "cluster-mean heatmap of raw features");
  common(heatmap);
  heatmap->add_option("--model", model, "source labeling (default: cluster.model)");
  heatmap->add_option_function<std::vector<int>>(
      "--features", [&](const std::vector<int>& v) { opt.overrides.emplace_back("plots.heatmap_features", v); },
      "feature indices (default: top mean-|SHAP| features)")->delimiter(',');
  mirror(heatmap, "--top-n", "plots.top_n", "features shown when --features is absent");

  auto* report = app.add_subcommand("report", "HTML summary of a completed run");
  common(report);

  bool force = false;
  auto* run_cmd = app.add_subcommand("run", "full pipeline; completed stages are reused");
  common(run_cmd);
  run_cmd->add_flag("--force", force, "recompute every stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (load->parsed()) {
      const int sources = !csv_path.empty() + (!idx_images.empty() || !idx_labels.empty());
      if (sources != 1) die(kExitConfig, "load needs exactly one of --csv or --idx-images/--idx-labels");
      if (!csv_path.empty()) {
        opt.overrides.emplace_back("data.source", "csv");
        opt.overrides.emplace_back("data.csv_path", csv_path);
      } else {
        opt.overrides.emplace_back("data.source", "idx");
        opt.overrides.emplace_back("data.idx_images", idx_images);
        opt.overrides.emplace_back("data.idx_labels", idx_labels);
      }
    }
    if (simulate->parsed()) opt.overrides.emplace_back("data.source", "simulate");

    Run run = open_run(opt);
    const std::string ck = model.empty() ? run.config["cluster"]["model"].get<std::string>() : model;
    const std::vector<std::string> kinds = models.empty() ? config_kinds(run) : models;

    if (simulate->parsed() || load->parsed()) stage_data(run);
    if (train->parsed())
      for (const auto& k : kinds) stage_train(run, k);
    if (explain->parsed())
      for (const auto& k : kinds) stage_explain(run, k);
    if (cluster->parsed()) stage_cluster(run, ck);
    if (embed->parsed()) stage_embed(run, ck);
    if (waterfall->parsed()) stage_waterfall(run, ck, mode);
    if (bar->parsed())
      for (const auto& k : kinds) stage_bar(run, k);
    if (heatmap->parsed()) stage_heatmap(run, ck);
    if (report->parsed()) stage_report(run);
    if (run_cmd->parsed()) stage_run(run, force);
    return 0;
  } catch (const CliError& e) {
    std::cerr << "hdshap: " << e.message << "\n";
    return e.code;
  } catch (const json::exception& e) {
    std::cerr << "hdshap: malformed JSON: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "hdshap: " << e.what() << "\n";
    return kExitInternal;
  }
}
