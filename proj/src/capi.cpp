#include "hdshap/hdshap.h"

#include <cstdlib>
#include <cstring>
#include <map>
#include <new>
#include <string>

#include "hdshap/data.hpp"
#include "hdshap/models.hpp"
#include "hdshap/shap.hpp"
#include "hdshap/subgroup.hpp"
#include "hdshap/viz.hpp"
#include "json.hpp"

using nlohmann::json;
using namespace hdshap;

struct hds_dataset {
  Dataset ds;
};
struct hds_model {
  TrainedModel model;
};
struct hds_tensor {
  ShapTensor t;
};
struct hds_labeling {
  ClusterLabeling labels;
  std::vector<std::int64_t> sample_ids;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
hds_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return HDS_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return static_cast<hds_status>(static_cast<int>(e.code()));
  } catch (const json::exception& e) {
    g_last_error = std::string("malformed JSON: ") + e.what();
    return HDS_ERR_PARSE;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return HDS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HDS_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  require(p != nullptr, std::string(what) + " must not be NULL");
}

json parse_options(const char* text) {
  if (!text || !*text) return json::object();
  json j = json::parse(text);
  require(j.is_object(), "options must be a JSON object", ErrorCode::kInvalidSpec);
  return j;
}

void hand_out(char** out, const std::string& s) {
  if (!out) return;
  char* buf = static_cast<char*>(std::malloc(s.size() + 1));
  if (!buf) throw std::bad_alloc();
  std::memcpy(buf, s.c_str(), s.size() + 1);
  *out = buf;
}

void hand_out(char** out, const json& j) {
  if (out) hand_out(out, j.dump());
}

void check_len(std::size_t got, std::size_t want, const char* what) {
  require(got == want, std::string(what) + " buffer has length " + std::to_string(got) + ", expected " +
                           std::to_string(want));
}

PlotSpec plot_spec(const json& o) {
  PlotSpec s;
  s.width = o.value("width", s.width);
  s.height = o.value("height", s.height);
  s.top_n = o.value("top_n", s.top_n);
  s.title = o.value("title", s.title);
  s.x_label = o.value("x_label", s.x_label);
  s.y_label = o.value("y_label", s.y_label);
  if (o.contains("palette")) s.palette = o["palette"].get<std::vector<std::string>>();
  s.validate();
  return s;
}

json report_to_json(const ClassificationReport& r) {
  json j;
  j["accuracy"] = r.accuracy;
  j["total"] = r.total;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["support"] = r.support;
  j["precision_undefined"] = r.precision_undefined;
  j["recall_undefined"] = r.recall_undefined;
  j["confusion"] = r.confusion;
  return j;
}

json param_value_json(const ParamValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  return std::get<std::vector<int>>(v);
}

ParamValue param_value_from(const json& j) {
  if (j.is_array()) return j.get<std::vector<int>>();
  require(j.is_number(), "grid values must be numbers or integer arrays", ErrorCode::kInvalidSpec);
  return j.get<double>();
}

std::string model_id(const TrainedModel& m) {
  return std::string(model_kind_name(kind_of(m))) + ":" + hex64(fnv1a64(model_to_json(m)));
}

}  // namespace

extern "C" {

const char* hds_version(void) { return "0.1.0"; }
const char* hds_last_error_message(void) { return g_last_error.c_str(); }
void hds_string_free(char* s) { std::free(s); }
uint64_t hds_hash_bytes(const void* data, size_t len) {
  return fnv1a64(std::string_view(static_cast<const char*>(data), len));
}

// ---- datasets ---------------------------------------------------------------

hds_status hds_dataset_simulate(const char* spec_json, hds_dataset** out) {
  return guarded([&] {
    need(out, "out");
    const json o = parse_options(spec_json);
    SimulationSpec spec;
    spec.n_samples = o.value("n_samples", spec.n_samples);
    spec.n_features = o.value("n_features", spec.n_features);
    spec.domain_half_width = o.value("domain_half_width", spec.domain_half_width);
    spec.seed = o.value("seed", spec.seed);
    if (o.contains("noise_coefficients") && !o["noise_coefficients"].is_null()) {
      const auto rows = o["noise_coefficients"].get<std::vector<std::vector<double>>>();
      require(rows.size() == 2, "noise_coefficients must have two rows", ErrorCode::kInvalidSpec);
      Matrix beta(2, static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < 2; ++r) {
        require(rows[r].size() == rows[0].size(), "noise_coefficients rows differ in length",
                ErrorCode::kInvalidSpec);
        for (std::size_t c = 0; c < rows[r].size(); ++c)
          beta(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
      }
      spec.noise_coefficients = beta;
    }
    *out = new hds_dataset{simulate(spec)};
  });
}

hds_status hds_dataset_load_csv(const char* path, const char* target_column, hds_dataset** out,
                                size_t* dropped_rows) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto res = load_csv(path, target_column ? target_column : "label");
    if (dropped_rows) *dropped_rows = res.dropped_rows;
    *out = new hds_dataset{std::move(res.dataset)};
  });
}

hds_status hds_dataset_load_idx(const char* images_path, const char* labels_path, hds_dataset** out) {
  return guarded([&] {
    need(images_path, "images_path");
    need(labels_path, "labels_path");
    need(out, "out");
    *out = new hds_dataset{load_idx_images(images_path, labels_path)};
  });
}

hds_status hds_dataset_load(const char* manifest_path, hds_dataset** out) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out, "out");
    *out = new hds_dataset{load_dataset(manifest_path)};
  });
}

hds_status hds_dataset_save(const hds_dataset* ds, const char* csv_path, const char* manifest_path) {
  return guarded([&] {
    need(ds, "dataset");
    need(csv_path, "csv_path");
    need(manifest_path, "manifest_path");
    save_dataset(ds->ds, csv_path, manifest_path);
  });
}

hds_status hds_dataset_split(const hds_dataset* ds, double train_fraction, int stratified, uint64_t seed,
                             hds_dataset** train, hds_dataset** test) {
  return guarded([&] {
    need(ds, "dataset");
    need(train, "train");
    need(test, "test");
    auto parts = split(ds->ds, SplitSpec{train_fraction, stratified != 0, seed});
    auto* a = new hds_dataset{std::move(parts.train)};
    *test = new hds_dataset{std::move(parts.test)};
    *train = a;
  });
}

hds_status hds_dataset_filter_classes(const hds_dataset* ds, const int* classes, size_t n_classes,
                                      hds_dataset** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(classes, "classes");
    need(out, "out");
    *out = new hds_dataset{filter_classes(ds->ds, std::span<const int>(classes, n_classes))};
  });
}

hds_status hds_dataset_head(const hds_dataset* ds, size_t n_rows, hds_dataset** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    std::vector<std::size_t> rows(std::min(n_rows, ds->ds.n_samples()));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    *out = new hds_dataset{subset_rows(ds->ds, rows)};
  });
}

hds_status hds_dataset_scale(const hds_dataset* reference, const hds_dataset* ds, hds_dataset** out) {
  return guarded([&] {
    need(reference, "reference");
    need(ds, "dataset");
    need(out, "out");
    const auto fitted = min_max_scale(reference->ds);
    *out = new hds_dataset{apply_scaling(ds->ds, fitted.meta)};
  });
}

hds_status hds_dataset_info(const hds_dataset* ds, char** info_json) {
  return guarded([&] {
    need(ds, "dataset");
    json j;
    j["n_samples"] = ds->ds.n_samples();
    j["n_features"] = ds->ds.n_features();
    j["n_classes"] = ds->ds.n_classes();
    j["feature_names"] = ds->ds.feature_names;
    j["class_names"] = ds->ds.class_names;
    j["class_counts"] = ds->ds.class_counts();
    j["has_groups"] = ds->ds.groups.has_value();
    j["scaled"] = ds->ds.scaling.has_value();
    hand_out(info_json, j);
  });
}

hds_status hds_dataset_features(const hds_dataset* ds, double* out, size_t len) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    check_len(len, ds->ds.n_samples() * ds->ds.n_features(), "feature");
    std::memcpy(out, ds->ds.features.data(), len * sizeof(double));
  });
}

hds_status hds_dataset_labels(const hds_dataset* ds, int* out, size_t len) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    check_len(len, ds->ds.n_samples(), "label");
    std::copy(ds->ds.labels.begin(), ds->ds.labels.end(), out);
  });
}

hds_status hds_dataset_groups(const hds_dataset* ds, int* out, size_t len) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    require(ds->ds.groups.has_value(), "dataset has no ground-truth groups");
    check_len(len, ds->ds.n_samples(), "group");
    std::copy(ds->ds.groups->begin(), ds->ds.groups->end(), out);
  });
}

void hds_dataset_free(hds_dataset* ds) { delete ds; }

// ---- models -----------------------------------------------------------------

hds_status hds_model_train(const hds_dataset* train, const char* kind, const char* params_json,
                           hds_model** out, char** info_json) {
  return guarded([&] {
    need(train, "train");
    need(kind, "kind");
    need(out, "out");
    const ModelKind mk = parse_model_kind(kind);
    const ModelParams params = params_json && *params_json ? params_from_json(mk, params_json) : default_params(mk);
    std::vector<double> history;
    TrainedModel model = [&]() -> TrainedModel {
      switch (mk) {
        case ModelKind::kBoosted:
          return train_boosted(train->ds, std::get<BoostParams>(params), &history);
        case ModelKind::kMlp:
          return train_mlp(train->ds, std::get<MlpParams>(params), &history);
        default:
          return train_model(train->ds, params);
      }
    }();
    if (info_json) {
      json j;
      j["kind"] = model_kind_name(mk);
      j["params"] = json::parse(params_to_json(params));
      j["loss_history"] = history;
      hand_out(info_json, j);
    }
    *out = new hds_model{std::move(model)};
  });
}

hds_status hds_grid_search(const hds_dataset* train, const char* kind, const char* spec_json, char** result_json) {
  return guarded([&] {
    need(train, "train");
    need(kind, "kind");
    need(result_json, "result_json");
    const ModelKind mk = parse_model_kind(kind);
    const json o = parse_options(spec_json);
    ModelParams base = o.contains("base") ? params_from_json(mk, o["base"].dump()) : default_params(mk);
    GridSearchSpec spec = default_grid(mk);
    if (o.contains("axes")) {
      spec.axes.clear();
      for (const auto& [name, values] : o["axes"].items()) {
        GridAxis axis{name, {}};
        for (const auto& v : values) axis.candidates.push_back(param_value_from(v));
        spec.axes.push_back(std::move(axis));
      }
    }
    spec.n_folds = o.value("n_folds", spec.n_folds);
    spec.stratified = o.value("stratified", spec.stratified);
    spec.seed = o.value("seed", spec.seed);
    const auto res = grid_search(train->ds, base, spec);
    json j;
    j["best"] = json::parse(params_to_json(res.best));
    j["best_index"] = res.best_index;
    j["table"] = json::array();
    for (const auto& cell : res.table) {
      json row;
      for (std::size_t a = 0; a < spec.axes.size(); ++a) row["params"][spec.axes[a].name] = param_value_json(cell.values[a]);
      row["mean_accuracy"] = cell.mean_accuracy;
      row["fold_accuracy"] = cell.fold_accuracy;
      j["table"].push_back(row);
    }
    hand_out(result_json, j);
  });
}

hds_status hds_model_save(const hds_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    save_model(model->model, path);
  });
}

hds_status hds_model_load(const char* path, hds_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new hds_model{load_model(path)};
  });
}

hds_status hds_model_info(const hds_model* model, char** info_json) {
  return guarded([&] {
    need(model, "model");
    const auto& mm = as_margin_model(model->model);
    json j;
    j["kind"] = model_kind_name(kind_of(model->model));
    j["n_features"] = mm.n_features();
    j["n_classes"] = mm.n_classes();
    j["id"] = model_id(model->model);
    hand_out(info_json, j);
  });
}

hds_status hds_model_evaluate(const hds_model* model, const hds_dataset* ds, char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    hand_out(report_json, report_to_json(evaluate(as_margin_model(model->model), ds->ds)));
  });
}

hds_status hds_model_margins(const hds_model* model, const hds_dataset* ds, double* out, size_t len) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(out, "out");
    const Matrix m = as_margin_model(model->model).predict_margins(ds->ds.features);
    check_len(len, static_cast<std::size_t>(m.size()), "margin");
    std::memcpy(out, m.data(), len * sizeof(double));
  });
}

void hds_model_free(hds_model* model) { delete model; }

// ---- tensors ----------------------------------------------------------------

hds_status hds_explain_tree(const hds_model* model, const hds_dataset* ds, hds_tensor** out) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(out, "out");
    ShapTensor t = tree_shap(model->model, ds->ds.features);
    t.describe(ds->ds);
    t.model_id = model_id(model->model);
    t.background_id = "training-cover";
    t.method = "tree_shap_path_dependent";
    *out = new hds_tensor{std::move(t)};
  });
}

hds_status hds_explain_kernel(const hds_model* model, const hds_dataset* ds, const hds_dataset* reference,
                              const char* options_json, hds_tensor** out, char** report_json) {
  return guarded([&] {
    need(model, "model");
    need(ds, "dataset");
    need(reference, "reference");
    need(out, "out");
    const json o = parse_options(options_json);
    const auto& mm = as_margin_model(model->model);
    KernelShapOptions opts;
    opts.n_coalitions = o.value("n_coalitions", opts.n_coalitions);
    opts.seed = o.value("seed", opts.seed);
    opts.threads = o.value("threads", opts.threads);
    const std::size_t bg_size = o.value("background_size", std::size_t{100});
    const Background bg = make_background(reference->ds, bg_size, opts.seed);
    const Matrix ref_margins = mm.predict_margins(reference->ds.features);
    const Vector mean = ref_margins.colwise().mean().transpose();
    opts.base = std::vector<double>(mean.data(), mean.data() + mean.size());
    KernelShapReport rep;
    ShapTensor t = kernel_shap(mm, ds->ds.features, bg, opts, &rep);
    t.describe(ds->ds);
    t.model_id = model_id(model->model);
    t.method = "kernel_shap";
    if (report_json) {
      json j{{"coalitions", rep.coalitions},
             {"exact", rep.exact},
             {"rank_deficient", rep.rank_deficient},
             {"max_additivity_error", rep.max_additivity_error}};
      hand_out(report_json, j);
    }
    *out = new hds_tensor{std::move(t)};
  });
}

hds_status hds_tensor_save(const hds_tensor* t, const char* manifest_path, const char* csv_path) {
  return guarded([&] {
    need(t, "tensor");
    need(manifest_path, "manifest_path");
    need(csv_path, "csv_path");
    save_tensor(t->t, manifest_path, csv_path);
  });
}

hds_status hds_tensor_load(const char* manifest_path, hds_tensor** out) {
  return guarded([&] {
    need(manifest_path, "manifest_path");
    need(out, "out");
    *out = new hds_tensor{load_tensor(manifest_path)};
  });
}

hds_status hds_tensor_info(const hds_tensor* t, char** info_json) {
  return guarded([&] {
    need(t, "tensor");
    json j;
    j["n_samples"] = t->t.n;
    j["n_features"] = t->t.p;
    j["n_classes"] = t->t.k;
    j["base"] = t->t.base;
    j["feature_names"] = t->t.feature_names;
    j["class_names"] = t->t.class_names;
    j["model_id"] = t->t.model_id;
    j["background_id"] = t->t.background_id;
    j["method"] = t->t.method;
    hand_out(info_json, j);
  });
}

hds_status hds_tensor_values(const hds_tensor* t, double* out, size_t len) {
  return guarded([&] {
    need(t, "tensor");
    need(out, "out");
    check_len(len, t->t.values.size(), "tensor");
    std::copy(t->t.values.begin(), t->t.values.end(), out);
  });
}

hds_status hds_tensor_mean_abs(const hds_tensor* t, double* out, size_t len) {
  return guarded([&] {
    need(t, "tensor");
    need(out, "out");
    const Matrix m = mean_abs(t->t);
    check_len(len, static_cast<std::size_t>(m.size()), "mean-abs");
    std::memcpy(out, m.data(), len * sizeof(double));
  });
}

hds_status hds_tensor_additivity_error(const hds_tensor* t, const hds_model* model, const hds_dataset* ds,
                                       double* out) {
  return guarded([&] {
    need(t, "tensor");
    need(model, "model");
    need(ds, "dataset");
    need(out, "out");
    *out = max_additivity_error(t->t, as_margin_model(model->model).predict_margins(ds->ds.features));
  });
}

void hds_tensor_free(hds_tensor* t) { delete t; }

// ---- subgroups --------------------------------------------------------------

hds_status hds_cluster(const hds_tensor* t, const char* params_json, hds_labeling** out) {
  return guarded([&] {
    need(t, "tensor");
    need(out, "out");
    const json o = parse_options(params_json);
    HdbscanParams p;
    p.min_cluster_size = o.value("min_cluster_size", p.min_cluster_size);
    p.min_samples = o.value("min_samples", p.min_samples);
    auto labels = hdbscan(flatten(t->t), p);
    std::vector<std::int64_t> ids = t->t.sample_ids;
    if (ids.size() != t->t.n) {
      ids.resize(t->t.n);
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
    }
    *out = new hds_labeling{std::move(labels), std::move(ids)};
  });
}

hds_status hds_labeling_save(const hds_labeling* l, const char* csv_path) {
  return guarded([&] {
    need(l, "labeling");
    need(csv_path, "csv_path");
    write_text_file(csv_path, labeling_to_csv(l->labels, l->sample_ids));
  });
}

hds_status hds_labeling_load(const char* csv_path, hds_labeling** out) {
  return guarded([&] {
    need(csv_path, "csv_path");
    need(out, "out");
    std::vector<std::int64_t> ids;
    auto labels = labeling_from_csv(read_text_file(csv_path), &ids);
    *out = new hds_labeling{std::move(labels), std::move(ids)};
  });
}

hds_status hds_labeling_info(const hds_labeling* l, char** info_json) {
  return guarded([&] {
    need(l, "labeling");
    std::vector<std::size_t> sizes(l->labels.n_clusters, 0);
    std::size_t noise = 0;
    for (int v : l->labels.labels) {
      if (v < 0)
        ++noise;
      else
        ++sizes[static_cast<std::size_t>(v)];
    }
    json j{{"n_samples", l->labels.labels.size()},
           {"n_clusters", l->labels.n_clusters},
           {"noise", noise},
           {"sizes", sizes},
           {"stability", l->labels.stability}};
    hand_out(info_json, j);
  });
}

hds_status hds_labeling_labels(const hds_labeling* l, int* out, size_t len) {
  return guarded([&] {
    need(l, "labeling");
    need(out, "out");
    check_len(len, l->labels.labels.size(), "label");
    std::copy(l->labels.labels.begin(), l->labels.labels.end(), out);
  });
}

void hds_labeling_free(hds_labeling* l) { delete l; }

hds_status hds_purity(const hds_labeling* l, const hds_dataset* ds, char** report_json) {
  return guarded([&] {
    need(l, "labeling");
    need(ds, "dataset");
    require(ds->ds.groups.has_value(), "dataset has no ground-truth groups");
    require(l->sample_ids == ds->ds.sample_ids, "labeling and dataset rows do not match");
    const auto rep = cluster_purity(l->labels, *ds->ds.groups);
    json j{{"clusters", rep.clusters},   {"truth_values", rep.truth_values}, {"contingency", rep.contingency},
           {"majority", rep.majority},   {"purity", rep.purity},             {"noise", rep.noise},
           {"overall", rep.overall}};
    hand_out(report_json, j);
  });
}

hds_status hds_embed(const hds_tensor* t, size_t r, const hds_labeling* labels, const char* csv_path,
                     const char* svg_path, char** info_json) {
  return guarded([&] {
    need(t, "tensor");
    need(csv_path, "csv_path");
    const Matrix flat = flatten(t->t);
    const PcaModel pca = pca_fit(flat, r);
    const Matrix scores = pca_transform(pca, flat);
    std::span<const int> lab;
    if (labels) {
      require(labels->labels.labels.size() == t->t.n, "labeling length does not match tensor");
      lab = labels->labels.labels;
    }
    std::vector<std::int64_t> ids = t->t.sample_ids;
    if (ids.size() != t->t.n) {
      ids.resize(t->t.n);
      for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::int64_t>(i);
    }
    write_text_file(csv_path, scores_to_csv(scores, ids, lab));
    if (svg_path) {
      require(r >= 2, "a scatter plot needs r >= 2");
      PlotSpec spec;
      spec.title = "PCA of flattened SHAP vectors";
      write_text_file(svg_path, render_scatter(scores, lab, spec));
    }
    if (info_json) {
      std::vector<double> ev(pca.eigenvalues.data(), pca.eigenvalues.data() + pca.eigenvalues.size());
      std::vector<double> explained;
      for (double e : ev) explained.push_back(pca.total_variance > 0 ? e / pca.total_variance : 0.0);
      hand_out(info_json, json{{"eigenvalues", ev}, {"total_variance", pca.total_variance}, {"explained", explained}});
    }
  });
}

// ---- plots ------------------------------------------------------------------

hds_status hds_plot_waterfall(const hds_tensor* t, size_t sample, size_t class_index, const char* options_json,
                              const char* svg_path, char** info_json) {
  return guarded([&] {
    need(t, "tensor");
    need(svg_path, "svg_path");
    const auto wf = classical_waterfall(t->t, sample, class_index, plot_spec(parse_options(options_json)));
    write_text_file(svg_path, wf.svg);
    if (info_json) {
      json bars = json::array();
      for (const auto& b : wf.bars)
        bars.push_back({{"feature", b.feature}, {"label", b.label}, {"value", b.value}, {"start", b.start}, {"end", b.end}});
      hand_out(info_json, json{{"base", wf.base}, {"tip", wf.tip}, {"bars", bars}});
    }
  });
}

hds_status hds_plot_paths(const hds_tensor* t, const hds_labeling* labels, const char* options_json,
                          const char* svg_path, const char* csv_path, char** info_json) {
  return guarded([&] {
    need(t, "tensor");
    need(svg_path, "svg_path");
    const json o = parse_options(options_json);
    const std::string grouping = o.value("grouping", std::string(labels ? "clusters" : "per-class"));
    std::vector<int> groups;
    std::string prefix = "cluster ";
    if (grouping == "clusters") {
      require(labels != nullptr, "cluster grouping needs a labeling");
      require(labels->labels.labels.size() == t->t.n, "labeling length does not match tensor");
      groups = labels->labels.labels;
    } else if (grouping == "per-sample") {
      groups = per_sample_grouping(t->t.n);
      prefix = "sample ";
    } else if (grouping == "per-class") {
      // Predicted class from the explained margins: base + sum of phi.
      Matrix margins(static_cast<Eigen::Index>(t->t.n), static_cast<Eigen::Index>(t->t.k));
      for (std::size_t i = 0; i < t->t.n; ++i) {
        const auto s = t->t.row_sum(i);
        for (std::size_t c = 0; c < t->t.k; ++c)
          margins(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = t->t.base[c] + s[c];
      }
      groups = per_class_grouping(margins);
      prefix = "predicted class ";
    } else {
      fail(ErrorCode::kInvalidSpec, "grouping must be clusters, per-sample or per-class");
    }
    PlotSpec spec = plot_spec(o);
    if (spec.title.empty()) spec.title = "High-dimensional waterfall paths";
    const PathSet set = build_paths(t->t, groups, o.value("path_top_n", std::size_t{0}), prefix);
    const auto pr = project_paths(set, 2, parse_path_fit(o.value("fit_on", std::string("segments"))));
    write_text_file(svg_path, render_paths(pr, spec));
    if (csv_path) write_text_file(csv_path, paths_to_csv(pr));
    if (info_json) {
      json paths = json::array();
      for (const auto& p : set.paths) {
        std::vector<int> feats;
        for (const auto& e : p.entries) feats.push_back(e.feature);
        paths.push_back({{"group", p.group}, {"size", p.size}, {"features", feats}, {"endpoint", p.endpoint}});
      }
      hand_out(info_json, json{{"paths", paths}, {"noise", set.noise}, {"warning", pr.warning}});
    }
  });
}

hds_status hds_plot_bar(const hds_tensor* t, const char* options_json, const char* svg_path, char** info_json) {
  return guarded([&] {
    need(t, "tensor");
    need(svg_path, "svg_path");
    PlotSpec spec = plot_spec(parse_options(options_json));
    if (spec.title.empty()) spec.title = "Mean |SHAP value| by feature and class";
    const auto bar = stacked_bar(mean_abs(t->t), t->t.feature_names, t->t.class_names, spec);
    write_text_file(svg_path, bar.svg);
    hand_out(info_json, json{{"order", bar.order}, {"totals", bar.totals}});
  });
}

hds_status hds_plot_heatmap(const hds_dataset* ds, const hds_labeling* labels, const hds_tensor* t,
                            const char* options_json, const char* svg_path, char** info_json) {
  return guarded([&] {
    need(ds, "dataset");
    need(labels, "labeling");
    need(svg_path, "svg_path");
    const json o = parse_options(options_json);
    PlotSpec spec = plot_spec(o);
    if (spec.title.empty()) spec.title = "Cluster means of raw features";
    std::vector<std::size_t> features;
    if (o.contains("features")) {
      features = o["features"].get<std::vector<std::size_t>>();
    } else {
      require(t != nullptr, "heatmap needs a feature list or a tensor to rank features");
      features = top_features(mean_abs(t->t), spec.top_n);
    }
    const auto hm = cluster_heatmap(ds->ds, labels->labels.labels, features, spec);
    write_text_file(svg_path, hm.svg);
    if (info_json) {
      std::vector<std::vector<double>> cells(static_cast<std::size_t>(hm.cells.rows()));
      for (Eigen::Index r = 0; r < hm.cells.rows(); ++r)
        for (Eigen::Index c = 0; c < hm.cells.cols(); ++c) cells[static_cast<std::size_t>(r)].push_back(hm.cells(r, c));
      hand_out(info_json, json{{"clusters", hm.clusters}, {"features", hm.features}, {"cells", cells},
                               {"global_mean", hm.global_mean}});
    }
  });
}

}  // extern "C"
