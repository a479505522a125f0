#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "hdshap/viz.hpp"

namespace hdshap {

namespace {

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return format_fixed(v, 2); }

class Svg {
 public:
  Svg(int w, int h) {
    out_ = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
           "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" +
           std::to_string(w) + "\" height=\"" + std::to_string(h) + "\" viewBox=\"0 0 " +
           std::to_string(w) + " " + std::to_string(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out_ += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(w) + "\" height=\"" + std::to_string(h) +
            "\" fill=\"white\"/>\n";
  }
  void raw(const std::string& s) { out_ += s; }
  void line(double x1, double y1, double x2, double y2, const std::string& stroke, double width = 1.0,
            const std::string& extra = "") {
    out_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) + "\" y2=\"" + num(y2) +
            "\" stroke=\"" + stroke + "\" stroke-width=\"" + num(width) + "\"" + extra + "/>\n";
  }
  void rect(double x, double y, double w, double h, const std::string& fill, const std::string& extra = "") {
    out_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(std::max(w, 0.0)) +
            "\" height=\"" + num(std::max(h, 0.0)) + "\" fill=\"" + fill + "\"" + extra + "/>\n";
  }
  void text(double x, double y, const std::string& s, const std::string& anchor = "start",
            const std::string& extra = "") {
    out_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\"" + extra + ">" +
            esc(s) + "</text>\n";
  }
  void circle(double x, double y, double r, const std::string& fill, const std::string& extra = "") {
    out_ += "<circle cx=\"" + num(x) + "\" cy=\"" + num(y) + "\" r=\"" + num(r) + "\" fill=\"" + fill + "\"" +
            extra + "/>\n";
  }
  std::string finish() { return out_ + "</svg>\n"; }

 private:
  std::string out_;
};

// Linear map from a data interval onto a pixel interval.
struct Axis {
  double lo = 0.0, hi = 1.0;
  double p0 = 0.0, p1 = 1.0;
  double operator()(double v) const { return p0 + (v - lo) / (hi - lo) * (p1 - p0); }
};

void widen(double& lo, double& hi, double pad_fraction) {
  if (!(hi > lo)) {
    const double c = lo;
    lo = c - 1.0;
    hi = c + 1.0;
    return;
  }
  const double pad = (hi - lo) * pad_fraction;
  lo -= pad;
  hi += pad;
}

const std::string& color_at(const PlotSpec& spec, std::size_t i) {
  const auto& pal = spec.palette.empty() ? default_palette() : spec.palette;
  return pal[i % pal.size()];
}

void title(Svg& svg, const PlotSpec& spec) {
  if (!spec.title.empty())
    svg.text(spec.width / 2.0, 20.0, spec.title, "middle", " font-size=\"15\" font-weight=\"bold\"");
}

std::string feature_name(const std::vector<std::string>& names, int j) {
  if (j < 0) return "other";
  const auto u = static_cast<std::size_t>(j);
  return u < names.size() ? names[u] : "f" + std::to_string(j);
}

double row_norm(const Matrix& m, Eigen::Index r) { return m.row(r).norm(); }

// Indices sorted by descending key, ties by index.
std::vector<std::size_t> order_desc(const std::vector<double>& key) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  return idx;
}

}  // namespace

void PlotSpec::validate() const {
  require(width >= 100 && height >= 100, "plot size must be at least 100 x 100 pixels");
  require(top_n >= 1, "top_n must be at least 1");
}

const std::vector<std::string>& default_palette() {
  static const std::vector<std::string> pal = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                               "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return pal;
}

// ---------------------------------------------------------------------------

ClassicalWaterfall classical_waterfall(const ShapTensor& t, std::size_t sample, std::size_t class_index,
                                       const PlotSpec& spec) {
  spec.validate();
  require(sample < t.n, "sample index " + std::to_string(sample) + " out of range");
  require(class_index < t.k, "class index " + std::to_string(class_index) + " out of range");

  std::vector<double> mag(t.p);
  for (std::size_t j = 0; j < t.p; ++j) mag[j] = std::abs(t.at(sample, j, class_index));
  std::vector<std::size_t> order;
  for (auto j : order_desc(mag))
    if (mag[j] > 0.0) order.push_back(j);

  ClassicalWaterfall wf;
  wf.base = t.base[class_index];
  double level = wf.base;
  auto push = [&](int feature, const std::string& label, double v) {
    wf.bars.push_back({feature, label, v, level, level + v});
    level += v;
  };
  const std::size_t shown = std::min(order.size(), spec.top_n);
  for (std::size_t r = 0; r < shown; ++r) {
    const auto j = order[r];
    push(static_cast<int>(j), feature_name(t.feature_names, static_cast<int>(j)), t.at(sample, j, class_index));
  }
  if (order.size() > shown) {
    double rest = 0.0;
    for (std::size_t r = shown; r < order.size(); ++r) rest += t.at(sample, order[r], class_index);
    push(-1, std::to_string(order.size() - shown) + " other features", rest);
  }
  wf.tip = level;

  Svg svg(spec.width, spec.height);
  title(svg, spec);
  const double left = 170.0, right = spec.width - 30.0, top = 50.0, bottom = spec.height - 50.0;
  double lo = std::min(wf.base, wf.tip), hi = std::max(wf.base, wf.tip);
  for (const auto& b : wf.bars) {
    lo = std::min({lo, b.start, b.end});
    hi = std::max({hi, b.start, b.end});
  }
  widen(lo, hi, 0.08);
  const Axis ax{lo, hi, left, right};
  svg.line(left, bottom, right, bottom, "black");
  for (int i = 0; i <= 4; ++i) {
    const double v = lo + (hi - lo) * i / 4.0;
    svg.line(ax(v), bottom, ax(v), bottom + 4, "black");
    svg.text(ax(v), bottom + 16, num(v), "middle");
  }
  svg.text((left + right) / 2, spec.height - 12.0, spec.x_label.empty() ? "model output (margin)" : spec.x_label,
           "middle");
  const double row_h = wf.bars.empty() ? 0.0 : std::min(28.0, (bottom - top - 10.0) / wf.bars.size());
  for (std::size_t r = 0; r < wf.bars.size(); ++r) {
    const auto& b = wf.bars[r];
    const double y = top + r * row_h;
    const double x0 = ax(std::min(b.start, b.end)), x1 = ax(std::max(b.start, b.end));
    svg.rect(x0, y + 3, x1 - x0, row_h - 6, b.value >= 0 ? "#ff0051" : "#008bfb",
             " class=\"bar\" data-feature=\"" + std::to_string(b.feature) + "\"");
    svg.text(left - 8, y + row_h / 2 + 4, b.label, "end");
    svg.text(x1 + 4, y + row_h / 2 + 4, (b.value >= 0 ? "+" : "") + num(b.value), "start", " font-size=\"10\"");
    if (r + 1 < wf.bars.size())
      svg.line(ax(b.end), y + row_h - 3, ax(b.end), y + row_h + 3, "#999999", 1.0, " stroke-dasharray=\"2,2\"");
  }
  svg.line(ax(wf.base), top - 5, ax(wf.base), bottom, "#555555", 1.0, " stroke-dasharray=\"4,3\"");
  svg.text(ax(wf.base), bottom - 6, "E[f(x)] = " + num(wf.base), "middle", " font-size=\"10\"");
  svg.line(ax(wf.tip), top - 5, ax(wf.tip), bottom, "black", 1.5, " class=\"prediction\"");
  svg.text(ax(wf.tip), top - 10, "f(x) = " + num(wf.tip), "middle", " class=\"prediction-label\"");
  wf.svg = svg.finish();
  return wf;
}

// ---------------------------------------------------------------------------

PathSet build_paths(const ShapTensor& t, std::span<const int> labels, std::size_t top_n,
                    const std::string& group_prefix) {
  require(labels.size() == t.n, "grouping length does not match tensor");
  PathSet out;
  out.feature_names = t.feature_names;
  out.base = t.base;
  out.noise = static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](int l) { return l < 0; }));
  const auto means = cluster_mean(t, labels);
  for (const auto& cm : means) {
    WaterfallPath path;
    path.group = group_prefix + std::to_string(cm.label);
    path.group_label = cm.label;
    path.size = cm.size;
    path.anchor.assign(t.k, 0.0);
    std::vector<double> norms(t.p);
    for (std::size_t j = 0; j < t.p; ++j) norms[j] = row_norm(cm.mean, static_cast<Eigen::Index>(j));
    const auto order = order_desc(norms);
    const std::size_t shown = top_n == 0 ? t.p : std::min(top_n, t.p);
    auto row = [&](std::size_t j) {
      std::vector<double> v(t.k);
      for (std::size_t c = 0; c < t.k; ++c) v[c] = cm.mean(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
      return v;
    };
    for (std::size_t r = 0; r < shown; ++r) path.entries.push_back({static_cast<int>(order[r]), row(order[r])});
    if (shown < t.p) {
      std::vector<double> rest(t.k, 0.0);
      for (std::size_t r = shown; r < t.p; ++r)
        for (std::size_t c = 0; c < t.k; ++c) rest[c] += cm.mean(static_cast<Eigen::Index>(order[r]), static_cast<Eigen::Index>(c));
      path.entries.push_back({-1, rest});
    }
    path.endpoint = path.anchor;
    for (const auto& e : path.entries)
      for (std::size_t c = 0; c < t.k; ++c) path.endpoint[c] += e.segment[c];
    out.paths.push_back(std::move(path));
  }
  return out;
}

std::vector<int> per_sample_grouping(std::size_t n) {
  std::vector<int> g(n);
  std::iota(g.begin(), g.end(), 0);
  return g;
}

std::vector<int> per_class_grouping(const Matrix& margins) {
  std::vector<int> g(static_cast<std::size_t>(margins.rows()));
  for (Eigen::Index i = 0; i < margins.rows(); ++i) {
    Eigen::Index best = 0;
    margins.row(i).maxCoeff(&best);
    g[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return g;
}

PathFit parse_path_fit(const std::string& name) {
  if (name == "segments") return PathFit::kSegments;
  if (name == "vertices") return PathFit::kVertices;
  fail(ErrorCode::kInvalidArgument, "fit-on must be 'segments' or 'vertices', got '" + name + "'");
}

ProjectedPaths project_paths(const PathSet& set, std::size_t r, PathFit fit) {
  require(r >= 1, "projection dimension must be at least 1");
  ProjectedPaths out;
  out.feature_names = set.feature_names;
  out.noise = set.noise;
  std::size_t k = 0;
  std::size_t n_segments = 0;
  for (const auto& p : set.paths) {
    k = p.anchor.size();
    n_segments += p.entries.size();
  }

  auto vertices_of = [](const WaterfallPath& p) {
    Matrix v(static_cast<Eigen::Index>(p.entries.size() + 1), static_cast<Eigen::Index>(p.anchor.size()));
    for (std::size_t c = 0; c < p.anchor.size(); ++c) v(0, static_cast<Eigen::Index>(c)) = p.anchor[c];
    for (std::size_t s = 0; s < p.entries.size(); ++s)
      for (std::size_t c = 0; c < p.anchor.size(); ++c)
        v(static_cast<Eigen::Index>(s + 1), static_cast<Eigen::Index>(c)) =
            v(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c)) + p.entries[s].segment[c];
    return v;
  };
  auto base_info = [](const WaterfallPath& p) {
    ProjectedPath pp;
    pp.group = p.group;
    pp.size = p.size;
    for (const auto& e : p.entries) pp.features.push_back(e.feature);
    return pp;
  };

  if (set.paths.empty()) {
    out.origin = Matrix::Zero(1, static_cast<Eigen::Index>(std::max<std::size_t>(r, 2)));
    return out;
  }

  if (k < 2) {
    out.warning = "k = 1: projection unnecessary, plotting step index against the running sum";
    out.origin = Matrix::Zero(1, 2);
    for (const auto& p : set.paths) {
      ProjectedPath pp = base_info(p);
      const Matrix v = vertices_of(p);
      pp.vertices.resize(v.rows(), 2);
      for (Eigen::Index s = 0; s < v.rows(); ++s) {
        pp.vertices(s, 0) = static_cast<double>(s);
        pp.vertices(s, 1) = v(s, 0);
      }
      out.paths.push_back(std::move(pp));
    }
    return out;
  }

  Matrix pool;
  if (fit == PathFit::kSegments) {
    pool.resize(static_cast<Eigen::Index>(2 * n_segments), static_cast<Eigen::Index>(k));
    Eigen::Index row = 0;
    for (const auto& p : set.paths)
      for (const auto& e : p.entries) {
        for (std::size_t c = 0; c < k; ++c) {
          pool(row, static_cast<Eigen::Index>(c)) = e.segment[c];
          pool(row + static_cast<Eigen::Index>(n_segments), static_cast<Eigen::Index>(c)) = -e.segment[c];
        }
        ++row;
      }
  } else {
    std::vector<Matrix> parts;
    Eigen::Index rows = 0;
    for (const auto& p : set.paths) {
      parts.push_back(vertices_of(p));
      rows += parts.back().rows();
    }
    pool.resize(rows, static_cast<Eigen::Index>(k));
    Eigen::Index at = 0;
    for (const auto& m : parts) {
      pool.middleRows(at, m.rows()) = m;
      at += m.rows();
    }
  }
  bool distinct = false;
  for (Eigen::Index i = 1; i < pool.rows() && !distinct; ++i)
    distinct = (pool.row(i).array() != pool.row(0).array()).any();
  require(distinct, "path projection needs at least two distinct segment vectors");
  const std::size_t rr = std::min<std::size_t>({r, k, static_cast<std::size_t>(pool.rows() - 1)});
  PcaModel pca = pca_fit(pool, rr);
  if (fit == PathFit::kSegments) pca.mean.setZero();  // exact mean of a symmetric pool

  const Matrix origin = Matrix::Zero(1, static_cast<Eigen::Index>(k));
  out.origin = pca_transform(pca, origin);
  for (const auto& p : set.paths) {
    ProjectedPath pp = base_info(p);
    pp.vertices = pca_transform(pca, vertices_of(p));
    out.paths.push_back(std::move(pp));
  }
  out.pca = std::move(pca);
  return out;
}

std::string render_paths(const ProjectedPaths& pr, const PlotSpec& spec) {
  spec.validate();
  Svg svg(spec.width, spec.height);
  title(svg, spec);
  const double legend_w = 230.0;
  const double left = 60.0, right = spec.width - legend_w, top = 40.0, bottom = spec.height - 50.0;

  auto coord = [](const Matrix& v, Eigen::Index row, Eigen::Index col) {
    return col < v.cols() ? v(row, col) : 0.0;
  };
  const double ox = coord(pr.origin, 0, 0), oy = coord(pr.origin, 0, 1);
  double xlo = ox, xhi = ox, ylo = oy, yhi = oy;
  for (const auto& p : pr.paths)
    for (Eigen::Index s = 0; s < p.vertices.rows(); ++s) {
      xlo = std::min(xlo, coord(p.vertices, s, 0));
      xhi = std::max(xhi, coord(p.vertices, s, 0));
      ylo = std::min(ylo, coord(p.vertices, s, 1));
      yhi = std::max(yhi, coord(p.vertices, s, 1));
    }
  widen(xlo, xhi, 0.08);
  widen(ylo, yhi, 0.08);
  const bool identity = !pr.pca.has_value();
  if (!identity) {
    // Equal scale on both axes keeps angles between segments faithful.
    const double scale = std::max((xhi - xlo) / (right - left), (yhi - ylo) / (bottom - top));
    const double cx = (xlo + xhi) / 2, cy = (ylo + yhi) / 2;
    xlo = cx - scale * (right - left) / 2;
    xhi = cx + scale * (right - left) / 2;
    ylo = cy - scale * (bottom - top) / 2;
    yhi = cy + scale * (bottom - top) / 2;
  }
  const Axis ax{xlo, xhi, left, right};
  const Axis ay{ylo, yhi, bottom, top};

  svg.raw("<defs>\n");
  for (std::size_t g = 0; g < pr.paths.size(); ++g)
    svg.raw("<marker id=\"arrow-" + std::to_string(g) +
            "\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"7\" markerHeight=\"7\" "
            "orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"" + color_at(spec, g) + "\"/></marker>\n");
  svg.raw("</defs>\n");

  svg.rect(left, top, right - left, bottom - top, "none", " stroke=\"black\" class=\"axes\"");
  for (int i = 0; i <= 4; ++i) {
    const double vx = xlo + (xhi - xlo) * i / 4.0, vy = ylo + (yhi - ylo) * i / 4.0;
    svg.line(ax(vx), bottom, ax(vx), bottom + 4, "black");
    svg.text(ax(vx), bottom + 16, num(vx), "middle", " font-size=\"10\"");
    svg.line(left - 4, ay(vy), left, ay(vy), "black");
    svg.text(left - 6, ay(vy) + 3, num(vy), "end", " font-size=\"10\"");
  }
  const std::string xl = !spec.x_label.empty() ? spec.x_label : identity ? "step" : "PC1";
  const std::string yl = !spec.y_label.empty() ? spec.y_label : identity ? "cumulative SHAP value" : "PC2";
  svg.text((left + right) / 2, spec.height - 14.0, xl, "middle");
  svg.text(16.0, (top + bottom) / 2, yl, "middle",
           " transform=\"rotate(-90 16 " + num((top + bottom) / 2) + ")\"");

  for (std::size_t g = 0; g < pr.paths.size(); ++g) {
    const auto& p = pr.paths[g];
    svg.raw("<g class=\"path\" data-group=\"" + esc(p.group) + "\">\n");
    for (Eigen::Index s = 0; s + 1 < p.vertices.rows(); ++s)
      svg.line(ax(coord(p.vertices, s, 0)), ay(coord(p.vertices, s, 1)), ax(coord(p.vertices, s + 1, 0)),
               ay(coord(p.vertices, s + 1, 1)), color_at(spec, g), 2.0,
               " class=\"segment\" data-feature=\"" + std::to_string(p.features[static_cast<std::size_t>(s)]) +
                   "\" marker-end=\"url(#arrow-" + std::to_string(g) + ")\"");
    // The first few segments carry their feature names.
    for (Eigen::Index s = 0; s + 1 < p.vertices.rows() && s < 3; ++s) {
      const double mx = (coord(p.vertices, s, 0) + coord(p.vertices, s + 1, 0)) / 2;
      const double my = (coord(p.vertices, s, 1) + coord(p.vertices, s + 1, 1)) / 2;
      svg.text(ax(mx) + 4, ay(my) - 4, feature_name(pr.feature_names, p.features[static_cast<std::size_t>(s)]),
               "start", " font-size=\"10\" fill=\"" + color_at(spec, g) + "\"");
    }
    svg.raw("</g>\n");
  }
  svg.circle(ax(ox), ay(oy), 4.0, "black", " class=\"origin\"");
  svg.text(ax(ox) + 6, ay(oy) + 14, "origin", "start", " font-size=\"10\"");

  double ly = top + 10;
  const double lx = right + 15;
  for (std::size_t g = 0; g < pr.paths.size(); ++g) {
    const auto& p = pr.paths[g];
    svg.rect(lx, ly - 9, 12, 12, color_at(spec, g));
    svg.text(lx + 18, ly, p.group + " (n = " + std::to_string(p.size) + ")");
    std::string feats;
    for (std::size_t s = 0; s < p.features.size() && s < 3; ++s)
      feats += (s ? ", " : "") + feature_name(pr.feature_names, p.features[s]);
    svg.text(lx + 18, ly + 13, feats, "start", " font-size=\"10\" fill=\"#555555\"");
    ly += 32;
  }
  if (pr.noise > 0)
    svg.text(lx, ly, "noise: " + std::to_string(pr.noise) + " points not shown", "start",
             " class=\"noise\" fill=\"#555555\"");
  return svg.finish();
}

std::string paths_to_csv(const ProjectedPaths& pr) {
  std::string out = "group,feature,x,y\n";
  for (const auto& p : pr.paths)
    for (Eigen::Index s = 0; s < p.vertices.rows(); ++s) {
      const std::string feat =
          s == 0 ? "origin" : p.features[static_cast<std::size_t>(s - 1)] < 0
                                  ? "remaining"
                                  : feature_name(pr.feature_names, p.features[static_cast<std::size_t>(s - 1)]);
      out += p.group + "," + feat + "," + format_double(p.vertices(s, 0)) + "," +
             format_double(p.vertices.cols() > 1 ? p.vertices(s, 1) : 0.0) + "\n";
    }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> top_features(const Matrix& meanabs, std::size_t count) {
  std::vector<double> totals(static_cast<std::size_t>(meanabs.rows()));
  for (Eigen::Index j = 0; j < meanabs.rows(); ++j) totals[static_cast<std::size_t>(j)] = meanabs.row(j).sum();
  auto order = order_desc(totals);
  order.resize(std::min(count, order.size()));
  return order;
}

StackedBar stacked_bar(const Matrix& meanabs, const std::vector<std::string>& feature_names,
                       const std::vector<std::string>& class_names, const PlotSpec& spec) {
  spec.validate();
  StackedBar out;
  out.order = top_features(meanabs, spec.top_n);
  for (auto j : out.order) out.totals.push_back(meanabs.row(static_cast<Eigen::Index>(j)).sum());

  Svg svg(spec.width, spec.height);
  title(svg, spec);
  const bool legend = meanabs.cols() > 1;
  const double left = 70.0, right = spec.width - (legend ? 120.0 : 20.0), top = 40.0, bottom = spec.height - 60.0;
  const double hi = out.totals.empty() || out.totals.front() <= 0.0 ? 1.0 : out.totals.front() * 1.05;
  const Axis ay{0.0, hi, bottom, top};
  svg.line(left, bottom, right, bottom, "black");
  svg.line(left, top, left, bottom, "black");
  for (int i = 0; i <= 4; ++i) {
    const double v = hi * i / 4.0;
    svg.line(left - 4, ay(v), left, ay(v), "black");
    svg.text(left - 6, ay(v) + 4, format_fixed(v, 3), "end", " font-size=\"10\"");
  }
  svg.text(16.0, (top + bottom) / 2, spec.y_label.empty() ? "mean |SHAP value|" : spec.y_label, "middle",
           " transform=\"rotate(-90 16 " + num((top + bottom) / 2) + ")\"");
  const double slot = out.order.empty() ? 0.0 : (right - left) / out.order.size();
  for (std::size_t b = 0; b < out.order.size(); ++b) {
    const auto j = static_cast<Eigen::Index>(out.order[b]);
    const double x = left + b * slot + slot * 0.15;
    double level = 0.0;
    svg.raw("<g class=\"bar\" data-feature=\"" + std::to_string(j) + "\">\n");
    for (Eigen::Index c = 0; c < meanabs.cols(); ++c) {
      const double v = meanabs(j, c);
      svg.rect(x, ay(level + v), slot * 0.7, ay(level) - ay(level + v), color_at(spec, static_cast<std::size_t>(c)));
      level += v;
    }
    svg.raw("</g>\n");
    svg.text(x + slot * 0.35, bottom + 16, feature_name(feature_names, static_cast<int>(j)), "middle");
  }
  if (legend) {
    for (Eigen::Index c = 0; c < meanabs.cols(); ++c) {
      const double ly = top + 10 + 18.0 * c;
      svg.rect(right + 15, ly - 9, 12, 12, color_at(spec, static_cast<std::size_t>(c)));
      const auto cu = static_cast<std::size_t>(c);
      svg.text(right + 32, ly, "class " + (cu < class_names.size() ? class_names[cu] : std::to_string(c)));
    }
  }
  out.svg = svg.finish();
  return out;
}

Heatmap cluster_heatmap(const Dataset& ds, std::span<const int> labels, const std::vector<std::size_t>& features,
                        const PlotSpec& spec) {
  spec.validate();
  require(labels.size() == ds.n_samples(), "labeling length does not match dataset");
  for (auto f : features) require(f < ds.n_features(), "heatmap feature index out of range");
  Heatmap hm;
  hm.features = features;
  std::map<int, std::size_t> counts;
  for (int l : labels)
    if (l >= 0) ++counts[l];
  for (const auto& [l, c] : counts) hm.clusters.push_back(l);
  const auto nc = static_cast<Eigen::Index>(hm.clusters.size());
  const auto nf = static_cast<Eigen::Index>(features.size());
  hm.cells = Matrix::Zero(nc, nf);
  hm.global_mean.assign(features.size(), 0.0);
  for (std::size_t i = 0; i < ds.n_samples(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index f = 0; f < nf; ++f)
      hm.global_mean[static_cast<std::size_t>(f)] += ds.features(row, static_cast<Eigen::Index>(features[static_cast<std::size_t>(f)]));
    if (labels[i] < 0) continue;
    const auto r = static_cast<Eigen::Index>(
        std::lower_bound(hm.clusters.begin(), hm.clusters.end(), labels[i]) - hm.clusters.begin());
    for (Eigen::Index f = 0; f < nf; ++f)
      hm.cells(r, f) += ds.features(row, static_cast<Eigen::Index>(features[static_cast<std::size_t>(f)]));
  }
  for (auto& g : hm.global_mean) g /= static_cast<double>(std::max<std::size_t>(ds.n_samples(), 1));
  for (Eigen::Index r = 0; r < nc; ++r)
    hm.cells.row(r) /= static_cast<double>(counts[hm.clusters[static_cast<std::size_t>(r)]]);

  Svg svg(spec.width, spec.height);
  title(svg, spec);
  const double left = 140.0, right = spec.width - 20.0, top = 50.0, bottom = spec.height - 50.0;
  const double cw = nf ? (right - left) / nf : 0.0, ch = nc ? (bottom - top) / nc : 0.0;
  // One colour scale for every column, so weak features stay pale.
  double dev = 0.0;
  for (Eigen::Index f = 0; f < nf; ++f)
    for (Eigen::Index r = 0; r < nc; ++r)
      dev = std::max(dev, std::abs(hm.cells(r, f) - hm.global_mean[static_cast<std::size_t>(f)]));
  for (Eigen::Index f = 0; f < nf; ++f) {
    for (Eigen::Index r = 0; r < nc; ++r) {
      const double tval = dev > 0 ? (hm.cells(r, f) - hm.global_mean[static_cast<std::size_t>(f)]) / dev : 0.0;
      // White at the global mean, red above, blue below.
      const int fade = static_cast<int>(std::lround(255.0 * (1.0 - std::abs(tval))));
      char color[8];
      std::snprintf(color, sizeof color, "#%02x%02x%02x", tval > 0 ? 255 : fade, fade, tval < 0 ? 255 : fade);
      svg.rect(left + f * cw, top + r * ch, cw, ch, color, " stroke=\"white\" class=\"cell\"");
      svg.text(left + f * cw + cw / 2, top + r * ch + ch / 2 + 4, num(hm.cells(r, f)), "middle",
               " font-size=\"10\"");
    }
    svg.text(left + f * cw + cw / 2, bottom + 16,
             feature_name(ds.feature_names, static_cast<int>(features[static_cast<std::size_t>(f)])), "middle");
  }
  for (Eigen::Index r = 0; r < nc; ++r)
    svg.text(left - 8, top + r * ch + ch / 2 + 4,
             "cluster " + std::to_string(hm.clusters[static_cast<std::size_t>(r)]) + " (n = " +
                 std::to_string(counts[hm.clusters[static_cast<std::size_t>(r)]]) + ")",
             "end", " font-size=\"10\"");
  hm.svg = svg.finish();
  return hm;
}

std::string render_scatter(const Matrix& scores, std::span<const int> labels, const PlotSpec& spec) {
  spec.validate();
  require(scores.cols() >= 2, "scatter needs two score columns");
  require(labels.empty() || labels.size() == static_cast<std::size_t>(scores.rows()),
          "label count does not match scores");
  Svg svg(spec.width, spec.height);
  title(svg, spec);
  const double left = 60.0, right = spec.width - 20.0, top = 40.0, bottom = spec.height - 50.0;
  double xlo = 0, xhi = 0, ylo = 0, yhi = 0;
  if (scores.rows() > 0) {
    xlo = scores.col(0).minCoeff();
    xhi = scores.col(0).maxCoeff();
    ylo = scores.col(1).minCoeff();
    yhi = scores.col(1).maxCoeff();
  }
  widen(xlo, xhi, 0.05);
  widen(ylo, yhi, 0.05);
  const Axis ax{xlo, xhi, left, right};
  const Axis ay{ylo, yhi, bottom, top};
  svg.rect(left, top, right - left, bottom - top, "none", " stroke=\"black\"");
  svg.text((left + right) / 2, spec.height - 14.0, spec.x_label.empty() ? "PC1" : spec.x_label, "middle");
  svg.text(16.0, (top + bottom) / 2, spec.y_label.empty() ? "PC2" : spec.y_label, "middle",
           " transform=\"rotate(-90 16 " + num((top + bottom) / 2) + ")\"");
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const int l = labels.empty() ? 0 : labels[static_cast<std::size_t>(i)];
    svg.circle(ax(scores(i, 0)), ay(scores(i, 1)), 2.5,
               l < 0 ? "#bbbbbb" : color_at(spec, static_cast<std::size_t>(l)), " fill-opacity=\"0.8\"");
  }
  return svg.finish();
}

}  // namespace hdshap
