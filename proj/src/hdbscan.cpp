#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hdshap/subgroup.hpp"

namespace hdshap {

namespace {

double euclidean(const Matrix& X, std::size_t a, std::size_t b) {
  return (X.row(static_cast<Eigen::Index>(a)) - X.row(static_cast<Eigen::Index>(b))).norm();
}

// Node of the component hierarchy. Points are nodes 0..n-1; every distinct
// MST weight at which components join creates one node per joined component,
// so merges at equal distance are simultaneous and the tree does not depend
// on the row order.
struct LevelNode {
  std::vector<std::size_t> children;  // ordered by smallest member point
  double distance = 0.0;
  std::size_t size = 1;
  std::size_t first_point = 0;
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void join(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<std::size_t> parent_;
};

std::vector<LevelNode> component_tree(std::size_t n, const std::vector<MstEdge>& mst) {
  std::vector<LevelNode> nodes(n);
  for (std::size_t i = 0; i < n; ++i) nodes[i].first_point = i;
  UnionFind uf(n);
  std::vector<std::size_t> node_of(n);
  std::iota(node_of.begin(), node_of.end(), 0);
  for (std::size_t lo = 0; lo < mst.size();) {
    std::size_t hi = lo;
    while (hi < mst.size() && mst[hi].weight == mst[lo].weight) ++hi;
    std::vector<std::pair<std::size_t, std::size_t>> before;  // (old root, its node)
    for (std::size_t e = lo; e < hi; ++e)
      for (std::size_t v : {mst[e].a, mst[e].b}) {
        const std::size_t r = uf.find(v);
        before.emplace_back(r, node_of[r]);
      }
    std::sort(before.begin(), before.end());
    before.erase(std::unique(before.begin(), before.end()), before.end());
    for (std::size_t e = lo; e < hi; ++e) uf.join(mst[e].a, mst[e].b);
    std::map<std::size_t, std::vector<std::size_t>> joined;
    for (const auto& [r, node] : before) joined[uf.find(r)].push_back(node);
    for (auto& [root, parts] : joined) {
      LevelNode merged;
      merged.distance = mst[lo].weight;
      merged.size = 0;
      merged.first_point = n;
      for (auto c : parts) {
        merged.size += nodes[c].size;
        merged.first_point = std::min(merged.first_point, nodes[c].first_point);
      }
      std::sort(parts.begin(), parts.end(), [&](std::size_t a, std::size_t b) {
        return nodes[a].first_point < nodes[b].first_point;
      });
      merged.children = std::move(parts);
      node_of[root] = nodes.size();
      nodes.push_back(std::move(merged));
    }
    lo = hi;
  }
  return nodes;
}

void collect_points(const std::vector<LevelNode>& nodes, std::size_t n, std::size_t node,
                    std::vector<std::size_t>& out) {
  std::vector<std::size_t> stack{node};
  while (!stack.empty()) {
    const std::size_t x = stack.back();
    stack.pop_back();
    if (x < n) {
      out.push_back(x);
    } else {
      for (auto c : nodes[x].children) stack.push_back(c);
    }
  }
}

std::vector<CondensedRow> condense(const std::vector<LevelNode>& nodes, std::size_t n,
                                   std::size_t min_cluster_size) {
  const std::size_t root = nodes.size() - 1;
  std::vector<std::size_t> relabel(nodes.size(), 0);
  relabel[root] = n;
  std::size_t next_label = n + 1;
  std::vector<CondensedRow> rows;
  std::vector<std::size_t> queue{root};
  std::vector<std::size_t> fallen;
  for (std::size_t head = 0; head < queue.size(); ++head) {
    const std::size_t node = queue[head];
    const LevelNode& ln = nodes[node];
    const double lambda = ln.distance > 0.0 ? 1.0 / ln.distance : std::numeric_limits<double>::infinity();
    std::size_t big = 0;
    for (auto c : ln.children) big += nodes[c].size >= min_cluster_size ? 1 : 0;
    for (auto c : ln.children) {
      if (nodes[c].size < min_cluster_size) {
        fallen.clear();
        collect_points(nodes, n, c, fallen);
        std::sort(fallen.begin(), fallen.end());
        for (auto pnt : fallen) rows.push_back({relabel[node], pnt, lambda, 1});
        continue;
      }
      if (big >= 2) {
        // A true split: every large child is born as a new cluster.
        relabel[c] = next_label++;
        rows.push_back({relabel[node], relabel[c], lambda, nodes[c].size});
      } else {
        relabel[c] = relabel[node];
      }
      if (c >= n) queue.push_back(c);
    }
  }
  // Zero distances give infinite lambda; replace by twice the largest finite
  // lambda so that stabilities stay finite.
  double top = 0.0;
  for (const auto& r : rows)
    if (std::isfinite(r.lambda)) top = std::max(top, r.lambda);
  const double cap = top > 0.0 ? 2.0 * top : 1.0;
  for (auto& r : rows)
    if (!std::isfinite(r.lambda)) r.lambda = cap;
  return rows;
}

}  // namespace

std::vector<double> core_distances(const Matrix& X, std::size_t min_samples) {
  const auto n = static_cast<std::size_t>(X.rows());
  require(min_samples >= 1, "min_samples must be at least 1");
  const std::size_t kth = std::min(min_samples, n) - 1;  // the point itself is neighbor 0
  std::vector<double> core(n), dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = euclidean(X, i, j);
    std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(kth), dist.end());
    core[i] = dist[kth];
  }
  return core;
}

double mutual_reachability(const Matrix& X, std::span<const double> core, std::size_t a,
                           std::size_t b) {
  return std::max({core[a], core[b], euclidean(X, a, b)});
}

std::vector<MstEdge> mutual_reachability_mst(const Matrix& X, std::span<const double> core) {
  const auto n = static_cast<std::size_t>(X.rows());
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double d = mutual_reachability(X, core, current, j);
      if (d < best[j]) {
        best[j] = d;
        from[j] = current;
      }
      if (next == n || best[j] < best[next]) next = j;
    }
    in_tree[next] = 1;
    edges.push_back({from[next], next, best[next]});
    current = next;
  }
  std::stable_sort(edges.begin(), edges.end(),
                   [](const MstEdge& a, const MstEdge& b) { return a.weight < b.weight; });
  return edges;
}

ClusterLabeling hdbscan(const Matrix& X, const HdbscanParams& params, HdbscanTrace* trace) {
  const auto n = static_cast<std::size_t>(X.rows());
  require(n >= 1, "HDBSCAN needs at least one point");
  require(params.min_cluster_size >= 2, "min_cluster_size must be at least 2");
  const std::size_t min_samples = params.min_samples ? params.min_samples : params.min_cluster_size;

  ClusterLabeling out;
  out.labels.assign(n, -1);
  if (n < params.min_cluster_size) return out;

  auto core = core_distances(X, min_samples);
  auto mst = mutual_reachability_mst(X, core);
  if (trace) {
    trace->core_distances = core;
    trace->mst = mst;
  }

  // All mutual reachability distances zero: every point is a duplicate.
  if (std::all_of(mst.begin(), mst.end(), [](const MstEdge& e) { return e.weight == 0.0; })) {
    std::fill(out.labels.begin(), out.labels.end(), 0);
    out.n_clusters = 1;
    out.stability = {0.0};
    return out;
  }

  const auto rows = condense(component_tree(n, mst), n, params.min_cluster_size);
  const std::size_t root = n;

  std::map<std::size_t, double> birth{{root, 0.0}};
  std::map<std::size_t, std::size_t> parent_of;
  std::map<std::size_t, std::vector<std::size_t>> children;
  std::map<std::size_t, double> stability{{root, 0.0}};
  for (const auto& r : rows)
    if (r.child >= n) {
      birth[r.child] = r.lambda;
      parent_of[r.child] = r.parent;
      children[r.parent].push_back(r.child);
      stability.emplace(r.child, 0.0);
    }
  for (const auto& r : rows)
    stability[r.parent] += (r.lambda - birth[r.parent]) * static_cast<double>(r.child_size);

  // Excess-of-mass selection, leaves first; the root is never selected.
  std::map<std::size_t, double> best = stability;
  std::set<std::size_t> selected;
  for (auto it = stability.rbegin(); it != stability.rend(); ++it) {
    const std::size_t c = it->first;
    if (c == root) continue;
    double subtree = 0.0;
    for (auto ch : children[c]) subtree += best[ch];
    if (subtree > stability[c]) {
      best[c] = subtree;
    } else {
      best[c] = stability[c];
      std::vector<std::size_t> stack(children[c].begin(), children[c].end());
      while (!stack.empty()) {
        const auto d = stack.back();
        stack.pop_back();
        selected.erase(d);
        for (auto ch : children[d]) stack.push_back(ch);
      }
      selected.insert(c);
    }
  }

  // A point belongs to the selected cluster above the cluster it fell out of.
  std::vector<std::size_t> owner(n, root);
  for (const auto& r : rows)
    if (r.child < n) owner[r.child] = r.parent;
  std::vector<long> raw(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = owner[i];
    while (c != root && !selected.count(c)) c = parent_of[c];
    if (c != root) raw[i] = static_cast<long>(c);
  }

  // Canonical labels: ordered by smallest member index.
  std::map<long, int> canonical;
  for (std::size_t i = 0; i < n; ++i)
    if (raw[i] >= 0 && !canonical.count(raw[i])) {
      const int label = static_cast<int>(canonical.size());
      canonical[raw[i]] = label;
      out.stability.push_back(stability[static_cast<std::size_t>(raw[i])]);
    }
  for (std::size_t i = 0; i < n; ++i)
    if (raw[i] >= 0) out.labels[i] = canonical[raw[i]];
  out.n_clusters = canonical.size();

  if (trace) {
    trace->condensed = rows;
    trace->stability = stability;
    trace->selected.assign(selected.begin(), selected.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

PurityReport cluster_purity(const ClusterLabeling& labels, std::span<const int> truth) {
  require(truth.size() == labels.labels.size(), "truth length does not match labeling");
  PurityReport rep;
  std::set<int> clusters, values;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (labels.labels[i] < 0) {
      ++rep.noise;
      continue;
    }
    clusters.insert(labels.labels[i]);
    values.insert(truth[i]);
  }
  rep.clusters.assign(clusters.begin(), clusters.end());
  rep.truth_values.assign(values.begin(), values.end());
  rep.contingency.assign(rep.clusters.size(), std::vector<std::size_t>(rep.truth_values.size(), 0));
  auto index_of = [](const std::vector<int>& v, int x) {
    return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), x) - v.begin());
  };
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (labels.labels[i] < 0) continue;
    ++rep.contingency[index_of(rep.clusters, labels.labels[i])][index_of(rep.truth_values, truth[i])];
  }
  std::size_t majority_total = 0, clustered = 0;
  for (const auto& row : rep.contingency) {
    const auto top = std::max_element(row.begin(), row.end());
    const std::size_t size = std::accumulate(row.begin(), row.end(), std::size_t{0});
    rep.majority.push_back(rep.truth_values[static_cast<std::size_t>(top - row.begin())]);
    rep.purity.push_back(size ? static_cast<double>(*top) / static_cast<double>(size) : 0.0);
    majority_total += *top;
    clustered += size;
  }
  rep.overall = clustered ? static_cast<double>(majority_total) / static_cast<double>(clustered) : 0.0;
  return rep;
}

std::string labeling_to_csv(const ClusterLabeling& labels, std::span<const std::int64_t> sample_ids) {
  require(sample_ids.size() == labels.labels.size(), "sample id count does not match labeling");
  std::string out = "sample_id,label,stability\n";
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const int l = labels.labels[i];
    const double s = l >= 0 ? labels.stability[static_cast<std::size_t>(l)] : 0.0;
    out += std::to_string(sample_ids[i]) + "," + std::to_string(l) + "," + format_double(s) + "\n";
  }
  return out;
}

ClusterLabeling labeling_from_csv(const std::string& text, std::vector<std::int64_t>* sample_ids) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)) && line.rfind("sample_id,label", 0) == 0,
          "labeling csv has no header", ErrorCode::kParse);
  ClusterLabeling out;
  std::map<int, double> stab;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string id, label, stability;
    require(std::getline(cells, id, ',') && std::getline(cells, label, ',') &&
                std::getline(cells, stability, ','),
            "malformed labeling row: " + line, ErrorCode::kParse);
    try {
      if (sample_ids) sample_ids->push_back(std::stoll(id));
      const int l = std::stoi(label);
      require(l >= -1, "label below -1 in labeling csv", ErrorCode::kParse);
      out.labels.push_back(l);
      if (l >= 0) stab[l] = std::stod(stability);
    } catch (const std::logic_error&) {
      fail(ErrorCode::kParse, "malformed labeling row: " + line);
    }
  }
  out.n_clusters = stab.empty() ? 0 : static_cast<std::size_t>(stab.rbegin()->first + 1);
  out.stability.assign(out.n_clusters, 0.0);
  for (const auto& [l, s] : stab) out.stability[static_cast<std::size_t>(l)] = s;
  return out;
}

std::string scores_to_csv(const Matrix& scores, std::span<const std::int64_t> sample_ids,
                          std::span<const int> labels) {
  require(static_cast<std::size_t>(scores.rows()) == sample_ids.size(), "sample id count mismatch");
  std::string out = "sample_id";
  for (Eigen::Index c = 0; c < scores.cols(); ++c) out += ",pc" + std::to_string(c + 1);
  if (!labels.empty()) out += ",label";
  out += '\n';
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    out += std::to_string(sample_ids[static_cast<std::size_t>(i)]);
    for (Eigen::Index c = 0; c < scores.cols(); ++c) out += "," + format_double(scores(i, c));
    if (!labels.empty()) out += "," + std::to_string(labels[static_cast<std::size_t>(i)]);
    out += '\n';
  }
  return out;
}

}  // namespace hdshap
