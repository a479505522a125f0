#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include "hdshap/shap.hpp"

namespace hdshap {

double shapley_kernel_weight(std::size_t p, std::size_t s) {
  require(s > 0 && s < p, "kernel weight is defined for 0 < s < p");
  // C(p, s) in floating point; exact for the sizes used here.
  double binom = 1.0;
  for (std::size_t i = 1; i <= s; ++i)
    binom = binom * static_cast<double>(p - s + i) / static_cast<double>(i);
  return static_cast<double>(p - 1) /
         (binom * static_cast<double>(s) * static_cast<double>(p - s));
}

namespace {

using Mask = std::vector<std::uint8_t>;

struct Coalition {
  Mask mask;
  double weight = 0.0;
};

double binomial(std::size_t n, std::size_t k) {
  double b = 1.0;
  for (std::size_t i = 1; i <= k; ++i)
    b = b * static_cast<double>(n - k + i) / static_cast<double>(i);
  return b;
}

void for_each_subset(std::size_t p, std::size_t s, const std::function<void(const Mask&)>& visit) {
  std::vector<std::size_t> idx(s);
  std::iota(idx.begin(), idx.end(), 0);
  Mask mask(p, 0);
  while (true) {
    std::fill(mask.begin(), mask.end(), 0);
    for (auto i : idx) mask[i] = 1;
    visit(mask);
    std::size_t pos = s;
    while (pos > 0 && idx[pos - 1] == p - s + pos - 1) --pos;
    if (pos == 0) return;
    ++idx[pos - 1];
    for (std::size_t q = pos; q < s; ++q) idx[q] = idx[q - 1] + 1;
  }
}

Mask complement(const Mask& m) {
  Mask c(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) c[i] = m[i] ? 0 : 1;
  return c;
}

// Complete strata of small and large coalition sizes are enumerated while the
// budget allows; the remaining kernel mass is covered by paired sampling.
std::vector<Coalition> choose_coalitions(std::size_t p, std::size_t budget, Rng& rng, bool& exact) {
  std::vector<Coalition> out;
  exact = false;
  if (p <= 1) {
    exact = true;
    return out;
  }
  if (p < 63 && (std::uint64_t{1} << p) - 2 <= budget) {
    exact = true;
    for (std::size_t s = 1; s < p; ++s) {
      const double w = shapley_kernel_weight(p, s);
      for_each_subset(p, s, [&](const Mask& m) { out.push_back({m, w}); });
    }
    return out;
  }

  const std::size_t n_sizes = (p - 1 + 1) / 2;  // ceil((p - 1) / 2)
  const std::size_t n_paired = (p - 1) / 2;
  std::vector<double> size_weight(n_sizes);
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    size_weight[s - 1] = static_cast<double>(p - 1) / static_cast<double>(s * (p - s));
    if (s <= n_paired) size_weight[s - 1] *= 2.0;
  }
  const double total = std::accumulate(size_weight.begin(), size_weight.end(), 0.0);
  for (auto& w : size_weight) w /= total;

  std::vector<double> remaining = size_weight;
  double remaining_samples = static_cast<double>(budget);
  std::size_t full_sizes = 0;
  for (std::size_t s = 1; s <= n_sizes; ++s) {
    double n_subsets = binomial(p, s);
    if (s <= n_paired) n_subsets *= 2.0;
    const double rest = std::accumulate(remaining.begin() + static_cast<std::ptrdiff_t>(s - 1),
                                        remaining.end(), 0.0);
    if (remaining_samples * (remaining[s - 1] / rest) / n_subsets < 1.0 - 1e-8) break;
    ++full_sizes;
    remaining_samples -= n_subsets;
    double w = size_weight[s - 1] / binomial(p, s);
    if (s <= n_paired) w /= 2.0;
    for_each_subset(p, s, [&](const Mask& m) {
      out.push_back({m, w});
      if (s <= n_paired) out.push_back({complement(m), w});
    });
  }

  double left_mass = 0.0;
  for (std::size_t s = full_sizes + 1; s <= n_sizes; ++s) left_mass += size_weight[s - 1];
  const auto n_samples = static_cast<std::size_t>(std::max(0.0, remaining_samples));
  if (left_mass <= 0.0 || n_samples < 2) return out;

  std::vector<double> cdf;
  for (std::size_t s = full_sizes + 1; s <= n_sizes; ++s)
    cdf.push_back((cdf.empty() ? 0.0 : cdf.back()) + size_weight[s - 1] / left_mass);

  std::map<Mask, double> sampled;
  std::size_t draws = 0;
  std::vector<std::size_t> features(p);
  std::iota(features.begin(), features.end(), 0);
  for (std::size_t added = 0; added + 1 < n_samples && draws < 100 * n_samples; ++draws) {
    const double u = rng.uniform();
    const std::size_t pick = static_cast<std::size_t>(
        std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    const std::size_t s = full_sizes + 1 + std::min(pick, cdf.size() - 1);
    // Partial Fisher-Yates for a uniform subset of size s.
    for (std::size_t i = 0; i < s; ++i) std::swap(features[i], features[i + rng.below(p - i)]);
    Mask m(p, 0);
    for (std::size_t i = 0; i < s; ++i) m[features[i]] = 1;
    auto [it, inserted] = sampled.emplace(m, 0.0);
    it->second += 1.0;
    if (inserted) ++added;
    auto [cit, cinserted] = sampled.emplace(complement(m), 0.0);
    cit->second += 1.0;
    if (cinserted) ++added;
  }
  double hits = 0.0;
  for (const auto& [m, c] : sampled) hits += c;
  for (const auto& [m, c] : sampled) out.push_back({m, left_mass * c / hits});
  return out;
}

struct Explainer {
  const MarginModel& model;
  const Matrix& background;
  std::vector<double> base;
  std::vector<Coalition> coalitions;  // shared when exact
  bool shared_exact = false;
  KernelShapOptions options;
  std::size_t budget = 0;

  // v(z): mean margin with features outside z taken from background rows.
  std::vector<double> value(std::span<const double> x, const Mask& mask, Matrix& hybrid) const {
    for (Eigen::Index b = 0; b < background.rows(); ++b)
      for (Eigen::Index j = 0; j < background.cols(); ++j)
        hybrid(b, j) = mask[static_cast<std::size_t>(j)] ? x[static_cast<std::size_t>(j)] : background(b, j);
    const Matrix out = model.predict_margins(hybrid);
    std::vector<double> mean(static_cast<std::size_t>(out.cols()), 0.0);
    for (Eigen::Index b = 0; b < out.rows(); ++b)
      for (Eigen::Index c = 0; c < out.cols(); ++c) mean[static_cast<std::size_t>(c)] += out(b, c);
    for (auto& v : mean) v /= static_cast<double>(out.rows());
    return mean;
  }

  void explain(std::size_t sample, std::span<const double> x, std::span<double> phi,
               bool& rank_deficient) const {
    const std::size_t p = static_cast<std::size_t>(background.cols());
    const std::size_t k = model.n_classes();
    const auto fx = model.margin(x);
    std::vector<double> delta(k);
    for (std::size_t c = 0; c < k; ++c) delta[c] = fx[c] - base[c];
    if (p == 1) {
      for (std::size_t c = 0; c < k; ++c) phi[c] = delta[c];
      return;
    }

    std::vector<Coalition> local;
    const std::vector<Coalition>* chosen = &coalitions;
    if (!shared_exact) {
      Rng rng(options.seed, "kernel_shap.sample." + std::to_string(sample));
      bool exact = false;
      local = choose_coalitions(p, budget, rng, exact);
      chosen = &local;
    }
    const auto& coal = *chosen;
    require(coal.size() * static_cast<std::size_t>(background.rows()) <= options.max_evaluations_per_sample,
            "kernel SHAP evaluation budget exceeded: " + std::to_string(coal.size()) +
                " coalitions x " + std::to_string(background.rows()) + " background rows");

    // Constraint sum(phi) = delta eliminated by substituting the last feature.
    const auto rows = static_cast<Eigen::Index>(coal.size());
    const auto dims = static_cast<Eigen::Index>(p - 1);
    Matrix A(rows, dims);
    Matrix Y(rows, static_cast<Eigen::Index>(k));
    Vector w(rows);
    Matrix hybrid(background.rows(), background.cols());
    for (Eigen::Index r = 0; r < rows; ++r) {
      const auto& m = coal[static_cast<std::size_t>(r)].mask;
      const double last = m[p - 1];
      for (Eigen::Index j = 0; j < dims; ++j) A(r, j) = m[static_cast<std::size_t>(j)] - last;
      const auto v = value(x, m, hybrid);
      for (std::size_t c = 0; c < k; ++c) Y(r, static_cast<Eigen::Index>(c)) = v[c] - base[c] - last * delta[c];
      w(r) = coal[static_cast<std::size_t>(r)].weight;
    }
    const Matrix AtW = A.transpose() * w.asDiagonal();
    const Matrix M = AtW * A;
    const Matrix rhs = AtW * Y;
    const double scale = std::max(M.diagonal().mean(), 1e-300);
    const double rho = options.ridge * scale;

    Eigen::LDLT<Matrix> plain(M);
    const Vector d = plain.vectorD().cwiseAbs();
    if (plain.info() != Eigen::Success || d.minCoeff() <= 1e-12 * d.maxCoeff()) rank_deficient = true;

    // Ridge-regularized solve with iterative refinement: x <- (M + rho I)^-1 (rhs + rho x).
    const Matrix regularized = M + rho * Matrix::Identity(dims, dims);
    Eigen::LLT<Matrix> llt(regularized);
    require(llt.info() == Eigen::Success, "kernel SHAP regression system is singular",
            ErrorCode::kNumerical);
    Matrix sol = Matrix::Zero(dims, static_cast<Eigen::Index>(k));
    for (int iter = 0; iter < 100; ++iter) {
      Matrix next = llt.solve(rhs + rho * sol);
      const double change = (next - sol).cwiseAbs().maxCoeff();
      const double size = std::max(1.0, next.cwiseAbs().maxCoeff());
      sol = std::move(next);
      if (change <= 1e-15 * size) break;
    }
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j + 1 < p; ++j) {
        const double v = sol(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c));
        phi[j * k + c] = v;
        acc += v;
      }
      phi[(p - 1) * k + c] = delta[c] - acc;
    }
  }
};

}  // namespace

ShapTensor kernel_shap(const MarginModel& model, const Matrix& X, const Background& background,
                       const KernelShapOptions& options, KernelShapReport* report) {
  const std::size_t p = model.n_features();
  const std::size_t k = model.n_classes();
  require(p >= 1, "kernel SHAP needs at least one feature");
  require(static_cast<std::size_t>(X.cols()) == p, "feature count does not match model");
  require(background.rows.rows() >= 1, "background must contain at least one row");
  require(static_cast<std::size_t>(background.rows.cols()) == p,
          "background feature count does not match model");

  Explainer ex{model, background.rows, {}, {}, false, options, 0};
  if (options.base) {
    require(options.base->size() == k, "base vector has wrong length");
    ex.base = *options.base;
  } else {
    const Matrix m = model.predict_margins(background.rows);
    ex.base.assign(k, 0.0);
    for (Eigen::Index b = 0; b < m.rows(); ++b)
      for (std::size_t c = 0; c < k; ++c) ex.base[c] += m(b, static_cast<Eigen::Index>(c));
    for (auto& v : ex.base) v /= static_cast<double>(m.rows());
  }
  const std::size_t full = p < 63 ? static_cast<std::size_t>((std::uint64_t{1} << p) - 2)
                                   : std::numeric_limits<std::size_t>::max();
  ex.budget = options.n_coalitions ? options.n_coalitions : std::min<std::size_t>(full, 2048);
  {
    Rng probe(options.seed, "kernel_shap.probe");
    bool exact = false;
    auto coal = choose_coalitions(p, ex.budget, probe, exact);
    if (exact) {
      ex.coalitions = std::move(coal);
      ex.shared_exact = true;
    }
  }

  ShapTensor t(static_cast<std::size_t>(X.rows()), p, k);
  t.base = ex.base;
  t.method = ex.shared_exact ? "kernel_shap_exact" : "kernel_shap_sampled";
  const std::size_t n = t.n;
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, n));
  std::vector<char> deficient(n, 0);
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      bool flag = false;
      ex.explain(i, std::span<const double>(X.row(static_cast<Eigen::Index>(i)).data(), p), t.sample(i), flag);
      deficient[i] = flag;
    }
  };
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        try {
          work(std::min(n, w * chunk), std::min(n, (w + 1) * chunk));
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  if (report) {
    report->exact = ex.shared_exact;
    report->coalitions = ex.shared_exact ? ex.coalitions.size() : ex.budget;
    report->rank_deficient = std::any_of(deficient.begin(), deficient.end(), [](char c) { return c; });
    report->max_additivity_error = max_additivity_error(t, model.predict_margins(X));
  }
  return t;
}

}  // namespace hdshap
