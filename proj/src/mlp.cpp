#include <cmath>
#include <numeric>

#include "hdshap/models.hpp"

namespace hdshap {

Mlp::Mlp(std::vector<int> layer_sizes) : layer_sizes_(std::move(layer_sizes)) {
  require(layer_sizes_.size() >= 2, "an MLP needs input and output layer sizes");
  for (int s : layer_sizes_) require(s >= 1, "layer sizes must be positive");
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    weights_.push_back(Matrix::Zero(layer_sizes_[l + 1], layer_sizes_[l]));
    biases_.push_back(Vector::Zero(layer_sizes_[l + 1]));
  }
}

Matrix Mlp::predict_margins(const Matrix& X) const {
  require(static_cast<std::size_t>(X.cols()) == n_features(), "feature count does not match model");
  Matrix a = X;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Matrix z = a * weights_[l].transpose();
    z.rowwise() += biases_[l].transpose();
    if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

void Mlp::predict_margin(std::span<const double> x, std::span<double> out) const {
  Vector a = Eigen::Map<const Vector>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Vector z = weights_[l] * a + biases_[l];
    if (l + 1 < weights_.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  std::copy(a.data(), a.data() + a.size(), out.begin());
}

Mlp init_mlp(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  Mlp net(layer_sizes);
  Rng rng(seed, "mlp.init");
  // He-style scaled uniform: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
  for (auto& w : net.weights()) {
    const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
  }
  return net;
}

namespace {

double weight_penalty(const Mlp& net, double l2) {
  if (l2 == 0.0) return 0.0;
  double s = 0.0;
  for (const auto& w : net.weights()) s += w.squaredNorm();
  return 0.5 * l2 * s;
}

}  // namespace

MlpGradient mlp_loss_gradient(const Mlp& net, const Matrix& X, std::span<const int> labels,
                              double l2) {
  const auto n = X.rows();
  const std::size_t L = net.weights().size();
  // Forward pass, keeping pre-activations and activations.
  std::vector<Matrix> acts{X};
  std::vector<Matrix> pre;
  for (std::size_t l = 0; l < L; ++l) {
    Matrix z = acts.back() * net.weights()[l].transpose();
    z.rowwise() += net.biases()[l].transpose();
    pre.push_back(z);
    acts.push_back(l + 1 < L ? Matrix(z.cwiseMax(0.0)) : z);
  }
  const Matrix& logits = acts.back();
  Matrix delta(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = logits.row(i).maxCoeff();
    delta.row(i) = (logits.row(i).array() - m).exp();
    const double z = delta.row(i).sum();
    delta.row(i) /= z;
    const auto y = labels[static_cast<std::size_t>(i)];
    loss += m + std::log(z) - logits(i, y);
    delta(i, y) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  delta *= inv_n;

  MlpGradient out;
  out.loss = loss * inv_n + weight_penalty(net, l2);
  out.weights.resize(L);
  out.biases.resize(L);
  for (std::size_t l = L; l-- > 0;) {
    out.weights[l] = delta.transpose() * acts[l] + l2 * net.weights()[l];
    out.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix back = delta * net.weights()[l];
      delta = back.array() * (pre[l - 1].array() > 0.0).cast<double>();
    }
  }
  return out;
}

double mlp_loss(const Mlp& net, const Matrix& X, std::span<const int> labels, double l2) {
  const Matrix logits = net.predict_margins(X);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    loss += m + std::log((logits.row(i).array() - m).exp().sum()) -
            logits(i, labels[static_cast<std::size_t>(i)]);
  }
  return loss / static_cast<double>(logits.rows()) + weight_penalty(net, l2);
}

Mlp train_mlp(const Dataset& train, const MlpParams& params, std::vector<double>* loss_history) {
  require(train.n_samples() >= 1, "cannot train an MLP on an empty dataset");
  require(params.epochs >= 0 && params.batch_size >= 1, "epochs and batch size must be positive");
  require(params.learning_rate > 0.0, "learning rate must be positive");
  std::vector<int> sizes{static_cast<int>(train.n_features())};
  sizes.insert(sizes.end(), params.hidden.begin(), params.hidden.end());
  sizes.push_back(static_cast<int>(train.n_classes()));
  Mlp net = init_mlp(sizes, params.seed);

  const std::size_t L = net.weights().size();
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
  for (std::size_t l = 0; l < L; ++l) {
    mw.push_back(Matrix::Zero(net.weights()[l].rows(), net.weights()[l].cols()));
    vw.push_back(mw.back());
    mb.push_back(Vector::Zero(net.biases()[l].size()));
    vb.push_back(mb.back());
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  Rng rng(params.seed, "mlp.batches");
  std::vector<std::size_t> order(train.n_samples());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(params.batch_size);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      Matrix xb(static_cast<Eigen::Index>(stop - start), train.features.cols());
      std::vector<int> yb(stop - start);
      for (std::size_t r = start; r < stop; ++r) {
        xb.row(static_cast<Eigen::Index>(r - start)) = train.features.row(static_cast<Eigen::Index>(order[r]));
        yb[r - start] = train.labels[order[r]];
      }
      const MlpGradient g = mlp_loss_gradient(net, xb, yb, params.l2);
      ++step;
      for (std::size_t l = 0; l < L; ++l) {
        if (params.optimizer == MlpOptimizer::kSgd) {
          net.weights()[l] -= params.learning_rate * g.weights[l];
          net.biases()[l] -= params.learning_rate * g.biases[l];
          continue;
        }
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        mw[l] = beta1 * mw[l] + (1.0 - beta1) * g.weights[l];
        vw[l] = beta2 * vw[l] + (1.0 - beta2) * g.weights[l].cwiseAbs2();
        mb[l] = beta1 * mb[l] + (1.0 - beta1) * g.biases[l];
        vb[l] = beta2 * vb[l] + (1.0 - beta2) * g.biases[l].cwiseAbs2();
        net.weights()[l].array() -=
            params.learning_rate * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + eps);
        net.biases()[l].array() -=
            params.learning_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
      }
    }
    const double loss = mlp_loss(net, train.features, train.labels, params.l2);
    require(std::isfinite(loss), "MLP loss became non-finite at epoch " + std::to_string(epoch + 1),
            ErrorCode::kNumerical);
    if (loss_history) loss_history->push_back(loss);
  }
  return net;
}

}  // namespace hdshap
