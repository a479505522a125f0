#include <algorithm>
#include <cmath>

#include "hdshap/subgroup.hpp"

namespace hdshap {

namespace {

// Flip so that the largest-|entry| coordinate is positive; near-ties resolve
// to the lowest index.
template <typename Col>
void fix_sign(Col&& v) {
  const double top = v.cwiseAbs().maxCoeff();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (std::abs(v(i)) >= top - 1e-12 * std::max(1.0, top)) {
      if (v(i) < 0) v *= -1.0;
      return;
    }
  }
}

// Extends the first `have` orthonormal columns of Q to a full orthonormal set
// using standard basis vectors (modified Gram-Schmidt, twice).
void complete_basis(Matrix& Q, Eigen::Index have) {
  const Eigen::Index d = Q.rows();
  Eigen::Index next = have;
  for (Eigen::Index e = 0; e < d && next < Q.cols(); ++e) {
    Vector v = Vector::Unit(d, e);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index c = 0; c < next; ++c) v -= Q.col(c).dot(v) * Q.col(c);
    const double norm = v.norm();
    if (norm < 1e-8) continue;
    Q.col(next++) = v / norm;
  }
}

}  // namespace

PcaModel pca_fit(const Matrix& X, std::size_t r) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  require(n >= 2, "PCA needs at least two rows");
  require(r >= 1 && static_cast<Eigen::Index>(r) <= std::min(n - 1, d),
          "PCA target dimension must lie in [1, min(n - 1, d)]");
  const auto rr = static_cast<Eigen::Index>(r);

  PcaModel m;
  m.mean = X.colwise().mean().transpose();
  const Matrix Xc = X.rowwise() - m.mean.transpose();
  const double denom = static_cast<double>(n - 1);
  m.total_variance = Xc.squaredNorm() / denom;
  m.loadings = Matrix::Zero(d, rr);
  m.eigenvalues = Vector::Zero(rr);

  if (m.total_variance == 0.0) {
    m.degenerate = true;
    complete_basis(m.loadings, 0);
    return m;
  }

  if (d <= n) {
    const Matrix cov = (Xc.transpose() * Xc) / denom;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    require(eig.info() == Eigen::Success, "covariance eigendecomposition failed", ErrorCode::kNumerical);
    for (Eigen::Index c = 0; c < rr; ++c) {
      m.eigenvalues(c) = eig.eigenvalues()(d - 1 - c);
      m.loadings.col(c) = eig.eigenvectors().col(d - 1 - c);
    }
  } else {
    // Gram route: eigenvectors u of Xc Xc^T / (n-1) map to loadings Xc^T u / sqrt((n-1) lambda).
    const Matrix gram = (Xc * Xc.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    require(eig.info() == Eigen::Success, "Gram eigendecomposition failed", ErrorCode::kNumerical);
    const double top = eig.eigenvalues()(n - 1);
    Eigen::Index have = 0;
    for (Eigen::Index c = 0; c < rr; ++c) {
      const double lambda = eig.eigenvalues()(n - 1 - c);
      if (lambda <= 1e-12 * top) break;
      m.eigenvalues(c) = lambda;
      m.loadings.col(c) = Xc.transpose() * eig.eigenvectors().col(n - 1 - c) / std::sqrt(denom * lambda);
      ++have;
    }
    complete_basis(m.loadings, have);
  }
  for (Eigen::Index c = 0; c < rr; ++c) fix_sign(m.loadings.col(c));
  return m;
}

Matrix pca_transform(const PcaModel& model, const Matrix& X) {
  require(X.cols() == model.mean.size(), "PCA input dimension does not match the model");
  return (X.rowwise() - model.mean.transpose()) * model.loadings;
}

}  // namespace hdshap
