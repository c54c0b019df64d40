#include "her/core_model.hpp"

#include "her/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace her {

double median_squared_distance(const Eigen::MatrixXd& a) {
  const Index n = a.cols();
  if (n < 2) fail(ErrorCode::invalid_input, "median heuristic needs at least two samples");
  std::vector<double> sq;
  sq.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index j = 1; j < n; ++j)
    for (Index i = 0; i < j; ++i) sq.push_back((a.col(i) - a.col(j)).squaredNorm());

  const std::size_t mid = sq.size() / 2;
  std::nth_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(mid), sq.end());
  double median = sq[mid];
  if (sq.size() % 2 == 0) {
    const double lower = *std::max_element(sq.begin(), sq.begin() + static_cast<std::ptrdiff_t>(mid));
    median = 0.5 * (median + lower);
  }
  return median;
}

Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           std::optional<double> sigma) {
  if (a.rows() != b.rows())
    fail(ErrorCode::invalid_input, "kernel arguments differ in feature dimension");
  double sigma_sq = 0.0;
  if (sigma) {
    if (!(*sigma > 0.0)) fail(ErrorCode::invalid_parameter, "RBF bandwidth must be positive");
    sigma_sq = *sigma * *sigma;
  } else {
    sigma_sq = median_squared_distance(a);
    if (!(sigma_sq > 0.0))
      fail(ErrorCode::invalid_parameter, "median heuristic produced a zero bandwidth");
  }
  Eigen::MatrixXd k = pairwise_squared_distances(a, b);
  return (-k.array() / (2.0 * sigma_sq)).exp().matrix();
}

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows())
    fail(ErrorCode::invalid_input, "kernel arguments differ in feature dimension");
  if (spec.kind == KernelSpec::Kind::linear) return a.transpose() * b;
  return rbf_kernel(a, b, spec.bandwidth);
}

KernelModel fit_her_dual(const FeatureMatrix& features, double lambda,
                         const KernelSpec& kernel) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    fail(ErrorCode::invalid_parameter, "lambda must be positive and finite");
  features.validate();

  KernelModel model;
  model.lambda = lambda;
  model.kernel = kernel;
  if (kernel.kind == KernelSpec::Kind::rbf && !kernel.bandwidth)
    model.kernel.bandwidth = std::sqrt(median_squared_distance(features.values));
  model.support = features;

  const IndicatorMatrix y = build_indicator(features.labels);
  model.class_registry = y.classes;

  const Index n = features.size();
  const Eigen::MatrixXd k = kernel_matrix(model.kernel, features.values, features.values);

  // K (K + lambda I) Q = K Y. With K nonsingular this is (K + lambda I) Q = Y;
  // otherwise apply the pseudo-inverse on the eigenbasis of K.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k);
  if (eig.info() != Eigen::Success)
    fail(ErrorCode::invalid_input, "kernel eigendecomposition failed");
  const Eigen::VectorXd& sigma = eig.eigenvalues();
  const double cut = 1e-12 * sigma.cwiseAbs().maxCoeff();

  if ((sigma.cwiseAbs().array() > cut).all() && sigma.minCoeff() > 0.0) {
    Eigen::MatrixXd shifted = k;
    shifted.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() != Eigen::Success)
      fail(ErrorCode::invalid_input, "K + lambda I is not positive definite");
    model.dual_coefficients = llt.solve(y.values);
    return model;
  }

  Eigen::VectorXd gain(n);
  for (Index i = 0; i < n; ++i)
    gain(i) = std::abs(sigma(i)) > cut ? 1.0 / (sigma(i) + lambda) : 0.0;
  const Eigen::MatrixXd& v = eig.eigenvectors();
  model.dual_coefficients = v * gain.asDiagonal() * (v.transpose() * y.values);
  return model;
}

Eigen::MatrixXd project(const KernelModel& model, const Eigen::MatrixXd& z) {
  if (z.rows() != model.support.dim())
    fail(ErrorCode::invalid_input, "feature dimension " + std::to_string(z.rows()) +
                                       " does not match support dimension " +
                                       std::to_string(model.support.dim()));
  return kernel_matrix(model.kernel, z, model.support.values) * model.dual_coefficients;
}

double model_distance(const KernelModel& model, const Eigen::VectorXd& x1,
                      const Eigen::VectorXd& x2) {
  Eigen::MatrixXd z(x1.size(), 2);
  if (x1.size() != x2.size()) fail(ErrorCode::invalid_input, "feature dimension mismatch");
  z << x1, x2;
  const Eigen::MatrixXd p = project(model, z);
  return (p.row(0) - p.row(1)).squaredNorm();
}

}  // namespace her
