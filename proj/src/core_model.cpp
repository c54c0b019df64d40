#include "her/core_model.hpp"

#include "her/error.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

namespace her {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid-input";
    case ErrorCode::invalid_parameter: return "invalid-parameter";
    case ErrorCode::model_not_incremental: return "model-not-incremental";
    case ErrorCode::format_error: return "format-error";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::bootstrap_required: return "bootstrap-required";
    case ErrorCode::invalid_state: return "invalid-state";
    case ErrorCode::pool_exhausted: return "pool-exhausted";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::conflict: return "conflict";
  }
  return "unknown";
}

void FeatureMatrix::validate() const {
  if (values.rows() < 1 || values.cols() < 1)
    fail(ErrorCode::invalid_input, "feature matrix must have d >= 1 and n >= 1");
  if (static_cast<Index>(labels.size()) != values.cols())
    fail(ErrorCode::invalid_input, "label count " + std::to_string(labels.size()) +
                                       " does not match sample count " +
                                       std::to_string(values.cols()));
  if (static_cast<Index>(views.size()) != values.cols())
    fail(ErrorCode::invalid_input, "view count does not match sample count");
  if (!values.allFinite())
    fail(ErrorCode::invalid_input, "feature matrix contains non-finite values");
}

FeatureMatrix FeatureMatrix::select(std::span<const Index> columns) const {
  FeatureMatrix out;
  out.values.resize(values.rows(), static_cast<Index>(columns.size()));
  out.labels.reserve(columns.size());
  out.views.reserve(columns.size());
  for (std::size_t k = 0; k < columns.size(); ++k) {
    const Index c = columns[k];
    out.values.col(static_cast<Index>(k)) = values.col(c);
    out.labels.push_back(labels[static_cast<std::size_t>(c)]);
    out.views.push_back(views[static_cast<std::size_t>(c)]);
  }
  return out;
}

FeatureMatrix FeatureMatrix::with_view(View view) const {
  std::vector<Index> cols;
  for (std::size_t i = 0; i < views.size(); ++i)
    if (views[i] == view) cols.push_back(static_cast<Index>(i));
  return select(cols);
}

std::vector<IdentityId> FeatureMatrix::classes() const {
  std::vector<IdentityId> out;
  std::unordered_map<IdentityId, bool> seen;
  for (IdentityId l : labels)
    if (seen.emplace(l, true).second) out.push_back(l);
  return out;
}

FeatureMatrix FeatureMatrix::concat(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.dim() != b.dim())
    fail(ErrorCode::invalid_input, "cannot concatenate feature matrices of different dimension");
  FeatureMatrix out;
  out.values.resize(a.dim(), a.size() + b.size());
  out.values << a.values, b.values;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.views = a.views;
  out.views.insert(out.views.end(), b.views.begin(), b.views.end());
  return out;
}

IndicatorMatrix build_indicator(std::span<const IdentityId> labels) {
  if (labels.empty()) fail(ErrorCode::invalid_input, "empty label sequence");

  IndicatorMatrix y;
  std::unordered_map<IdentityId, Index> column_of;
  std::vector<Index> column(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = column_of.emplace(labels[i], static_cast<Index>(y.classes.size()));
    if (inserted) {
      y.classes.push_back(labels[i]);
      y.class_sizes.push_back(0);
    }
    column[i] = it->second;
    ++y.class_sizes[static_cast<std::size_t>(it->second)];
  }

  const auto n = static_cast<Index>(labels.size());
  const auto c = static_cast<Index>(y.classes.size());
  y.values = Eigen::MatrixXd::Zero(n, c);
  for (Index i = 0; i < n; ++i) {
    const Index j = column[static_cast<std::size_t>(i)];
    y.values(i, j) = 1.0 / std::sqrt(static_cast<double>(y.class_sizes[static_cast<std::size_t>(j)]));
  }
  return y;
}

HerModel HerModel::empty_incremental(Index dim, double lambda) {
  if (!(lambda > 0.0)) fail(ErrorCode::invalid_parameter, "lambda must be positive");
  if (dim < 1) fail(ErrorCode::invalid_input, "feature dimension must be >= 1");
  HerModel m;
  m.lambda = lambda;
  m.projection.resize(dim, 0);
  m.regularized_gram = Eigen::MatrixXd::Identity(dim, dim) * lambda;
  m.t_inverse = Eigen::MatrixXd::Identity(dim, dim) / lambda;
  return m;
}

HerModel fit_her_primal(const FeatureMatrix& features, double lambda,
                        const FitOptions& options) {
  if (!(lambda > 0.0) || !std::isfinite(lambda))
    fail(ErrorCode::invalid_parameter, "lambda must be positive and finite");
  features.validate();

  const Index d = features.dim();
  const Index n = features.size();
  if (options.incremental && d > options.max_incremental_dim && !options.allow_large_dim)
    fail(ErrorCode::invalid_parameter,
         "incremental mode stores a dense d x d inverse; d = " + std::to_string(d) +
             " exceeds the cap of " + std::to_string(options.max_incremental_dim));

  const IndicatorMatrix y = build_indicator(features.labels);
  const Eigen::MatrixXd& x = features.values;

  HerModel model;
  model.lambda = lambda;
  model.class_registry = y.classes;
  model.class_sizes = y.class_sizes;

  if (!options.incremental && d > n) {
    // Push-through: (X X^T + lambda I)^-1 X = X (X^T X + lambda I)^-1.
    Eigen::MatrixXd gram = Eigen::MatrixXd::Identity(n, n) * lambda;
    gram.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(gram.selfadjointView<Eigen::Lower>());
    if (llt.info() != Eigen::Success)
      fail(ErrorCode::invalid_input, "regularized Gram matrix is not positive definite");
    model.projection = x * llt.solve(y.values);
    return model;
  }

  Eigen::MatrixXd t = Eigen::MatrixXd::Identity(d, d) * lambda;
  t.selfadjointView<Eigen::Lower>().rankUpdate(x);
  t = t.selfadjointView<Eigen::Lower>();
  Eigen::LLT<Eigen::MatrixXd> llt(t);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::invalid_input, "X X^T + lambda I is not positive definite");
  model.projection = llt.solve(x * y.values);

  if (options.incremental) {
    Eigen::MatrixXd t_inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
    model.t_inverse = 0.5 * (t_inv + t_inv.transpose());
    model.regularized_gram = std::move(t);
  }
  return model;
}

Eigen::MatrixXd project(const HerModel& model, const Eigen::MatrixXd& z) {
  if (z.rows() != model.feature_dim())
    fail(ErrorCode::invalid_input, "feature dimension " + std::to_string(z.rows()) +
                                       " does not match model dimension " +
                                       std::to_string(model.feature_dim()));
  return z.transpose() * model.projection;
}

Eigen::VectorXd project(const HerModel& model, const Eigen::VectorXd& z) {
  if (z.size() != model.feature_dim())
    fail(ErrorCode::invalid_input, "feature dimension mismatch");
  return model.projection.transpose() * z;
}

double model_distance(const HerModel& model, const Eigen::VectorXd& x1,
                      const Eigen::VectorXd& x2) {
  if (x1.size() != model.feature_dim() || x2.size() != model.feature_dim())
    fail(ErrorCode::invalid_input, "feature dimension mismatch");
  const Eigen::VectorXd diff = x1 - x2;
  return (model.projection.transpose() * diff).squaredNorm();
}

Eigen::MatrixXd pairwise_squared_distances(const Eigen::MatrixXd& a,
                                           const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.cols(), b.cols());
  for (Index j = 0; j < b.cols(); ++j)
    for (Index i = 0; i < a.cols(); ++i)
      out(i, j) = (a.col(i) - b.col(j)).squaredNorm();
  return out;
}

ScatterStats scatter_stats(const FeatureMatrix& features) {
  features.validate();
  const Eigen::MatrixXd& x = features.values;
  const Index d = features.dim();
  const Index n = features.size();

  const std::vector<IdentityId> classes = features.classes();
  std::unordered_map<IdentityId, Index> column_of;
  for (std::size_t j = 0; j < classes.size(); ++j) column_of[classes[j]] = static_cast<Index>(j);

  const auto c = static_cast<Index>(classes.size());
  ScatterStats s;
  s.class_means = Eigen::MatrixXd::Zero(d, c);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(c);
  for (Index i = 0; i < n; ++i) {
    const Index j = column_of[features.labels[static_cast<std::size_t>(i)]];
    s.class_means.col(j) += x.col(i);
    counts(j) += 1.0;
  }
  for (Index j = 0; j < c; ++j) s.class_means.col(j) /= counts(j);
  s.global_mean = x.rowwise().mean();

  s.within = Eigen::MatrixXd::Zero(d, d);
  for (Index i = 0; i < n; ++i) {
    const Index j = column_of[features.labels[static_cast<std::size_t>(i)]];
    const Eigen::VectorXd r = x.col(i) - s.class_means.col(j);
    s.within.noalias() += r * r.transpose();
  }
  s.within /= static_cast<double>(n);

  s.between = Eigen::MatrixXd::Zero(d, d);
  for (Index j = 0; j < c; ++j) {
    const Eigen::VectorXd r = s.class_means.col(j) - s.global_mean;
    s.between.noalias() += counts(j) * (r * r.transpose());
  }
  return s;
}

double her_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                     const Eigen::MatrixXd& p, double lambda) {
  return 0.5 * (x.transpose() * p - y).squaredNorm() + 0.5 * lambda * p.squaredNorm();
}

Eigen::MatrixXd her_objective_gradient(const Eigen::MatrixXd& x,
                                       const Eigen::MatrixXd& y,
                                       const Eigen::MatrixXd& p, double lambda) {
  return x * (x.transpose() * p - y) + lambda * p;
}

double fisher_trace(const Eigen::MatrixXd& projection, const ScatterStats& stats) {
  const Eigen::MatrixXd w = projection.transpose() * stats.within * projection;
  const Eigen::MatrixXd b = projection.transpose() * stats.between * projection;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(w);
  return (cod.pseudoInverse() * b).trace();
}

}  // namespace her
