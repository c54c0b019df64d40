#include "her/incremental.hpp"

#include "her/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace her {

const char* to_string(UpdatePath path) noexcept {
  return path == UpdatePath::scalar_sequential ? "scalar-sequential" : "chunk-woodbury";
}

namespace {

using Clock = std::chrono::steady_clock;

void validate(const HerModel& model, const UpdateBatch& batch) {
  if (!model.incremental())
    fail(ErrorCode::model_not_incremental, "model carries no inverse; refit with incremental mode");
  if (batch.features.cols() < 1) fail(ErrorCode::invalid_input, "update batch is empty");
  if (batch.features.rows() != model.feature_dim())
    fail(ErrorCode::invalid_input, "batch dimension " + std::to_string(batch.features.rows()) +
                                       " does not match model dimension " +
                                       std::to_string(model.feature_dim()));
  if (static_cast<Index>(batch.labels.size()) != batch.features.cols())
    fail(ErrorCode::invalid_input, "batch label count does not match sample count");
  if (!batch.features.allFinite())
    fail(ErrorCode::invalid_input, "batch contains non-finite values");
}

double estimate_drift(const HerModel& model) {
  const Index d = model.feature_dim();
  std::mt19937_64 rng(0x5eedULL + static_cast<std::uint64_t>(model.class_count()));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::VectorXd v(d);
  for (Index i = 0; i < d; ++i) v(i) = u(rng);
  const Eigen::VectorXd w = *model.regularized_gram * (*model.t_inverse * v);
  return (w - v).norm() / v.norm();
}

void pad_projection(HerModel& model, const PaddedIndicator& padded) {
  const Index added = static_cast<Index>(padded.new_classes.size());
  if (added == 0) return;
  const Index c = model.class_count();
  model.projection.conservativeResize(Eigen::NoChange, c + added);
  model.projection.rightCols(added).setZero();
  model.class_registry.insert(model.class_registry.end(), padded.new_classes.begin(),
                              padded.new_classes.end());
  model.class_sizes.resize(model.class_registry.size(), 0);
}

void count_samples(HerModel& model, const UpdateBatch& batch) {
  std::unordered_map<IdentityId, std::size_t> column_of;
  for (std::size_t j = 0; j < model.class_registry.size(); ++j)
    column_of[model.class_registry[j]] = j;
  for (IdentityId l : batch.labels) ++model.class_sizes[column_of.at(l)];
}

// One sample, targets already padded to the current class count.
void scalar_update(HerModel& model, const Eigen::Ref<const Eigen::VectorXd>& x,
                   const Eigen::Ref<const Eigen::VectorXd>& target) {
  Eigen::MatrixXd& t_inv = *model.t_inverse;
  const Eigen::VectorXd a = t_inv * x;
  const double s = 1.0 + x.dot(a);
  const Eigen::VectorXd b = a / s;  // T_{t+1}^-1 x

  const Eigen::RowVectorXd xtp = x.transpose() * model.projection;
  model.projection.noalias() -= b * xtp;
  model.projection.noalias() += b * target.transpose();

  t_inv.noalias() -= b * a.transpose();
  model.regularized_gram->noalias() += x * x.transpose();
}

void symmetrize(Eigen::MatrixXd& m) {
  const Index d = m.rows();
  for (Index j = 0; j < d; ++j)
    for (Index i = j + 1; i < d; ++i) {
      const double avg = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = avg;
      m(j, i) = avg;
    }
}

}  // namespace

PaddedIndicator pad_indicator(const HerModel& model, const UpdateBatch& batch) {
  if (batch.labels.empty()) fail(ErrorCode::invalid_input, "update batch is empty");

  std::unordered_map<IdentityId, Index> column_of;
  for (std::size_t j = 0; j < model.class_registry.size(); ++j)
    column_of[model.class_registry[j]] = static_cast<Index>(j);

  PaddedIndicator out;
  out.previous_class_count = model.class_count();

  std::unordered_map<IdentityId, Index> batch_count;
  for (IdentityId l : batch.labels) {
    if (!column_of.contains(l)) {
      column_of[l] = out.previous_class_count + static_cast<Index>(out.new_classes.size());
      out.new_classes.push_back(l);
    }
    ++batch_count[l];
  }

  const Index n = static_cast<Index>(batch.labels.size());
  const Index c = out.previous_class_count + static_cast<Index>(out.new_classes.size());
  out.targets = Eigen::MatrixXd::Zero(n, c);
  for (Index i = 0; i < n; ++i) {
    const IdentityId l = batch.labels[static_cast<std::size_t>(i)];
    const Index j = column_of[l];
    Index class_size = batch_count[l];
    if (j < out.previous_class_count) {
      class_size += model.class_sizes.empty() ? 0 : model.class_sizes[static_cast<std::size_t>(j)];
      ++out.stale_class_rows;
    }
    out.targets(i, j) = 1.0 / std::sqrt(static_cast<double>(class_size));
  }
  return out;
}

UpdateReport update_chunk(HerModel& model, const UpdateBatch& batch) {
  validate(model, batch);
  const auto start = Clock::now();

  const PaddedIndicator padded = pad_indicator(model, batch);
  const Eigen::MatrixXd& xb = batch.features;
  const Index n = xb.cols();

  Eigen::MatrixXd& t_inv = *model.t_inverse;
  const Eigen::MatrixXd a = t_inv * xb;  // T_t^-1 X'
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
  s.noalias() += xb.transpose() * a;
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success)
    fail(ErrorCode::invalid_input, "Woodbury inner matrix is not positive definite");
  // T_{t+1}^-1 X' = T_t^-1 X' (I + X'^T T_t^-1 X')^-1
  const Eigen::MatrixXd b = llt.solve(a.transpose()).transpose();

  const Eigen::MatrixXd xtp = xb.transpose() * model.projection;
  model.projection.noalias() -= b * xtp;
  pad_projection(model, padded);
  model.projection.noalias() += b * padded.targets;

  t_inv.noalias() -= b * a.transpose();
  symmetrize(t_inv);
  model.regularized_gram->noalias() += xb * xb.transpose();
  count_samples(model, batch);

  UpdateReport report;
  report.samples_applied = n;
  report.classes_added = static_cast<Index>(padded.new_classes.size());
  report.path = UpdatePath::chunk_woodbury;
  report.stale_class_rows = padded.stale_class_rows;
  report.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  report.drift_estimate = estimate_drift(model);
  return report;
}

namespace {

UpdateReport sequential_updates(HerModel& model, const UpdateBatch& batch) {
  const auto start = Clock::now();
  const PaddedIndicator padded = pad_indicator(model, batch);
  pad_projection(model, padded);
  for (Index i = 0; i < batch.features.cols(); ++i)
    scalar_update(model, batch.features.col(i), padded.targets.row(i).transpose());
  symmetrize(*model.t_inverse);
  count_samples(model, batch);

  UpdateReport report;
  report.samples_applied = batch.features.cols();
  report.classes_added = static_cast<Index>(padded.new_classes.size());
  report.path = UpdatePath::scalar_sequential;
  report.stale_class_rows = padded.stale_class_rows;
  report.elapsed_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  report.drift_estimate = estimate_drift(model);
  return report;
}

}  // namespace

UpdateReport update_single(HerModel& model, const Eigen::VectorXd& x, IdentityId label) {
  UpdateBatch batch{x, {label}};
  validate(model, batch);
  return sequential_updates(model, batch);
}

Index UpdatePolicy::scalar_threshold(Index dim) const {
  return std::max(min_scalar_threshold, dim / std::max<Index>(dim_divisor, 1));
}

UpdateReport apply_update_policy(HerModel& model, const UpdateBatch& batch,
                                 const UpdatePolicy& policy) {
  validate(model, batch);
  if (batch.features.cols() <= policy.scalar_threshold(model.feature_dim()))
    return sequential_updates(model, batch);
  return update_chunk(model, batch);
}

HerModel refresh(const HerModel& model, const FeatureMatrix& full_data) {
  full_data.validate();
  const std::vector<IdentityId> classes = full_data.classes();
  const std::unordered_set<IdentityId> registered(model.class_registry.begin(),
                                                  model.class_registry.end());
  const std::unordered_set<IdentityId> present(classes.begin(), classes.end());
  if (registered != present)
    fail(ErrorCode::invalid_input, "refresh data label set does not match the model registry");

  FitOptions options;
  options.incremental = true;
  options.allow_large_dim = true;
  HerModel fresh = fit_her_primal(full_data, model.lambda, options);

  std::unordered_map<IdentityId, Index> column_of;
  for (std::size_t j = 0; j < fresh.class_registry.size(); ++j)
    column_of[fresh.class_registry[j]] = static_cast<Index>(j);

  HerModel out = std::move(fresh);
  Eigen::MatrixXd reordered(out.projection.rows(), out.projection.cols());
  std::vector<Index> sizes(model.class_registry.size());
  for (std::size_t j = 0; j < model.class_registry.size(); ++j) {
    const Index src = column_of[model.class_registry[j]];
    reordered.col(static_cast<Index>(j)) = out.projection.col(src);
    sizes[j] = out.class_sizes[static_cast<std::size_t>(src)];
  }
  out.projection = std::move(reordered);
  out.class_registry = model.class_registry;
  out.class_sizes = std::move(sizes);
  return out;
}

}  // namespace her
