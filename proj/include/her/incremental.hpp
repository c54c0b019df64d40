#pragma once

// Incremental HER: absorb new labelled samples into (T^-1, P) without the
// previously absorbed data. Chunks go through the Woodbury identity with an
// n' x n' SPD inner solve; single samples reduce to scalar divisions.

#include "her/core_model.hpp"

#include <vector>

namespace her {

struct UpdateBatch {
  Eigen::MatrixXd features;  // d x n'
  std::vector<IdentityId> labels;
};

enum class UpdatePath { scalar_sequential, chunk_woodbury };

const char* to_string(UpdatePath path) noexcept;

struct UpdateReport {
  Index samples_applied = 0;
  Index classes_added = 0;
  UpdatePath path = UpdatePath::chunk_woodbury;
  double elapsed_seconds = 0.0;
  // |T (T^-1 v) - v| / |v| for a pseudo-random probe v.
  double drift_estimate = 0.0;
  // Rows that landed on an already registered class. Earlier rows of that
  // class keep their old 1/sqrt(n_j) weight.
  Index stale_class_rows = 0;
};

struct PaddedIndicator {
  Index previous_class_count = 0;
  std::vector<IdentityId> new_classes;  // appended to the registry, in order
  Eigen::MatrixXd targets;              // n' x (c_t + c')
  Index stale_class_rows = 0;
};

// Indicator rows for the batch over the enlarged class set. Pure: the model
// is not modified.
PaddedIndicator pad_indicator(const HerModel& model, const UpdateBatch& batch);

// Each of these mutates the model in place. Validation happens before any
// state changes, so a throwing call leaves the model untouched.
UpdateReport update_chunk(HerModel& model, const UpdateBatch& batch);
UpdateReport update_single(HerModel& model, const Eigen::VectorXd& x, IdentityId label);

struct UpdatePolicy {
  Index min_scalar_threshold = 8;
  Index dim_divisor = 64;

  // Batches with n' at or below this go sample by sample.
  Index scalar_threshold(Index dim) const;
};

UpdateReport apply_update_policy(HerModel& model, const UpdateBatch& batch,
                                 const UpdatePolicy& policy = {});

// Re-fit from retained data, keeping the model's class column order.
HerModel refresh(const HerModel& model, const FeatureMatrix& full_data);

}  // namespace her
