#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace her {

using Index = Eigen::Index;
using IdentityId = std::uint32_t;

enum class View : std::uint8_t { probe = 0, gallery = 1 };

// Column-wise samples: values is d x n, one identity label and one camera
// view per column. Labels are arbitrary ids; class order everywhere is the
// order of first appearance.
struct FeatureMatrix {
  Eigen::MatrixXd values;
  std::vector<IdentityId> labels;
  std::vector<View> views;

  Index dim() const { return values.rows(); }
  Index size() const { return values.cols(); }

  // Throws invalid-input on shape mismatch, empty matrix or non-finite values.
  void validate() const;

  FeatureMatrix select(std::span<const Index> columns) const;
  FeatureMatrix with_view(View view) const;

  // Distinct labels in order of first appearance.
  std::vector<IdentityId> classes() const;

  static FeatureMatrix concat(const FeatureMatrix& a, const FeatureMatrix& b);
};

}  // namespace her
