#pragma once

#include "her/active.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace her {

struct RunConfig {
  double lambda = 1.0;
  KernelSpec kernel;
  Policy policy = Policy::joint_e2;
  double budget_fraction = 0.5;
  std::uint64_t seed = 0;
  int trials = 10;
  std::vector<double> milestones = {0.1, 0.2, 0.3, 0.4, 0.5, 1.0};
  GallerySet criteria_gallery = GallerySet::full;
  UpdatePolicy update_policy;
  std::vector<double> lambda_grid = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
  int cv_folds = 3;

  SimulationConfig simulation() const;
};

// Keys mirror the field names; unknown keys are rejected. Policy values are
// "joint-e2" | "random" | "density", kernels "linear" | "rbf" with an
// optional "bandwidth", criteria_gallery "full" | "unlabeled".
RunConfig parse_run_config(std::string_view json_text);
RunConfig merge_run_config(const RunConfig& base, std::string_view json_text);
std::string dump_run_config(const RunConfig& config);

}  // namespace her
