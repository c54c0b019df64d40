#include "her/config.hpp"

#include "her/error.hpp"

#include "json.hpp"

namespace her {

using nlohmann::json;

namespace {

template <class T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_parameter, std::string("config key '") + key + "': " + e.what());
  }
}

void validate(const RunConfig& c) {
  if (!(c.lambda > 0.0)) fail(ErrorCode::invalid_parameter, "lambda must be positive");
  if (!(c.budget_fraction > 0.0 && c.budget_fraction <= 1.0))
    fail(ErrorCode::invalid_parameter, "budget_fraction must lie in (0, 1]");
  if (c.trials < 1) fail(ErrorCode::invalid_parameter, "trials must be >= 1");
  if (c.cv_folds < 2) fail(ErrorCode::invalid_parameter, "cv_folds must be >= 2");
  for (double m : c.milestones)
    if (!(m > 0.0 && m <= 1.0)) fail(ErrorCode::invalid_parameter, "milestones must lie in (0, 1]");
  for (double l : c.lambda_grid)
    if (!(l > 0.0)) fail(ErrorCode::invalid_parameter, "lambda_grid entries must be positive");
  if (c.kernel.bandwidth && !(*c.kernel.bandwidth > 0.0))
    fail(ErrorCode::invalid_parameter, "kernel bandwidth must be positive");
  if (c.update_policy.dim_divisor < 1)
    fail(ErrorCode::invalid_parameter, "update_dim_divisor must be >= 1");
}

}  // namespace

SimulationConfig RunConfig::simulation() const {
  SimulationConfig s;
  s.policy = policy;
  s.budget_fraction = budget_fraction;
  s.seed = seed;
  s.trials = trials;
  s.lambda = lambda;
  s.milestones = milestones;
  s.criteria_gallery = criteria_gallery;
  s.update_policy = update_policy;
  return s;
}

RunConfig merge_run_config(const RunConfig& base, std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_parameter, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::invalid_parameter, "config must be a JSON object");

  RunConfig c = base;
  for (const auto& [key, value] : j.items()) {
    if (key == "lambda") {
      c.lambda = get<double>(j, "lambda");
    } else if (key == "kernel") {
      const auto kind = get<std::string>(j, "kernel");
      if (kind == "linear")
        c.kernel.kind = KernelSpec::Kind::linear;
      else if (kind == "rbf")
        c.kernel.kind = KernelSpec::Kind::rbf;
      else
        fail(ErrorCode::invalid_parameter, "unknown kernel '" + kind + "'");
    } else if (key == "bandwidth") {
      if (value.is_null() || value == "median")
        c.kernel.bandwidth.reset();
      else
        c.kernel.bandwidth = get<double>(j, "bandwidth");
    } else if (key == "policy") {
      c.policy = parse_policy(get<std::string>(j, "policy"));
    } else if (key == "budget_fraction") {
      c.budget_fraction = get<double>(j, "budget_fraction");
    } else if (key == "seed") {
      c.seed = get<std::uint64_t>(j, "seed");
    } else if (key == "trials") {
      c.trials = get<int>(j, "trials");
    } else if (key == "milestones") {
      c.milestones = get<std::vector<double>>(j, "milestones");
    } else if (key == "criteria_gallery") {
      const auto g = get<std::string>(j, "criteria_gallery");
      if (g == "full")
        c.criteria_gallery = GallerySet::full;
      else if (g == "unlabeled")
        c.criteria_gallery = GallerySet::unlabeled;
      else
        fail(ErrorCode::invalid_parameter, "criteria_gallery must be 'full' or 'unlabeled'");
    } else if (key == "update_min_scalar") {
      c.update_policy.min_scalar_threshold = get<Index>(j, "update_min_scalar");
    } else if (key == "update_dim_divisor") {
      c.update_policy.dim_divisor = get<Index>(j, "update_dim_divisor");
    } else if (key == "lambda_grid") {
      c.lambda_grid = get<std::vector<double>>(j, "lambda_grid");
    } else if (key == "cv_folds") {
      c.cv_folds = get<int>(j, "cv_folds");
    } else {
      fail(ErrorCode::invalid_parameter, "unknown config key '" + key + "'");
    }
  }
  validate(c);
  return c;
}

RunConfig parse_run_config(std::string_view json_text) { return merge_run_config({}, json_text); }

std::string dump_run_config(const RunConfig& c) {
  json j;
  j["lambda"] = c.lambda;
  j["kernel"] = c.kernel.kind == KernelSpec::Kind::linear ? "linear" : "rbf";
  if (c.kernel.bandwidth)
    j["bandwidth"] = *c.kernel.bandwidth;
  else
    j["bandwidth"] = "median";
  j["policy"] = to_string(c.policy);
  j["budget_fraction"] = c.budget_fraction;
  j["seed"] = c.seed;
  j["trials"] = c.trials;
  j["milestones"] = c.milestones;
  j["criteria_gallery"] = c.criteria_gallery == GallerySet::full ? "full" : "unlabeled";
  j["update_min_scalar"] = c.update_policy.min_scalar_threshold;
  j["update_dim_divisor"] = c.update_policy.dim_divisor;
  j["lambda_grid"] = c.lambda_grid;
  j["cv_folds"] = c.cv_folds;
  return j.dump(2);
}

}  // namespace her
