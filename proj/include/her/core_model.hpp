#pragma once

// Batch HER: Fisher-embedded ridge regression onto a per-class indicator
// target, in primal (d x c projection) and dual/kernel (n x c coefficient)
// form, plus the model-induced distance used for ranking.

#include "her/types.hpp"

#include <optional>
#include <span>
#include <vector>

namespace her {

struct IndicatorMatrix {
  Eigen::MatrixXd values;           // n x c
  std::vector<IdentityId> classes;  // column order
  std::vector<Index> class_sizes;   // n_j per column
};

// Row i holds 1/sqrt(n_j) in the column of its class and zeros elsewhere.
IndicatorMatrix build_indicator(std::span<const IdentityId> labels);

struct HerModel {
  Eigen::MatrixXd projection;  // d x c
  double lambda = 1.0;
  // (X X^T + lambda I)^-1, kept only when incremental updates are enabled.
  std::optional<Eigen::MatrixXd> t_inverse;
  // X X^T + lambda I, carried alongside t_inverse for drift estimation.
  std::optional<Eigen::MatrixXd> regularized_gram;
  std::vector<IdentityId> class_registry;
  // Samples absorbed per registered class; 0 when unknown (loaded models).
  std::vector<Index> class_sizes;

  Index feature_dim() const { return projection.rows(); }
  Index class_count() const { return projection.cols(); }
  bool incremental() const { return t_inverse.has_value(); }

  // No data absorbed yet: T = lambda I, zero projection columns. The
  // starting point of an active-learning run.
  static HerModel empty_incremental(Index dim, double lambda);
};

struct FitOptions {
  bool incremental = false;
  Index max_incremental_dim = 4096;
  bool allow_large_dim = false;
};

HerModel fit_her_primal(const FeatureMatrix& features, double lambda,
                        const FitOptions& options = {});

struct KernelSpec {
  enum class Kind { linear, rbf };
  Kind kind = Kind::linear;
  // RBF sigma; empty selects the median heuristic at fit time.
  std::optional<double> bandwidth;

  static KernelSpec linear() { return {}; }
  static KernelSpec rbf(std::optional<double> sigma = std::nullopt) {
    return {Kind::rbf, sigma};
  }
};

struct KernelModel {
  Eigen::MatrixXd dual_coefficients;  // n x c
  FeatureMatrix support;
  KernelSpec kernel;  // bandwidth always resolved after fitting
  double lambda = 1.0;
  std::vector<IdentityId> class_registry;
};

KernelModel fit_her_dual(const FeatureMatrix& features, double lambda,
                         const KernelSpec& kernel);

// Median of squared pairwise distances between the columns of a.
double median_squared_distance(const Eigen::MatrixXd& a);

// K_ij = exp(-|a_i - b_j|^2 / (2 sigma^2)).
Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           std::optional<double> sigma = std::nullopt);

Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& a,
                              const Eigen::MatrixXd& b);

// Rows are samples: Z^T P (primal) or k_Z^T Q (dual).
Eigen::MatrixXd project(const HerModel& model, const Eigen::MatrixXd& z);
Eigen::MatrixXd project(const KernelModel& model, const Eigen::MatrixXd& z);
Eigen::VectorXd project(const HerModel& model, const Eigen::VectorXd& z);

// (x1 - x2)^T P P^T (x1 - x2).
double model_distance(const HerModel& model, const Eigen::VectorXd& x1,
                      const Eigen::VectorXd& x2);
double model_distance(const KernelModel& model, const Eigen::VectorXd& x1,
                      const Eigen::VectorXd& x2);

// Squared Euclidean distances between the columns of two embeddings
// (c x na, c x nb) -> na x nb.
Eigen::MatrixXd pairwise_squared_distances(const Eigen::MatrixXd& a,
                                           const Eigen::MatrixXd& b);

// Diagnostics.

struct ScatterStats {
  Eigen::MatrixXd within;
  Eigen::MatrixXd between;
  Eigen::MatrixXd class_means;  // d x c, first-appearance order
  Eigen::VectorXd global_mean;
};

ScatterStats scatter_stats(const FeatureMatrix& features);

// 1/2 |X^T P - Y|_F^2 + lambda/2 |P|_F^2, the objective whose exact
// minimizer is (X X^T + lambda I)^-1 X Y.
double her_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                     const Eigen::MatrixXd& p, double lambda);
Eigen::MatrixXd her_objective_gradient(const Eigen::MatrixXd& x,
                                       const Eigen::MatrixXd& y,
                                       const Eigen::MatrixXd& p,
                                       double lambda);

// trace((P^T Sw P)^+ (P^T Sb P)). Exploratory only.
double fisher_trace(const Eigen::MatrixXd& projection,
                    const ScatterStats& stats);

}  // namespace her
