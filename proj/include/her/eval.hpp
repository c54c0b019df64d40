#pragma once

#include "her/core_model.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace her {

// rank_rates[k-1] is the fraction of probes whose true match ranks <= k.
struct CmcCurve {
  std::vector<double> rank_rates;
  Index probe_count = 0;

  // Rate at 1-based rank k; ranks past the gallery size saturate.
  double rank(Index k) const;
};

// Rank of each probe's best true match, 1-based. Ordering is ascending
// distance with ties broken by gallery index.
std::vector<Index> match_ranks(const Eigen::MatrixXd& distances,
                               std::span<const IdentityId> probe_labels,
                               std::span<const IdentityId> gallery_labels);

// distances is probes x gallery.
CmcCurve compute_cmc(const Eigen::MatrixXd& distances,
                     std::span<const IdentityId> probe_labels,
                     std::span<const IdentityId> gallery_labels);

Eigen::MatrixXd distance_matrix(const HerModel& model, const Eigen::MatrixXd& probes,
                                const Eigen::MatrixXd& gallery);
Eigen::MatrixXd distance_matrix(const KernelModel& model, const Eigen::MatrixXd& probes,
                                const Eigen::MatrixXd& gallery);

CmcCurve compute_cmc(const HerModel& model, const FeatureMatrix& probes,
                     const FeatureMatrix& gallery);
CmcCurve compute_cmc(const KernelModel& model, const FeatureMatrix& probes,
                     const FeatureMatrix& gallery);

// Min-max over the gallery; a constant vector maps to 0.5 everywhere.
Eigen::VectorXd min_max_normalize(const Eigen::VectorXd& scores);

// Score-level fusion of per-model distance matrices (probes x gallery):
// each row is min-max normalized over the gallery, then weighted and summed.
Eigen::MatrixXd fuse_scores(std::span<const Eigen::MatrixXd> distances,
                            std::span<const double> weights = {});

enum class SplitProtocol { half_split, fraction, single_shot_gallery };

struct SplitSpec {
  SplitProtocol protocol = SplitProtocol::half_split;
  double train_fraction = 0.5;  // used by SplitProtocol::fraction
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<IdentityId> train_identities;
  std::vector<IdentityId> test_identities;
  FeatureMatrix train;
  std::vector<Index> train_columns;  // dataset column of each train sample
  FeatureMatrix test_probe;
  FeatureMatrix test_gallery;
};

Split make_split(const FeatureMatrix& dataset, const SplitSpec& spec);

struct CrossValidation {
  double chosen_lambda = 0.0;
  std::vector<double> lambdas;
  std::vector<double> mean_rank1;
};

// Identity-disjoint k-fold over the training set, scored by mean Rank-1 of
// held-out probes against held-out gallery.
CrossValidation cross_validate_lambda(const FeatureMatrix& train,
                                      std::span<const double> lambdas, int folds,
                                      std::uint64_t seed);

}  // namespace her
