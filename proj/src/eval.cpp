#include "her/eval.hpp"

#include "her/error.hpp"

#include <algorithm>
#include <limits>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>

namespace her {

double CmcCurve::rank(Index k) const {
  if (rank_rates.empty() || k < 1) return 0.0;
  const auto idx = std::min<std::size_t>(static_cast<std::size_t>(k), rank_rates.size()) - 1;
  return rank_rates[idx];
}

std::vector<Index> match_ranks(const Eigen::MatrixXd& distances,
                               std::span<const IdentityId> probe_labels,
                               std::span<const IdentityId> gallery_labels) {
  if (distances.rows() != static_cast<Index>(probe_labels.size()) ||
      distances.cols() != static_cast<Index>(gallery_labels.size()))
    fail(ErrorCode::invalid_input, "distance matrix shape does not match label counts");

  const Index g = distances.cols();
  std::vector<Index> ranks(probe_labels.size());
  for (Index i = 0; i < distances.rows(); ++i) {
    const IdentityId want = probe_labels[static_cast<std::size_t>(i)];
    Index best = -1;
    for (Index j = 0; j < g; ++j) {
      if (gallery_labels[static_cast<std::size_t>(j)] != want) continue;
      if (best < 0 || distances(i, j) < distances(i, best)) best = j;
    }
    if (best < 0)
      fail(ErrorCode::invalid_input,
           "probe identity " + std::to_string(want) + " has no match in the gallery");
    const double db = distances(i, best);
    Index ahead = 0;
    for (Index j = 0; j < g; ++j) {
      const double dj = distances(i, j);
      if (dj < db || (dj == db && j < best)) ++ahead;
    }
    ranks[static_cast<std::size_t>(i)] = ahead + 1;
  }
  return ranks;
}

CmcCurve compute_cmc(const Eigen::MatrixXd& distances,
                     std::span<const IdentityId> probe_labels,
                     std::span<const IdentityId> gallery_labels) {
  if (probe_labels.empty()) fail(ErrorCode::invalid_input, "no probes to evaluate");
  const std::vector<Index> ranks = match_ranks(distances, probe_labels, gallery_labels);

  const auto g = static_cast<std::size_t>(distances.cols());
  std::vector<Index> hits(g, 0);
  for (Index r : ranks) ++hits[static_cast<std::size_t>(r - 1)];

  CmcCurve cmc;
  cmc.probe_count = static_cast<Index>(ranks.size());
  cmc.rank_rates.resize(g);
  Index cumulative = 0;
  for (std::size_t k = 0; k < g; ++k) {
    cumulative += hits[k];
    cmc.rank_rates[k] = static_cast<double>(cumulative) / static_cast<double>(ranks.size());
  }
  return cmc;
}

Eigen::MatrixXd distance_matrix(const HerModel& model, const Eigen::MatrixXd& probes,
                                const Eigen::MatrixXd& gallery) {
  const Eigen::MatrixXd ep = project(model, probes).transpose();
  const Eigen::MatrixXd eg = project(model, gallery).transpose();
  return pairwise_squared_distances(ep, eg);
}

Eigen::MatrixXd distance_matrix(const KernelModel& model, const Eigen::MatrixXd& probes,
                                const Eigen::MatrixXd& gallery) {
  const Eigen::MatrixXd ep = project(model, probes).transpose();
  const Eigen::MatrixXd eg = project(model, gallery).transpose();
  return pairwise_squared_distances(ep, eg);
}

CmcCurve compute_cmc(const HerModel& model, const FeatureMatrix& probes,
                     const FeatureMatrix& gallery) {
  return compute_cmc(distance_matrix(model, probes.values, gallery.values), probes.labels,
                     gallery.labels);
}

CmcCurve compute_cmc(const KernelModel& model, const FeatureMatrix& probes,
                     const FeatureMatrix& gallery) {
  return compute_cmc(distance_matrix(model, probes.values, gallery.values), probes.labels,
                     gallery.labels);
}

Eigen::VectorXd min_max_normalize(const Eigen::VectorXd& scores) {
  if (scores.size() == 0) return scores;
  const double lo = scores.minCoeff();
  const double hi = scores.maxCoeff();
  if (!(hi > lo)) return Eigen::VectorXd::Constant(scores.size(), 0.5);
  return ((scores.array() - lo) / (hi - lo)).matrix();
}

Eigen::MatrixXd fuse_scores(std::span<const Eigen::MatrixXd> distances,
                            std::span<const double> weights) {
  if (distances.empty()) fail(ErrorCode::invalid_input, "fusion needs at least one model");
  if (!weights.empty() && weights.size() != distances.size())
    fail(ErrorCode::invalid_input, "fusion weight count does not match model count");
  const Index rows = distances[0].rows();
  const Index cols = distances[0].cols();
  Eigen::MatrixXd fused = Eigen::MatrixXd::Zero(rows, cols);
  for (std::size_t m = 0; m < distances.size(); ++m) {
    if (distances[m].rows() != rows || distances[m].cols() != cols)
      fail(ErrorCode::invalid_input, "fused models disagree on probe/gallery shape");
    const double w = weights.empty() ? 1.0 : weights[m];
    for (Index i = 0; i < rows; ++i)
      fused.row(i) += w * min_max_normalize(distances[m].row(i).transpose()).transpose();
  }
  return fused;
}

Split make_split(const FeatureMatrix& dataset, const SplitSpec& spec) {
  dataset.validate();
  std::vector<IdentityId> ids = dataset.classes();
  const auto c = static_cast<Index>(ids.size());
  if (c < 2) fail(ErrorCode::invalid_input, "splitting needs at least two identities");

  std::mt19937_64 rng(spec.seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  Index n_train = c / 2;
  if (spec.protocol == SplitProtocol::fraction) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
      fail(ErrorCode::invalid_parameter, "train fraction must lie in (0, 1)");
    n_train = static_cast<Index>(std::llround(spec.train_fraction * static_cast<double>(c)));
  }
  n_train = std::clamp<Index>(n_train, 1, c - 1);

  Split split;
  split.train_identities.assign(ids.begin(), ids.begin() + n_train);
  split.test_identities.assign(ids.begin() + n_train, ids.end());
  const std::unordered_set<IdentityId> train_set(split.train_identities.begin(),
                                                 split.train_identities.end());

  std::vector<Index> train_cols;
  std::vector<Index> probe_cols;
  std::unordered_map<IdentityId, std::vector<Index>> gallery_by_id;
  std::vector<Index> gallery_cols;
  for (Index i = 0; i < dataset.size(); ++i) {
    const auto u = static_cast<std::size_t>(i);
    if (train_set.contains(dataset.labels[u])) {
      train_cols.push_back(i);
    } else if (dataset.views[u] == View::probe) {
      probe_cols.push_back(i);
    } else {
      gallery_cols.push_back(i);
      gallery_by_id[dataset.labels[u]].push_back(i);
    }
  }

  if (spec.protocol == SplitProtocol::single_shot_gallery) {
    gallery_cols.clear();
    for (IdentityId id : split.test_identities) {
      auto it = gallery_by_id.find(id);
      if (it == gallery_by_id.end()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, it->second.size() - 1);
      gallery_cols.push_back(it->second[pick(rng)]);
    }
    std::sort(gallery_cols.begin(), gallery_cols.end());
  }

  split.train = dataset.select(train_cols);
  split.train_columns = train_cols;
  split.test_probe = dataset.select(probe_cols);
  split.test_gallery = dataset.select(gallery_cols);
  return split;
}

CrossValidation cross_validate_lambda(const FeatureMatrix& train,
                                      std::span<const double> lambdas, int folds,
                                      std::uint64_t seed) {
  if (lambdas.empty()) fail(ErrorCode::invalid_parameter, "empty lambda grid");
  if (folds < 2) fail(ErrorCode::invalid_parameter, "cross-validation needs at least 2 folds");
  train.validate();

  std::vector<IdentityId> ids = train.classes();
  if (static_cast<int>(ids.size()) < folds)
    fail(ErrorCode::invalid_input, "fewer identities than folds");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::unordered_map<IdentityId, int> fold_of;
  for (std::size_t i = 0; i < ids.size(); ++i) fold_of[ids[i]] = static_cast<int>(i) % folds;

  CrossValidation cv;
  cv.lambdas.assign(lambdas.begin(), lambdas.end());
  cv.mean_rank1.assign(lambdas.size(), 0.0);

  for (int f = 0; f < folds; ++f) {
    std::vector<Index> fit_cols, probe_cols, gallery_cols;
    for (Index i = 0; i < train.size(); ++i) {
      const auto u = static_cast<std::size_t>(i);
      if (fold_of[train.labels[u]] != f)
        fit_cols.push_back(i);
      else if (train.views[u] == View::probe)
        probe_cols.push_back(i);
      else
        gallery_cols.push_back(i);
    }
    const FeatureMatrix fit_part = train.select(fit_cols);
    const FeatureMatrix gallery = train.select(gallery_cols);
    const std::unordered_set<IdentityId> in_gallery(gallery.labels.begin(), gallery.labels.end());
    std::erase_if(probe_cols, [&](Index i) {
      return !in_gallery.contains(train.labels[static_cast<std::size_t>(i)]);
    });
    if (probe_cols.empty() || gallery_cols.empty())
      fail(ErrorCode::invalid_input, "a cross-validation fold has no probe/gallery pairs");
    const FeatureMatrix probes = train.select(probe_cols);

    for (std::size_t k = 0; k < lambdas.size(); ++k) {
      const HerModel model = fit_her_primal(fit_part, lambdas[k]);
      cv.mean_rank1[k] += compute_cmc(model, probes, gallery).rank(1) / folds;
    }
  }

  const auto best = std::max_element(cv.mean_rank1.begin(), cv.mean_rank1.end());
  cv.chosen_lambda = cv.lambdas[static_cast<std::size_t>(best - cv.mean_rank1.begin())];
  return cv;
}

}  // namespace her
