#include "her/active.hpp"

#include "her/error.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <string>

namespace her {

const char* to_string(Policy policy) noexcept {
  switch (policy) {
    case Policy::joint_e2: return "joint-e2";
    case Policy::random: return "random";
    case Policy::density: return "density";
  }
  return "unknown";
}

Policy parse_policy(std::string_view name) {
  if (name == "joint-e2" || name == "jointe2" || name == "joint") return Policy::joint_e2;
  if (name == "random") return Policy::random;
  if (name == "density") return Policy::density;
  fail(ErrorCode::invalid_parameter, "unknown policy '" + std::string(name) + "'");
}

ActiveDataset ActiveDataset::from_views(const FeatureMatrix& data) {
  return {data.with_view(View::probe), data.with_view(View::gallery)};
}

ActivePool ActivePool::fresh(Index probes, Index gallery, Index budget) {
  ActivePool pool;
  pool.probe_total = probes;
  pool.gallery_total = gallery;
  pool.budget = budget;
  for (Index i = 0; i < probes; ++i) pool.probe_unlabeled.insert(pool.probe_unlabeled.end(), i);
  for (Index j = 0; j < gallery; ++j)
    pool.gallery_unlabeled.insert(pool.gallery_unlabeled.end(), j);
  return pool;
}

Eigen::MatrixXd embed(const HerModel& model, const Eigen::MatrixXd& x) {
  if (model.class_count() == 0) return x;
  return model.projection.transpose() * x;
}

namespace {

std::vector<Index> ids_of(const std::set<Index>& s) { return {s.begin(), s.end()}; }

Eigen::MatrixXd columns(const Eigen::MatrixXd& m, const std::vector<Index>& ids) {
  Eigen::MatrixXd out(m.rows(), static_cast<Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) out.col(static_cast<Index>(k)) = m.col(ids[k]);
  return out;
}

// Embedded unlabeled probes, in ascending id order.
Eigen::MatrixXd unlabeled_probe_embedding(const ActiveDataset& data, const ActivePool& pool,
                                          const HerModel& model) {
  return embed(model, columns(data.probe.values, ids_of(pool.probe_unlabeled)));
}

Eigen::MatrixXd criteria_gallery(const ActiveDataset& data, const ActivePool& pool,
                                 const HerModel& model, GallerySet gallery_set) {
  if (gallery_set == GallerySet::full) {
    if (data.gallery.size() == 0) fail(ErrorCode::invalid_state, "gallery is empty");
    return embed(model, data.gallery.values);
  }
  if (pool.gallery_unlabeled.empty()) fail(ErrorCode::invalid_state, "unlabeled gallery is empty");
  return embed(model, columns(data.gallery.values, ids_of(pool.gallery_unlabeled)));
}

Eigen::VectorXd nearest(const Eigen::MatrixXd& from, const Eigen::MatrixXd& to) {
  return pairwise_squared_distances(from, to).rowwise().minCoeff();
}

Eigen::VectorXd entropies(const Eigen::MatrixXd& probes, const Eigen::MatrixXd& gallery) {
  const Eigen::MatrixXd d = pairwise_squared_distances(probes, gallery);
  Eigen::VectorXd out(d.rows());
  for (Index i = 0; i < d.rows(); ++i)
    out(i) = distribution_entropy(ranking_distribution(d.row(i).transpose()));
  return out;
}

Index uniform_pick(const std::set<Index>& ids, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, ids.size() - 1);
  auto it = ids.begin();
  std::advance(it, static_cast<std::ptrdiff_t>(pick(rng)));
  return *it;
}

}  // namespace

Eigen::VectorXd diversity_score(const ActiveDataset& data, const ActivePool& pool,
                                const HerModel& model) {
  if (pool.probe_labeled.empty())
    fail(ErrorCode::bootstrap_required, "diversity needs at least one labeled probe");
  const Eigen::MatrixXd labeled =
      embed(model, columns(data.probe.values, ids_of(pool.probe_labeled)));
  return nearest(unlabeled_probe_embedding(data, pool, model), labeled);
}

Eigen::VectorXd matching_uncertainty_score(const ActiveDataset& data, const ActivePool& pool,
                                           const HerModel& model, GallerySet gallery_set) {
  const Eigen::MatrixXd gallery = criteria_gallery(data, pool, model, gallery_set);
  return nearest(unlabeled_probe_embedding(data, pool, model), gallery);
}

Eigen::VectorXd ranking_entropy_score(const ActiveDataset& data, const ActivePool& pool,
                                      const HerModel& model, GallerySet gallery_set) {
  const Eigen::MatrixXd gallery = criteria_gallery(data, pool, model, gallery_set);
  return entropies(unlabeled_probe_embedding(data, pool, model), gallery);
}

Eigen::VectorXd ranking_distribution(const Eigen::VectorXd& distances) {
  if (distances.size() == 0) fail(ErrorCode::invalid_state, "ranking over an empty gallery");
  // softmax(-d), shifted by the largest logit
  const Eigen::ArrayXd w = (-(distances.array() - distances.minCoeff())).exp();
  return (w / w.sum()).matrix();
}

Eigen::VectorXd ranking_distribution(const HerModel& model, const Eigen::VectorXd& probe,
                                     const Eigen::MatrixXd& gallery) {
  if (probe.size() != gallery.rows()) fail(ErrorCode::invalid_input, "feature dimension mismatch");
  const Eigen::MatrixXd p = embed(model, probe);
  return ranking_distribution(pairwise_squared_distances(p, embed(model, gallery)).row(0).transpose());
}

double distribution_entropy(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (Index j = 0; j < p.size(); ++j)
    if (p(j) > 0.0) h -= p(j) * std::log(p(j));
  return h;
}

Eigen::VectorXd normalize_scores(const Eigen::VectorXd& raw) { return min_max_normalize(raw); }

SelectionScores joint_scores(const ActiveDataset& data, const ActivePool& pool,
                             const HerModel& model, GallerySet gallery_set) {
  if (pool.probe_unlabeled.empty()) fail(ErrorCode::pool_exhausted, "no unlabeled probes left");
  SelectionScores s;
  s.probe_ids = ids_of(pool.probe_unlabeled);
  const Eigen::MatrixXd probes = unlabeled_probe_embedding(data, pool, model);
  const Eigen::MatrixXd gallery = criteria_gallery(data, pool, model, gallery_set);

  s.raw_matching = nearest(probes, gallery);
  s.raw_entropy = entropies(probes, gallery);
  s.matching = normalize_scores(s.raw_matching);
  s.entropy = normalize_scores(s.raw_entropy);
  s.joint = s.matching + s.entropy;

  s.diversity_used = !pool.probe_labeled.empty();
  if (s.diversity_used) {
    const Eigen::MatrixXd labeled =
        embed(model, columns(data.probe.values, ids_of(pool.probe_labeled)));
    s.raw_diversity = nearest(probes, labeled);
    s.diversity = normalize_scores(s.raw_diversity);
    s.joint += s.diversity;
  } else {
    s.raw_diversity = Eigen::VectorXd::Zero(static_cast<Index>(s.probe_ids.size()));
    s.diversity = s.raw_diversity;
  }
  return s;
}

Index argmax_lowest_id(const SelectionScores& scores) {
  if (scores.probe_ids.empty()) fail(ErrorCode::pool_exhausted, "no unlabeled probes left");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.probe_ids.size(); ++k) {
    const double v = scores.joint(static_cast<Index>(k));
    const double b = scores.joint(static_cast<Index>(best));
    if (v > b || (v == b && scores.probe_ids[k] < scores.probe_ids[best])) best = k;
  }
  return scores.probe_ids[best];
}

Index density_pick(const ActiveDataset& data, const ActivePool& pool, const HerModel& model) {
  if (pool.probe_unlabeled.empty()) fail(ErrorCode::pool_exhausted, "no unlabeled probes left");
  const std::vector<Index> ids = ids_of(pool.probe_unlabeled);
  if (ids.size() == 1) return ids.front();

  const Eigen::MatrixXd e = unlabeled_probe_embedding(data, pool, model);
  const Eigen::MatrixXd d = pairwise_squared_distances(e, e);
  const auto n = static_cast<Index>(ids.size());
  std::vector<double> upper;
  upper.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index j = 1; j < n; ++j)
    for (Index i = 0; i < j; ++i) upper.push_back(d(i, j));
  const std::size_t mid = upper.size() / 2;
  std::nth_element(upper.begin(), upper.begin() + static_cast<std::ptrdiff_t>(mid), upper.end());
  const double radius = upper[mid];

  Index best = 0;
  Index best_count = -1;
  for (Index i = 0; i < n; ++i) {
    Index count = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i && d(i, j) <= radius) ++count;
    if (count > best_count) {
      best = i;
      best_count = count;
    }
  }
  return ids[static_cast<std::size_t>(best)];
}

Index select_next_probe(const ActiveDataset& data, const ActivePool& pool,
                        const HerModel& model, Policy policy, std::mt19937_64& rng,
                        GallerySet gallery_set) {
  if (pool.probe_unlabeled.empty()) fail(ErrorCode::pool_exhausted, "no unlabeled probes left");
  // Nothing labeled yet: the criteria have no model to speak for them.
  if (policy == Policy::random || pool.probe_labeled.empty())
    return uniform_pick(pool.probe_unlabeled, rng);
  if (policy == Policy::density) return density_pick(data, pool, model);
  return argmax_lowest_id(joint_scores(data, pool, model, gallery_set));
}

std::vector<RankedCandidate> rank_gallery(const ActiveDataset& data, const ActivePool& pool,
                                          const HerModel& model, Index probe_id) {
  if (probe_id < 0 || probe_id >= data.probe.size())
    fail(ErrorCode::invalid_input, "unknown probe id " + std::to_string(probe_id));
  const std::vector<Index> ids = ids_of(pool.gallery_unlabeled);
  std::vector<RankedCandidate> out;
  if (ids.empty()) return out;
  const Eigen::MatrixXd p = embed(model, data.probe.values.col(probe_id));
  const Eigen::MatrixXd g = embed(model, columns(data.gallery.values, ids));
  const Eigen::MatrixXd d = pairwise_squared_distances(p, g);
  out.reserve(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) out.push_back({ids[k], d(0, static_cast<Index>(k))});
  std::stable_sort(out.begin(), out.end(), [](const RankedCandidate& a, const RankedCandidate& b) {
    return a.distance < b.distance;
  });
  return out;
}

ActiveSession::ActiveSession(ActiveDataset data, ActiveConfig config)
    : data_(std::move(data)), config_(config), rng_(config.seed) {
  data_.probe.validate();
  data_.gallery.validate();
  if (data_.probe.dim() != data_.gallery.dim())
    fail(ErrorCode::invalid_input, "probe and gallery views differ in feature dimension");
  if (config_.budget < 0) fail(ErrorCode::invalid_parameter, "budget must be non-negative");
  if (data_.probe.dim() > config_.max_incremental_dim && !config_.allow_large_dim)
    fail(ErrorCode::invalid_parameter, "feature dimension exceeds the incremental-mode cap");
  pool_ = ActivePool::fresh(data_.probe.size(), data_.gallery.size(), config_.budget);
  model_ = HerModel::empty_incremental(data_.probe.dim(), config_.lambda);
}

const Offer& ActiveSession::offer() {
  if (offer_) return *offer_;
  if (pool_.step >= pool_.budget) fail(ErrorCode::pool_exhausted, "annotation budget exhausted");
  if (pool_.probe_unlabeled.empty()) fail(ErrorCode::pool_exhausted, "no unlabeled probes left");

  Offer o;
  o.step = pool_.step;
  if (config_.policy == Policy::joint_e2 && !pool_.probe_labeled.empty()) {
    o.scores = joint_scores(data_, pool_, model_, config_.criteria_gallery);
    o.probe_id = argmax_lowest_id(*o.scores);
  } else {
    o.probe_id = select_next_probe(data_, pool_, model_, config_.policy, rng_,
                                   config_.criteria_gallery);
  }
  o.ranking = rank_gallery(data_, pool_, model_, o.probe_id);
  offer_ = std::move(o);
  return *offer_;
}

LabelOutcome ActiveSession::label(Index probe_id, std::optional<Index> gallery_id,
                                  AnnotatorKind annotator) {
  if (pool_.probe_labeled.contains(probe_id))
    fail(ErrorCode::conflict, "probe " + std::to_string(probe_id) + " is already labeled");
  if (!offer_ || offer_->probe_id != probe_id)
    fail(ErrorCode::conflict, "probe " + std::to_string(probe_id) + " is not the offered probe");
  if (gallery_id && !pool_.gallery_unlabeled.contains(*gallery_id))
    fail(ErrorCode::invalid_input,
         "gallery id " + std::to_string(*gallery_id) + " is not in the offered ranking");

  LabelOutcome out;
  out.event.probe_id = probe_id;
  out.event.gallery_id = gallery_id;
  out.event.timestamp = std::chrono::system_clock::now();
  out.event.annotator = annotator;

  if (gallery_id) {
    const auto identity = static_cast<IdentityId>(matched_ + 1);
    UpdateBatch batch;
    batch.features.resize(data_.probe.dim(), 2);
    batch.features.col(0) = data_.probe.values.col(probe_id);
    batch.features.col(1) = data_.gallery.values.col(*gallery_id);
    batch.labels = {identity, identity};
    out.report = apply_update_policy(model_, batch, config_.update_policy);
    out.event.identity = identity;
    ++matched_;
    pool_.gallery_unlabeled.erase(*gallery_id);
    pool_.gallery_labeled.insert(*gallery_id);
  } else {
    out.parked = true;
    out.report.path = UpdatePath::scalar_sequential;
    pool_.probe_parked.insert(probe_id);
  }
  pool_.probe_unlabeled.erase(probe_id);
  pool_.probe_labeled.insert(probe_id);
  ++pool_.step;
  events_.push_back(out.event);
  offer_.reset();
  return out;
}

std::optional<Index> oracle_annotator(const ActiveDataset& data, const Offer& offer) {
  const IdentityId want = data.probe.labels[static_cast<std::size_t>(offer.probe_id)];
  for (const RankedCandidate& c : offer.ranking)
    if (data.gallery.labels[static_cast<std::size_t>(c.gallery_id)] == want) return c.gallery_id;
  return std::nullopt;
}

std::optional<LabelOutcome> active_step(ActiveSession& session, const Annotator& annotator) {
  if (session.exhausted()) return std::nullopt;
  const Offer& offer = session.offer();
  const Index probe = offer.probe_id;
  const std::optional<Index> match = annotator(session.data(), offer);
  return session.label(probe, match, AnnotatorKind::oracle);
}

Index milestone_count(double fraction, Index probe_total) {
  const auto count = static_cast<Index>(std::llround(fraction * static_cast<double>(probe_total)));
  return std::clamp<Index>(count, 0, probe_total);
}

double SimulationResult::mean_rank(std::size_t milestone, Index k) const {
  const auto& trials = curves.at(milestone);
  double sum = 0.0;
  for (const CmcCurve& c : trials) sum += c.rank(k);
  return trials.empty() ? 0.0 : sum / static_cast<double>(trials.size());
}

double SimulationResult::sd_rank(std::size_t milestone, Index k) const {
  const auto& trials = curves.at(milestone);
  if (trials.size() < 2) return 0.0;
  const double mean = mean_rank(milestone, k);
  double ss = 0.0;
  for (const CmcCurve& c : trials) ss += (c.rank(k) - mean) * (c.rank(k) - mean);
  return std::sqrt(ss / static_cast<double>(trials.size() - 1));
}

SimulationResult simulate_active_run(const FeatureMatrix& dataset, const SimulationConfig& config) {
  if (!(config.budget_fraction > 0.0 && config.budget_fraction <= 1.0))
    fail(ErrorCode::invalid_parameter, "budget fraction must lie in (0, 1]");
  if (config.trials < 1) fail(ErrorCode::invalid_parameter, "trials must be >= 1");

  SimulationResult result;
  for (double m : config.milestones)
    if (m > 0.0 && m <= config.budget_fraction + 1e-12) result.milestones.push_back(m);
  std::sort(result.milestones.begin(), result.milestones.end());
  result.curves.resize(result.milestones.size());

  for (int trial = 0; trial < config.trials; ++trial) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(trial);
    const Split split = make_split(dataset, {SplitProtocol::half_split, 0.5, seed});
    ActiveDataset data = ActiveDataset::from_views(split.train);
    const Index probes = data.probe.size();

    ActiveConfig ac;
    ac.policy = config.policy;
    ac.lambda = config.lambda;
    ac.criteria_gallery = config.criteria_gallery;
    ac.update_policy = config.update_policy;
    ac.seed = seed;
    ac.budget = milestone_count(config.budget_fraction, probes);
    ac.allow_large_dim = true;
    ActiveSession session(std::move(data), ac);

    for (std::size_t m = 0; m < result.milestones.size(); ++m) {
      const Index target = milestone_count(result.milestones[m], probes);
      while (session.pool().step < target && !session.exhausted())
        active_step(session, oracle_annotator);
      result.curves[m].push_back(compute_cmc(session.model(), split.test_probe, split.test_gallery));
    }
    result.final_models.push_back(session.model());
    result.events.push_back(session.events());
  }
  return result;
}

}  // namespace her
