#pragma once

// Pool-based active re-identification: choose the next probe to annotate,
// rank the unlabeled gallery for it, and fold each verified probe/gallery
// pair into the model as a brand-new identity.

#include "her/eval.hpp"
#include "her/incremental.hpp"

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string_view>
#include <vector>

namespace her {

enum class Policy { joint_e2, random, density };

const char* to_string(Policy policy) noexcept;
Policy parse_policy(std::string_view name);

// Which gallery the matching-uncertainty and ranking-entropy criteria range
// over: every gallery sample, or only the still-unlabeled ones.
enum class GallerySet { full, unlabeled };

// Sample ids are column indices into probe and gallery respectively.
struct ActiveDataset {
  FeatureMatrix probe;
  FeatureMatrix gallery;

  static ActiveDataset from_views(const FeatureMatrix& data);
};

struct ActivePool {
  std::set<Index> probe_unlabeled;
  std::set<Index> probe_labeled;  // every annotated probe, parked ones included
  std::set<Index> probe_parked;   // annotated as having no gallery match
  std::set<Index> gallery_unlabeled;
  std::set<Index> gallery_labeled;
  Index probe_total = 0;
  Index gallery_total = 0;
  Index budget = 0;
  Index step = 0;

  static ActivePool fresh(Index probes, Index gallery, Index budget);
  bool exhausted() const { return step >= budget || probe_unlabeled.empty(); }
};

struct SelectionScores {
  std::vector<Index> probe_ids;  // ascending; all unlabeled probes
  Eigen::VectorXd raw_diversity;
  Eigen::VectorXd raw_matching;
  Eigen::VectorXd raw_entropy;
  Eigen::VectorXd diversity;
  Eigen::VectorXd matching;
  Eigen::VectorXd entropy;
  Eigen::VectorXd joint;
  bool diversity_used = false;  // false until some probe has been labeled
};

// Columns of x mapped through the model (c x n). A model that has not
// absorbed any identity yet acts as the identity map.
Eigen::MatrixXd embed(const HerModel& model, const Eigen::MatrixXd& x);

// Distance from each unlabeled probe to its nearest labeled probe.
Eigen::VectorXd diversity_score(const ActiveDataset& data, const ActivePool& pool,
                                const HerModel& model);
// Distance from each unlabeled probe to its nearest gallery sample.
Eigen::VectorXd matching_uncertainty_score(const ActiveDataset& data, const ActivePool& pool,
                                           const HerModel& model,
                                           GallerySet gallery_set = GallerySet::full);
// Entropy of the softmax over negative gallery distances, per unlabeled probe.
Eigen::VectorXd ranking_entropy_score(const ActiveDataset& data, const ActivePool& pool,
                                      const HerModel& model,
                                      GallerySet gallery_set = GallerySet::full);

Eigen::VectorXd ranking_distribution(const Eigen::VectorXd& distances);
Eigen::VectorXd ranking_distribution(const HerModel& model, const Eigen::VectorXd& probe,
                                     const Eigen::MatrixXd& gallery);
double distribution_entropy(const Eigen::VectorXd& p);

Eigen::VectorXd normalize_scores(const Eigen::VectorXd& raw);

SelectionScores joint_scores(const ActiveDataset& data, const ActivePool& pool,
                             const HerModel& model, GallerySet gallery_set = GallerySet::full);

// Highest joint score, ties to the lowest id.
Index argmax_lowest_id(const SelectionScores& scores);

Index density_pick(const ActiveDataset& data, const ActivePool& pool, const HerModel& model);

Index select_next_probe(const ActiveDataset& data, const ActivePool& pool,
                        const HerModel& model, Policy policy, std::mt19937_64& rng,
                        GallerySet gallery_set = GallerySet::full);

struct RankedCandidate {
  Index gallery_id = 0;
  double distance = 0.0;
};

// Unlabeled gallery in ascending distance, ties by id.
std::vector<RankedCandidate> rank_gallery(const ActiveDataset& data, const ActivePool& pool,
                                          const HerModel& model, Index probe_id);

enum class AnnotatorKind { oracle, human };

struct AnnotationEvent {
  Index probe_id = 0;
  std::optional<Index> gallery_id;
  IdentityId identity = 0;  // 0 for parked probes
  std::chrono::system_clock::time_point timestamp;
  AnnotatorKind annotator = AnnotatorKind::oracle;
};

struct ActiveConfig {
  Policy policy = Policy::joint_e2;
  double lambda = 1.0;
  GallerySet criteria_gallery = GallerySet::full;
  UpdatePolicy update_policy;
  std::uint64_t seed = 0;
  Index budget = 0;
  Index max_incremental_dim = 4096;
  bool allow_large_dim = false;
};

struct Offer {
  Index probe_id = 0;
  Index step = 0;
  std::optional<SelectionScores> scores;  // joint-e2 only
  std::vector<RankedCandidate> ranking;
};

struct LabelOutcome {
  AnnotationEvent event;
  UpdateReport report;
  bool parked = false;
};

// Live state of one active run: pools, model m_t, selection generator and
// the offer currently awaiting annotation. Single writer.
class ActiveSession {
 public:
  ActiveSession(ActiveDataset data, ActiveConfig config);

  // The probe to annotate next and its gallery ranking. Repeated calls
  // return the same offer until label() is accepted.
  const Offer& offer();

  // gallery_id empty means "no match": the probe is parked without a
  // model update.
  LabelOutcome label(Index probe_id, std::optional<Index> gallery_id,
                     AnnotatorKind annotator = AnnotatorKind::human);

  bool exhausted() const { return pool_.exhausted(); }
  const ActivePool& pool() const { return pool_; }
  const HerModel& model() const { return model_; }
  const ActiveDataset& data() const { return data_; }
  const ActiveConfig& config() const { return config_; }
  const std::vector<AnnotationEvent>& events() const { return events_; }
  Index matched_count() const { return matched_; }

 private:
  ActiveDataset data_;
  ActiveConfig config_;
  ActivePool pool_;
  HerModel model_;
  std::mt19937_64 rng_;
  std::optional<Offer> offer_;
  std::vector<AnnotationEvent> events_;
  Index matched_ = 0;
};

using Annotator = std::function<std::optional<Index>(const ActiveDataset&, const Offer&)>;

// Ground-truth annotator: the best-ranked gallery sample of the probe's
// identity, or no match.
std::optional<Index> oracle_annotator(const ActiveDataset& data, const Offer& offer);

// Select, rank, annotate, update. Empty when the budget or pool is spent.
std::optional<LabelOutcome> active_step(ActiveSession& session, const Annotator& annotator);

struct SimulationConfig {
  Policy policy = Policy::joint_e2;
  double budget_fraction = 0.5;
  std::uint64_t seed = 0;
  int trials = 1;
  double lambda = 1.0;
  std::vector<double> milestones = {0.1, 0.2, 0.3, 0.4, 0.5, 1.0};
  GallerySet criteria_gallery = GallerySet::full;
  UpdatePolicy update_policy;
};

// Labeled-probe count at which a fraction of the pool is reached.
Index milestone_count(double fraction, Index probe_total);

struct SimulationResult {
  std::vector<double> milestones;             // those <= budget_fraction
  std::vector<std::vector<CmcCurve>> curves;  // [milestone][trial]
  std::vector<HerModel> final_models;         // per trial
  std::vector<std::vector<AnnotationEvent>> events;

  double mean_rank(std::size_t milestone, Index k) const;
  double sd_rank(std::size_t milestone, Index k) const;
};

// Trial t uses seed + t for both the identity half-split and the selection
// generator, so an ActiveSession built with the same seed replays trial 0.
SimulationResult simulate_active_run(const FeatureMatrix& dataset, const SimulationConfig& config);

}  // namespace her
