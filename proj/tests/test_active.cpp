#include "doctest.h"
#include "support.hpp"

#include "her/active.hpp"
#include "her/data.hpp"

#include <cmath>

using namespace her;
using her::test::Gen;
using her::test::rel_err;

namespace {

FeatureMatrix points(std::initializer_list<std::pair<double, double>> xy, View view) {
  FeatureMatrix f;
  f.values.resize(2, static_cast<Index>(xy.size()));
  Index i = 0;
  for (const auto& [x, y] : xy) {
    f.values.col(i) << x, y;
    f.labels.push_back(static_cast<IdentityId>(++i));
    f.views.push_back(view);
  }
  return f;
}

HerModel fixed_projection(const Eigen::MatrixXd& p) {
  HerModel m;
  m.projection = p;
  m.class_registry.resize(static_cast<std::size_t>(p.cols()));
  return m;
}

ActivePool pool_with_labeled(Index probes, Index gallery, std::initializer_list<Index> labeled) {
  ActivePool pool = ActivePool::fresh(probes, gallery, probes);
  for (Index id : labeled) {
    pool.probe_unlabeled.erase(id);
    pool.probe_labeled.insert(id);
  }
  return pool;
}

FeatureMatrix synthetic(Index identities, Index dim, double noise, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.identities = identities;
  spec.dim = dim;
  spec.noise = noise;
  spec.seed = seed;
  return generate_synthetic(spec).combined();
}

}  // namespace

TEST_CASE("diversity is the distance to the nearest labeled probe") {
  const HerModel id = fixed_projection(Eigen::MatrixXd::Identity(2, 2));
  {
    ActiveDataset data{points({{0, 0}, {1, 0}, {5, 0}}, View::probe), points({{0, 0}}, View::gallery)};
    const Eigen::VectorXd e = diversity_score(data, pool_with_labeled(3, 1, {0}), id);
    CHECK(e(0) == doctest::Approx(1.0));
    CHECK(e(1) == doctest::Approx(25.0));
  }
  {
    ActiveDataset data{points({{0, 0}, {10, 0}, {6, 0}}, View::probe), points({{0, 0}}, View::gallery)};
    const Eigen::VectorXd e = diversity_score(data, pool_with_labeled(3, 1, {0, 1}), id);
    CHECK(e(0) == doctest::Approx(16.0));
  }
  {
    ActiveDataset data{points({{2, 2}, {2, 2}}, View::probe), points({{0, 0}}, View::gallery)};
    CHECK(diversity_score(data, pool_with_labeled(2, 1, {0}), id)(0) == 0.0);
  }
  ActiveDataset data{points({{0, 0}}, View::probe), points({{0, 0}}, View::gallery)};
  CHECK(test::error_code_of([&] { diversity_score(data, ActivePool::fresh(1, 1, 1), id); }) ==
        ErrorCode::bootstrap_required);
}

TEST_CASE("matching uncertainty is the distance to the nearest gallery sample") {
  const HerModel id = fixed_projection(Eigen::MatrixXd::Identity(2, 2));
  ActiveDataset data{points({{1, 0}, {3, 0}, {0, 0}}, View::probe), points({{0, 0}}, View::gallery)};
  const Eigen::VectorXd e = matching_uncertainty_score(data, ActivePool::fresh(3, 1, 3), id);
  CHECK(e(0) == doctest::Approx(1.0));
  CHECK(e(1) == doctest::Approx(9.0));
  CHECK(e(2) == 0.0);
  const HerModel zero = fixed_projection(Eigen::MatrixXd::Zero(2, 2));
  CHECK(matching_uncertainty_score(data, ActivePool::fresh(3, 1, 3), zero).isZero(0.0));
}

TEST_CASE("ranking distribution and its entropy") {
  Eigen::VectorXd equal(2);
  equal << 3.0, 3.0;
  CHECK(ranking_distribution(equal)(0) == doctest::Approx(0.5));
  CHECK(distribution_entropy(ranking_distribution(equal)) == doctest::Approx(0.69314718));

  // Independent evaluation of softmax(-d) and its entropy for d = (0, 10).
  const double e10 = std::exp(-10.0);
  const double p0 = 1.0 / (1.0 + e10);
  const double p1 = e10 / (1.0 + e10);
  const double h = -(p0 * std::log(p0) + p1 * std::log(p1));
  Eigen::VectorXd d(2);
  d << 0.0, 10.0;
  const Eigen::VectorXd p = ranking_distribution(d);
  CHECK(p(0) == doctest::Approx(p0).epsilon(1e-14));
  CHECK(p(1) == doctest::Approx(p1).epsilon(1e-12));
  CHECK(p(0) == doctest::Approx(0.9999546).epsilon(1e-7));
  CHECK(p(1) == doctest::Approx(4.5398e-5).epsilon(1e-4));
  CHECK(distribution_entropy(p) == doctest::Approx(h).epsilon(1e-12));
  CHECK(distribution_entropy(p) == doctest::Approx(4.9946e-4).epsilon(1e-4));

  const Eigen::VectorXd single = ranking_distribution(Eigen::VectorXd::Constant(1, 42.0));
  CHECK(single(0) == 1.0);
  CHECK(distribution_entropy(single) == 0.0);

  Eigen::VectorXd huge(3);
  huge << 1e6, 1e6 + 1, 2e6;
  const Eigen::VectorXd q = ranking_distribution(huge);
  CHECK(q.allFinite());
  CHECK(std::abs(q.sum() - 1.0) <= 1e-12);
  CHECK(test::error_code_of([] { ranking_distribution(Eigen::VectorXd(0)); }) == ErrorCode::invalid_state);
}

TEST_CASE("min-max normalization examples") {
  Eigen::VectorXd raw(3);
  raw << 2, 4, 6;
  const Eigen::VectorXd n = normalize_scores(raw);
  CHECK(n(0) == 0.0);
  CHECK(n(1) == doctest::Approx(0.5));
  CHECK(n(2) == 1.0);
  CHECK(normalize_scores(Eigen::VectorXd::Constant(4, 3.3)) == Eigen::VectorXd::Constant(4, 0.5));
  CHECK(normalize_scores(Eigen::VectorXd::Constant(1, -2.0))(0) == 0.5);
}

TEST_CASE("joint argmax with ties to the lowest id") {
  SelectionScores s;
  s.probe_ids = {4, 9};
  s.joint.resize(2);
  s.joint << 3.0, 0.0;
  CHECK(argmax_lowest_id(s) == 4);
  s.joint << 1.5, 1.5;
  CHECK(argmax_lowest_id(s) == 4);
  s.probe_ids = {2, 5, 8};
  s.joint.resize(3);
  s.joint << 0.1, 2.0, 2.0;
  CHECK(argmax_lowest_id(s) == 5);
}

TEST_CASE("score invariants over random pools") {
  Gen g(83);
  for (int t = 0; t < 25; ++t) {
    const Index d = g.integer(2, 8);
    const Index np = g.integer(3, 20);
    const Index ng = g.integer(1, 15);
    ActiveDataset data{g.features(d, np, np), g.features(d, ng, ng)};
    const HerModel model = fixed_projection(g.matrix(d, g.integer(1, 4)));
    ActivePool pool = ActivePool::fresh(np, ng, np);
    const Index labeled = g.integer(1, np - 1);
    for (Index k = 0; k < labeled; ++k) {
      const Index id = *std::next(pool.probe_unlabeled.begin(), g.integer(0, static_cast<Index>(pool.probe_unlabeled.size()) - 1));
      pool.probe_unlabeled.erase(id);
      pool.probe_labeled.insert(id);
    }
    const GallerySet set = g.integer(0, 1) ? GallerySet::full : GallerySet::unlabeled;
    const SelectionScores s = joint_scores(data, pool, model, set);
    CHECK(s.diversity_used);
    CHECK(static_cast<Index>(s.probe_ids.size()) == np - labeled);
    for (const Eigen::VectorXd* v : {&s.diversity, &s.matching, &s.entropy}) {
      CHECK(v->minCoeff() >= 0.0);
      CHECK(v->maxCoeff() <= 1.0);
    }
    CHECK(s.joint.minCoeff() >= 0.0);
    CHECK(s.joint.maxCoeff() <= 3.0);
    CHECK(s.raw_entropy.maxCoeff() <= std::log(static_cast<double>(ng)) + 1e-12);
    CHECK(s.raw_entropy.minCoeff() >= 0.0);

    // Scaling every raw component by one constant keeps the choice.
    const Index chosen = argmax_lowest_id(s);
    const double c = g.uniform(0.1, 50.0);
    SelectionScores scaled = s;
    scaled.joint = normalize_scores(c * s.raw_diversity) + normalize_scores(c * s.raw_matching) +
                   normalize_scores(c * s.raw_entropy);
    CHECK(argmax_lowest_id(scaled) == chosen);
  }
}

TEST_CASE("random selection is reproducible and density picks the crowded probe") {
  Gen g(89);
  ActiveDataset data{g.features(3, 30, 30), g.features(3, 30, 30)};
  const ActivePool pool = ActivePool::fresh(30, 30, 30);
  const HerModel m = fixed_projection(Eigen::MatrixXd::Identity(3, 3));
  std::vector<Index> a, b;
  std::mt19937_64 r1(5), r2(5);
  for (int k = 0; k < 10; ++k) {
    a.push_back(select_next_probe(data, pool, m, Policy::random, r1));
    b.push_back(select_next_probe(data, pool, m, Policy::random, r2));
  }
  CHECK(a == b);

  ActiveDataset line{points({{0, 0}, {0.1, 0}, {0.2, 0}, {0.3, 0}, {9, 0}, {20, 0}}, View::probe),
                     points({{0, 0}}, View::gallery)};
  const HerModel id2 = fixed_projection(Eigen::MatrixXd::Identity(2, 2));
  // radius 77.44: ids 2 and 3 reach four neighbours, 0 and 1 only three
  CHECK(density_pick(line, ActivePool::fresh(6, 1, 6), id2) == 2);
}

TEST_CASE("policy names round-trip") {
  for (Policy p : {Policy::joint_e2, Policy::random, Policy::density})
    CHECK(parse_policy(to_string(p)) == p);
  CHECK(test::error_code_of([] { parse_policy("greedy"); }) == ErrorCode::invalid_parameter);
}

TEST_CASE("oracle-driven session accounting and pool conservation") {
  const FeatureMatrix all = synthetic(20, 6, 0.3, 3);
  ActiveDataset data = ActiveDataset::from_views(all);
  for (Policy policy : {Policy::joint_e2, Policy::random, Policy::density}) {
    ActiveConfig cfg;
    cfg.policy = policy;
    cfg.budget = 12;
    cfg.seed = 4;
    ActiveSession s(data, cfg);
    for (Index k = 1; k <= 12; ++k) {
      const auto out = active_step(s, oracle_annotator);
      REQUIRE(out.has_value());
      CHECK(out->report.classes_added == 1);
      CHECK(out->report.samples_applied == 2);
      const ActivePool& p = s.pool();
      CHECK(p.step == k);
      CHECK(static_cast<Index>(p.probe_labeled.size()) == k);
      CHECK(s.model().class_count() == k);
      CHECK(static_cast<Index>(p.probe_labeled.size() + p.probe_unlabeled.size()) == p.probe_total);
      for (Index id : p.probe_labeled) CHECK_FALSE(p.probe_unlabeled.contains(id));
      CHECK(static_cast<Index>(p.gallery_labeled.size() + p.gallery_unlabeled.size()) == p.gallery_total);
    }
    CHECK(s.exhausted());
    CHECK_FALSE(active_step(s, oracle_annotator).has_value());
    CHECK(test::error_code_of([&] { s.offer(); }) == ErrorCode::pool_exhausted);
  }

  ActiveConfig none;
  none.budget = 0;
  ActiveSession empty(data, none);
  CHECK_FALSE(active_step(empty, oracle_annotator).has_value());
  CHECK(empty.pool().step == 0);
  CHECK(empty.pool().probe_unlabeled.size() == 20);
}

TEST_CASE("offers are stable until labeled and labels are guarded") {
  const FeatureMatrix all = synthetic(10, 4, 0.2, 8);
  ActiveConfig cfg;
  cfg.budget = 10;
  ActiveSession s(ActiveDataset::from_views(all), cfg);
  const Index first = s.offer().probe_id;
  CHECK(s.offer().probe_id == first);
  CHECK(test::error_code_of([&] { s.label(first + 1 == 10 ? 0 : first + 1, 0); }) == ErrorCode::conflict);
  CHECK(test::error_code_of([&] { s.label(first, 99); }) == ErrorCode::invalid_input);

  const Index g0 = s.offer().ranking.front().gallery_id;
  const LabelOutcome ok = s.label(first, g0);
  CHECK(ok.report.classes_added == 1);
  CHECK(test::error_code_of([&] { s.label(first, g0); }) == ErrorCode::conflict);
  CHECK(s.pool().step == 1);

  const Index second = s.offer().probe_id;
  for (const RankedCandidate& c : s.offer().ranking) CHECK(c.gallery_id != g0);
  CHECK(test::error_code_of([&] { s.label(second, g0); }) == ErrorCode::invalid_input);
  const LabelOutcome parked = s.label(second, std::nullopt);
  CHECK(parked.parked);
  CHECK(parked.report.classes_added == 0);
  CHECK(s.pool().probe_parked.contains(second));
  CHECK(s.pool().step == 2);
  CHECK(s.model().class_count() == 1);
  CHECK(s.events().size() == 2);
  CHECK(s.matched_count() == 1);
}

TEST_CASE("ranking lists the unlabeled gallery in ascending distance") {
  const HerModel id = fixed_projection(Eigen::MatrixXd::Identity(2, 2));
  ActiveDataset data{points({{0, 0}}, View::probe), points({{3, 0}, {1, 0}, {1, 0}, {2, 0}}, View::gallery)};
  ActivePool pool = ActivePool::fresh(1, 4, 1);
  pool.gallery_unlabeled.erase(3);
  const auto r = rank_gallery(data, pool, id, 0);
  REQUIRE(r.size() == 3);
  CHECK(r[0].gallery_id == 1);
  CHECK(r[1].gallery_id == 2);
  CHECK(r[2].gallery_id == 0);
  CHECK(r[2].distance == doctest::Approx(9.0));
}

TEST_CASE("the model built inside the loop equals a batch fit on the labeled pairs") {
  const FeatureMatrix all = synthetic(40, 12, 0.5, 21);
  ActiveDataset data = ActiveDataset::from_views(all);
  ActiveConfig cfg;
  cfg.budget = 30;
  cfg.lambda = 0.7;
  ActiveSession s(data, cfg);
  while (active_step(s, oracle_annotator)) {
  }
  FeatureMatrix pairs;
  pairs.values.resize(12, 0);
  for (const AnnotationEvent& e : s.events()) {
    const Index n = pairs.values.cols();
    pairs.values.conservativeResize(Eigen::NoChange, n + 2);
    pairs.values.col(n) = data.probe.values.col(e.probe_id);
    pairs.values.col(n + 1) = data.gallery.values.col(*e.gallery_id);
    pairs.labels.insert(pairs.labels.end(), {e.identity, e.identity});
    pairs.views.insert(pairs.views.end(), {View::probe, View::gallery});
  }
  CHECK(rel_err(s.model().projection, fit_her_primal(pairs, 0.7).projection) <= 1e-7);
}

TEST_CASE("simulation is deterministic and validates its budget") {
  const FeatureMatrix all = synthetic(30, 8, 0.6, 5);
  SimulationConfig cfg;
  cfg.trials = 2;
  cfg.budget_fraction = 0.5;
  cfg.seed = 9;
  const SimulationResult a = simulate_active_run(all, cfg);
  const SimulationResult b = simulate_active_run(all, cfg);
  CHECK(a.milestones == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
  for (std::size_t m = 0; m < a.milestones.size(); ++m)
    for (int t = 0; t < 2; ++t) CHECK(a.curves[m][static_cast<std::size_t>(t)].rank_rates ==
                                      b.curves[m][static_cast<std::size_t>(t)].rank_rates);
  CHECK(a.final_models[0].projection == b.final_models[0].projection);

  for (double bad : {0.0, -0.1, 1.5}) {
    cfg.budget_fraction = bad;
    CHECK(test::error_code_of([&] { simulate_active_run(all, cfg); }) == ErrorCode::invalid_parameter);
  }
}

TEST_CASE("at full budget every policy trains on the same pairs") {
  const FeatureMatrix all = synthetic(30, 8, 0.6, 6);
  SimulationConfig cfg;
  cfg.trials = 2;
  cfg.budget_fraction = 1.0;
  cfg.milestones = {1.0};
  cfg.policy = Policy::random;
  const SimulationResult r = simulate_active_run(all, cfg);
  cfg.policy = Policy::joint_e2;
  const SimulationResult j = simulate_active_run(all, cfg);
  for (int t = 0; t < 2; ++t)
    CHECK(r.curves[0][static_cast<std::size_t>(t)].rank(1) ==
          doctest::Approx(j.curves[0][static_cast<std::size_t>(t)].rank(1)));
}

TEST_CASE("milestone counts round to the nearest sample") {
  CHECK(milestone_count(0.1, 150) == 15);
  CHECK(milestone_count(0.5, 15) == 8);
  CHECK(milestone_count(1.0, 7) == 7);
}
