// Acceptance run: one PASS/FAIL line per criterion with the measured values.
// Exit status is non-zero when any criterion fails.

#include "session_driver.hpp"
#include "support.hpp"

#include "her/active.hpp"
#include "her/bench.hpp"
#include "her/data.hpp"
#include "her/eval.hpp"
#include "her/incremental.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

using namespace her;
using her::test::Gen;
using her::test::rel_err;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Eigen::MatrixXd hstack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

// Labels for n samples spread over fresh ids starting at next_id; every id
// gets at least one sample.
std::vector<IdentityId> fresh_labels(Gen& g, Index n, IdentityId& next_id) {
  const Index classes = g.integer(1, n);
  std::vector<IdentityId> out;
  for (Index i = 0; i < n; ++i)
    out.push_back(next_id + static_cast<IdentityId>(i < classes ? i : g.integer(0, classes - 1)));
  std::shuffle(out.begin(), out.end(), g.engine());
  next_id += static_cast<IdentityId>(classes);
  return out;
}

// Batch targets over the whole history, columns in registry order. Each class
// lives in exactly one batch, so its weight is 1/sqrt of its size there.
Eigen::MatrixXd stacked_targets(const std::vector<std::vector<IdentityId>>& batches,
                                const std::vector<IdentityId>& registry) {
  Index n = 0;
  for (const auto& b : batches) n += static_cast<Index>(b.size());
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, static_cast<Index>(registry.size()));
  Index row = 0;
  for (const auto& b : batches) {
    const Eigen::MatrixXd local = test::indicator_oracle(b);
    std::vector<IdentityId> order;
    for (IdentityId l : b)
      if (std::find(order.begin(), order.end(), l) == order.end()) order.push_back(l);
    for (std::size_t j = 0; j < order.size(); ++j) {
      const auto col = std::find(registry.begin(), registry.end(), order[j]) - registry.begin();
      y.block(row, col, local.rows(), 1) = local.col(static_cast<Index>(j));
    }
    row += local.rows();
  }
  return y;
}

Outcome incremental_vs_batch() {
  Gen g(1001);
  const Index dims[] = {8, 64, 256};
  const Index starts[] = {16, 200};
  const Index chunk_sizes[] = {1, 2, 7, 33};
  double worst = 0.0;
  int scenarios = 0, scalar = 0, chunk = 0;
  for (int s = 0; s < 240; ++s) {
    const Index d = dims[s % 3];
    const Index n0 = starts[(s / 3) % 2];
    const double lambda = g.uniform(0.1, 10.0);
    IdentityId next_id = 1;
    std::vector<std::vector<IdentityId>> batches{fresh_labels(g, n0, next_id)};
    Eigen::MatrixXd x = g.matrix(d, n0);
    FeatureMatrix initial;
    initial.values = x;
    initial.labels = batches[0];
    initial.views.assign(static_cast<std::size_t>(n0), View::probe);
    HerModel m = fit_her_primal(initial, lambda, {.incremental = true});

    const Index updates = g.integer(1, 50);
    for (Index u = 0; u < updates; ++u) {
      const Index np = chunk_sizes[g.integer(0, 3)];
      UpdateBatch b{g.matrix(d, np), fresh_labels(g, np, next_id)};
      const UpdateReport r = apply_update_policy(m, b);
      (r.path == UpdatePath::scalar_sequential ? scalar : chunk)++;
      x = hstack(x, b.features);
      batches.push_back(b.labels);
    }
    const Eigen::MatrixXd oracle = test::svd_projection(x, stacked_targets(batches, m.class_registry), lambda);
    worst = std::max(worst, rel_err(m.projection, oracle));
    ++scenarios;
  }
  return {worst <= 1e-8, fmt("%d scenarios (%d scalar, %d chunk updates), max relative error %.3e (limit 1e-8)",
                             scenarios, scalar, chunk, worst)};
}

Outcome residual_and_minimality() {
  Gen g(1002);
  double worst_residual = 0.0;
  int violations = 0, probes = 0;
  for (int t = 0; t < 100; ++t) {
    const Index d = g.integer(2, 120);
    const Index n = g.integer(2, 120);
    const FeatureMatrix f = g.features(d, n, g.integer(1, std::min<Index>(n, 20)));
    const double lambda = std::pow(10.0, g.uniform(-3.0, 2.0));
    const HerModel m = fit_her_primal(f, lambda);
    const Eigen::MatrixXd y = test::indicator_oracle(f.labels);
    const Eigen::MatrixXd rhs = f.values * y;
    const Eigen::MatrixXd lhs = f.values * (f.values.transpose() * m.projection) + lambda * m.projection;
    worst_residual = std::max(worst_residual, rel_err(lhs, rhs));

    const auto objective = [&](const Eigen::MatrixXd& p) {
      return 0.5 * (f.values.transpose() * p - y).squaredNorm() + 0.5 * lambda * p.squaredNorm();
    };
    const double j0 = objective(m.projection);
    for (int k = 0; k < 10; ++k) {
      const Eigen::MatrixXd e = g.matrix(d, m.class_count());
      const double eps = std::pow(10.0, g.uniform(-4.0, 0.0));
      ++probes;
      if (objective(m.projection + eps * e) < j0) ++violations;
    }
  }
  return {worst_residual <= 1e-9 && violations == 0,
          fmt("100 instances, max residual %.3e (limit 1e-9), %d/%d perturbations lowered the objective",
              worst_residual, violations, probes)};
}

Outcome dual_vs_primal() {
  Gen g(1003);
  double worst = 0.0;
  int accepted = 0, rejected = 0;
  while (accepted < 50) {
    const Index d = g.integer(2, 80);
    const Index n = g.integer(2, 80);
    const FeatureMatrix f = g.features(d, n, g.integer(1, std::min<Index>(n, 10)));
    const double lambda = std::pow(10.0, g.uniform(-2.0, 1.0));
    const Eigen::MatrixXd k = f.values.transpose() * f.values + lambda * Eigen::MatrixXd::Identity(n, n);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(k).eigenvalues();
    if (ev.maxCoeff() / ev.minCoeff() > 1e8) {
      ++rejected;
      continue;
    }
    const Eigen::MatrixXd z = g.matrix(d, 10);
    worst = std::max(worst, rel_err(project(fit_her_dual(f, lambda, KernelSpec::linear()), z),
                                    z.transpose() * test::svd_projection(f.values, test::indicator_oracle(f.labels), lambda)));
    ++accepted;
  }
  return {worst <= 1e-8, fmt("50 instances (%d skipped by the cond > 1e8 guard), max relative error %.3e (limit 1e-8)",
                             rejected, worst)};
}

Outcome indicator_invariants() {
  Gen g(1004);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Index n = g.integer(1, 200);
    const Index c = g.integer(1, n);
    const IndicatorMatrix y = build_indicator(g.labels(n, c));
    const Eigen::MatrixXd gram = y.values.transpose() * y.values;
    worst = std::max(worst, (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, fmt("1000 label sequences, max |Y^T Y - I| entry %.3e (limit 1e-12)", worst)};
}

Outcome active_learning_trend() {
  SyntheticSpec spec;
  spec.identities = 300;
  spec.dim = 64;
  spec.images_per_view = 2;
  spec.noise = 1.2;
  spec.seed = 0;
  const FeatureMatrix data = generate_synthetic(spec).combined();

  SimulationConfig cfg;
  cfg.trials = 10;
  cfg.budget_fraction = 1.0;
  cfg.lambda = 1.0;
  cfg.seed = 0;
  cfg.policy = Policy::random;
  const SimulationResult random = simulate_active_run(data, cfg);
  cfg.policy = Policy::joint_e2;
  const SimulationResult joint = simulate_active_run(data, cfg);

  bool never_worse = true;
  int clear_wins = 0;
  std::string rows;
  for (std::size_t m = 0; m < 5; ++m) {
    const double a = joint.mean_rank(m, 1), b = random.mean_rank(m, 1), sd = random.sd_rank(m, 1);
    never_worse = never_worse && a >= b;
    if (a > b && a - b >= 0.5 * sd) ++clear_wins;
    rows += fmt(" %.0f%%: %.2f vs %.2f (sd %.2f);", 100 * random.milestones[m], 100 * a, 100 * b, 100 * sd);
  }
  const double fa = joint.mean_rank(5, 1), fb = random.mean_rank(5, 1), fsd = random.sd_rank(5, 1);
  const bool final_close = std::abs(fa - fb) < fsd || fa == fb;
  rows += fmt(" 100%%: %.2f vs %.2f (sd %.2f)", 100 * fa, 100 * fb, 100 * fsd);
  return {never_worse && clear_wins >= 3 && final_close,
          fmt("Rank-1 JointE2 vs Random over 10 trials;%s; never worse: %s, clear wins %d/5 (need 3), final within 1 sd: %s",
              rows.c_str(), never_worse ? "yes" : "no", clear_wins, final_close ? "yes" : "no")};
}

Outcome update_speed() {
  BenchConfig cfg;
  cfg.grid = {{512, 2000}, {1024, 5000}};
  cfg.repetitions = 5;
  const std::vector<BenchRow> rows = run_bench(cfg);
  const bool pass = rows[0].single_speedup >= 10.0 && rows[1].single_speedup >= 20.0;
  return {pass, fmt("d=512 n=2000: refit %.4fs, single pair %.5fs, x%.1f (need 10); "
                    "d=1024 n=5000: refit %.4fs, single pair %.5fs, x%.1f (need 20)",
                    rows[0].batch_fit_seconds, rows[0].single_pair_seconds, rows[0].single_speedup,
                    rows[1].batch_fit_seconds, rows[1].single_pair_seconds, rows[1].single_speedup)};
}

Outcome cmc_brute_force() {
  Gen g(1007);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const Index ng = g.integer(20, 60);
    const auto gl = g.labels(ng, 20);
    std::vector<IdentityId> pl;
    const Index np = g.integer(1, 40);
    for (Index i = 0; i < np; ++i) pl.push_back(g.pick(gl));
    Eigen::MatrixXd d(np, ng);
    for (Index i = 0; i < np; ++i)
      for (Index j = 0; j < ng; ++j) d(i, j) = t % 2 ? g.normal() : static_cast<double>(g.integer(0, 5));
    if (compute_cmc(d, pl, gl).rank_rates != test::brute_force_cmc(d, pl, gl)) ++mismatches;
  }
  return {mismatches == 0, fmt("100 instances, %d curves differ from the sorted-list oracle", mismatches)};
}

Outcome woodbury_drift() {
  Gen g(1008);
  const Index d = 128;
  const double lambda = 1.0;
  FeatureMatrix all = g.features(d, 200, 40);
  HerModel m = fit_her_primal(all, lambda, {.incremental = true});
  Eigen::MatrixXd extra(d, 1000);
  std::vector<IdentityId> extra_labels;
  double reported = 0.0;
  for (Index k = 0; k < 1000; ++k) {
    extra.col(k) = g.matrix(d, 1);
    extra_labels.push_back(static_cast<IdentityId>(100000 + k));
    reported = update_single(m, extra.col(k), extra_labels.back()).drift_estimate;
  }
  FeatureMatrix batch;
  batch.values = extra;
  batch.labels = extra_labels;
  batch.views.assign(1000, View::gallery);
  all = FeatureMatrix::concat(all, batch);

  const Eigen::MatrixXd t = all.values * all.values.transpose() + lambda * Eigen::MatrixXd::Identity(d, d);
  double probe_residual = 0.0;
  for (int k = 0; k < 10; ++k) {
    const Eigen::VectorXd v = g.matrix(d, 1);
    probe_residual = std::max(probe_residual, (t * (*m.t_inverse * v) - v).norm() / v.norm());
  }
  const double refresh_err = rel_err(m.projection, refresh(m, all).projection);
  return {probe_residual <= 1e-6 && reported <= 1e-6 && refresh_err <= 1e-6,
          fmt("1000 single updates at d=128: probe residual %.3e, reported drift %.3e, refresh-vs-incremental %.3e (limits 1e-6)",
              probe_residual, reported, refresh_err)};
}

Outcome file_round_trips() {
  Gen g(1009);
  int failures = 0;
  for (int t = 0; t < 50; ++t) {
    const FeatureMatrix f = g.features(g.integer(1, 40), g.integer(1, 60), g.integer(1, 10));
    const Dtype dtype = t % 2 ? Dtype::f32 : Dtype::f64;
    std::stringstream fs(std::ios::in | std::ios::out | std::ios::binary);
    write_features(f, fs, dtype);
    const FeatureMatrix fb = read_features(fs);
    const Eigen::MatrixXd expect = dtype == Dtype::f64 ? f.values : Eigen::MatrixXd(f.values.cast<float>().cast<double>());
    bool ok = std::memcmp(fb.values.data(), expect.data(), sizeof(double) * expect.size()) == 0 &&
              fb.labels == f.labels && fb.views == f.views;

    const HerModel m = fit_her_primal(f, g.uniform(0.1, 5.0), {.incremental = t % 3 != 0});
    std::stringstream ms(std::ios::in | std::ios::out | std::ios::binary);
    write_model(m, ms);
    const std::string bytes = ms.str();
    const HerModel mb = read_model(ms);
    ok = ok && std::memcmp(mb.projection.data(), m.projection.data(), sizeof(double) * m.projection.size()) == 0 &&
         mb.lambda == m.lambda && mb.class_registry == m.class_registry && mb.incremental() == m.incremental();
    if (m.incremental())
      ok = ok && std::memcmp(mb.t_inverse->data(), m.t_inverse->data(), sizeof(double) * m.t_inverse->size()) == 0;
    std::ostringstream again(std::ios::binary);
    write_model(mb, again);
    ok = ok && again.str() == bytes;
    if (!ok) ++failures;
  }
  return {failures == 0, fmt("50 instances (HERF f64/f32, HERM with and without inverse), %d not bit-exact", failures)};
}

Outcome service_loop() {
  SyntheticSpec spec;
  spec.identities = 150;
  spec.dim = 512;
  spec.noise = 0.8;
  spec.seed = 10;
  const FeatureMatrix data = generate_synthetic(spec).combined();
  const std::uint64_t seed = 42;

  const auto snap = std::filesystem::temp_directory_path() / "her_acceptance_snapshots";
  std::filesystem::create_directories(snap);
  test::LiveService live({.top_r = 50, .static_dir = std::nullopt, .snapshot_dir = snap});
  live.service().add_dataset("synth", data);
  httplib::Client client("127.0.0.1", live.start());
  client.set_read_timeout(60, 0);
  const test::DrivenSession run = test::drive_session(
      client, data,
      {{"dataset", "synth"}, {"seed", seed}, {"holdout", true}, {"budget_fraction", 1.0}, {"policy", "joint-e2"}});
  const auto snapshot = test::http_post(client, "/sessions/" + run.id + "/snapshot", test::json::object());
  const HerModel served = load_model(snapshot.body["model"].get<std::string>());
  live.stop();
  std::filesystem::remove_all(snap);

  SimulationConfig cfg;
  cfg.policy = Policy::joint_e2;
  cfg.budget_fraction = 1.0;
  cfg.seed = seed;
  cfg.trials = 1;
  cfg.milestones = {1.0};
  const HerModel offline = simulate_active_run(data, cfg).final_models.at(0);

  const bool same_shape = served.projection.rows() == offline.projection.rows() &&
                          served.projection.cols() == offline.projection.cols() &&
                          served.class_registry == offline.class_registry;
  const double err = same_shape ? rel_err(served.projection, offline.projection) : 1.0;
  std::vector<double> lat = run.label_seconds;
  std::sort(lat.begin(), lat.end());
  const double p95 = lat.empty() ? 0.0 : lat[static_cast<std::size_t>(0.95 * static_cast<double>(lat.size() - 1))];
  return {same_shape && err <= 1e-9 && p95 < 0.25 && !lat.empty(),
          fmt("d=512, %d labels (%d parked) over HTTP: model vs offline %.3e (limit 1e-9), label p95 %.1f ms (limit 250)",
              run.steps, run.parked, err, 1e3 * p95)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"incremental equals batch refit", incremental_vs_batch},
      {"normal-equation residual and minimality", residual_and_minimality},
      {"linear dual equals primal", dual_vs_primal},
      {"indicator orthonormality", indicator_invariants},
      {"active-learning trend", active_learning_trend},
      {"single-pair update speedup", update_speed},
      {"CMC brute-force equivalence", cmc_brute_force},
      {"Woodbury drift after 1000 updates", woodbury_drift},
      {"bit-exact file round-trips", file_round_trips},
      {"HTTP session replays the offline run", service_loop},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("criterion %zu %s: %s: %s [%.1fs]\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
