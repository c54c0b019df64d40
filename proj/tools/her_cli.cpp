// her-cli: fit, evaluate, simulate, benchmark, generate and serve through the
// C interface of libher.

#include "her/her.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <pthread.h>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace {

using nlohmann::json;

struct CliError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(her_status status) {
  if (status != HER_OK)
    throw CliError(std::string(her_status_name(status)) + ": " + her_last_error());
}

struct DatasetDeleter {
  void operator()(her_dataset_t* d) const { her_dataset_free(d); }
};
struct ModelDeleter {
  void operator()(her_model_t* m) const { her_model_free(m); }
};
struct ServiceDeleter {
  void operator()(her_service_t* s) const { her_service_free(s); }
};
using Dataset = std::unique_ptr<her_dataset_t, DatasetDeleter>;
using Model = std::unique_ptr<her_model_t, ModelDeleter>;
using ServicePtr = std::unique_ptr<her_service_t, ServiceDeleter>;

struct OwnedString {
  char* text = nullptr;
  ~OwnedString() { her_string_free(text); }
};

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// .txt / .csv files go through the text importer, everything else is HERF.
Dataset open_dataset(const std::string& path) {
  her_dataset_t* raw = nullptr;
  if (has_suffix(path, ".txt") || has_suffix(path, ".csv"))
    check(her_dataset_import_text(path.c_str(), &raw));
  else
    check(her_dataset_load(path.c_str(), &raw));
  return Dataset(raw);
}

Dataset view_of(const her_dataset_t* data, int view) {
  her_dataset_t* raw = nullptr;
  check(her_dataset_view(data, view, &raw));
  return Dataset(raw);
}

size_t sample_count(const her_dataset_t* data) {
  size_t n = 0;
  check(her_dataset_dims(data, nullptr, &n, nullptr));
  return n;
}

struct Globals {
  std::uint64_t seed = 0;
  std::string config_path;
  int threads = 1;
  json config = json::object();  // file contents, flags overlaid later
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw CliError("io_error: cannot open config '" + path + "'");
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw CliError("invalid_parameter: config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw CliError(std::string("invalid_parameter: config is not valid JSON: ") + e.what());
  }
}

template <class T>
T config_value(const json& cfg, const char* key, T fallback) {
  if (!cfg.contains(key)) return fallback;
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw CliError(std::string("invalid_parameter: config key '") + key + "' has the wrong type");
  }
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  her_synth_spec spec{};
  std::string out;
  int dtype = 1;
};

void run_synth(const Globals& g, SynthArgs& a) {
  a.spec.seed = g.seed;
  her_dataset_t* raw = nullptr;
  check(her_dataset_synth(&a.spec, &raw));
  Dataset data(raw);
  check(her_dataset_save(data.get(), a.out.c_str(), a.dtype));
  size_t d = 0, n = 0, c = 0;
  check(her_dataset_dims(data.get(), &d, &n, &c));
  std::cout << json{{"path", a.out}, {"dim", d}, {"samples", n}, {"identities", c}, {"seed", g.seed}}
                   .dump()
            << '\n';
}

// ---- fit -------------------------------------------------------------------

struct FitArgs {
  std::string train;
  std::string out;
  double lambda = 0.0;  // 0: take from config
  bool incremental = false;
  bool cross_validate = false;
};

void run_fit(const Globals& g, const FitArgs& a) {
  if (config_value<std::string>(g.config, "kernel", "linear") != "linear")
    throw CliError("invalid_parameter: model files hold linear models; fit an rbf kernel through the library API");
  Dataset train = open_dataset(a.train);
  double lambda = a.lambda > 0.0 ? a.lambda : config_value<double>(g.config, "lambda", 1.0);

  json report = json::object();
  if (a.cross_validate) {
    const auto grid = config_value<std::vector<double>>(
        g.config, "lambda_grid", {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3});
    const int folds = config_value<int>(g.config, "cv_folds", 3);
    std::vector<double> rank1(grid.size());
    check(her_model_fit_cv(train.get(), grid.data(), grid.size(), folds, g.seed, &lambda,
                           rank1.data()));
    json table = json::array();
    for (size_t i = 0; i < grid.size(); ++i)
      table.push_back({{"lambda", grid[i]}, {"mean_rank1", rank1[i]}});
    report["cross_validation"] = {{"folds", folds}, {"grid", table}};
  }

  her_model_t* raw = nullptr;
  her_fit_report fr{};
  check(her_model_fit(train.get(), lambda, a.incremental ? 1 : 0, &raw, &fr));
  Model model(raw);
  check(her_model_save(model.get(), a.out.c_str()));
  report["model"] = a.out;
  report["lambda"] = lambda;
  report["dim"] = fr.dim;
  report["classes"] = fr.classes;
  report["incremental"] = a.incremental;
  report["elapsed_seconds"] = fr.elapsed_seconds;
  report["residual"] = fr.residual;
  std::cout << report.dump() << '\n';
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string test;
  std::string probe;
  std::string gallery;
  bool json_output = false;
};

void run_eval(const EvalArgs& a) {
  her_model_t* raw = nullptr;
  check(her_model_load(a.model.c_str(), &raw));
  Model model(raw);

  Dataset probe, gallery;
  if (!a.test.empty()) {
    Dataset test = open_dataset(a.test);
    probe = view_of(test.get(), 0);
    gallery = view_of(test.get(), 1);
  } else if (!a.probe.empty() && !a.gallery.empty()) {
    probe = open_dataset(a.probe);
    gallery = open_dataset(a.gallery);
  } else {
    throw CliError("invalid_input: pass --test, or both --probe and --gallery");
  }

  const std::vector<int> ranks = {1, 5, 10, 20};
  std::vector<double> rates(20);
  size_t probes = 0;
  check(her_eval_cmc(model.get(), probe.get(), gallery.get(), rates.data(), rates.size(), &probes));

  if (a.json_output) {
    json j{{"probes", probes}, {"gallery", sample_count(gallery.get())}};
    for (int k : ranks) j["rank" + std::to_string(k)] = rates[static_cast<size_t>(k - 1)];
    std::cout << j.dump() << '\n';
    return;
  }
  std::printf("%8s%8s%8s%8s\n", "R1", "R5", "R10", "R20");
  for (int k : ranks) std::printf("%8.2f", 100.0 * rates[static_cast<size_t>(k - 1)]);
  std::printf("\n");
}

// ---- active-sim ------------------------------------------------------------

struct SimArgs {
  std::string data;
  std::vector<std::string> policies = {"random", "density", "joint-e2"};
  int trials = 0;
  double lambda = 0.0;
  double budget = 0.0;
  bool json_output = false;
};

void run_active_sim(const Globals& g, const SimArgs& a) {
  Dataset data = open_dataset(a.data);
  json base = g.config;
  for (const char* key : {"lambda_grid", "cv_folds", "kernel", "bandwidth"}) base.erase(key);
  base["seed"] = g.seed;
  if (a.trials > 0) base["trials"] = a.trials;
  if (a.lambda > 0.0) base["lambda"] = a.lambda;
  if (a.budget > 0.0)
    base["budget_fraction"] = a.budget;
  else if (!base.contains("budget_fraction"))
    base["budget_fraction"] = 1.0;
  if (!base.contains("trials")) base["trials"] = 10;

  json results = json::array();
  for (const auto& policy : a.policies) {
    json cfg = base;
    cfg["policy"] = policy;
    OwnedString out;
    check(her_active_sim(data.get(), cfg.dump().c_str(), &out.text));
    results.push_back(json::parse(out.text));
  }

  if (a.json_output) {
    std::cout << json{{"seed", g.seed}, {"results", results}}.dump() << '\n';
    return;
  }
  std::printf("Rank-1 (%%) by labelling budget, mean +- sd over %d trials\n",
              base["trials"].get<int>());
  std::printf("%-10s", "policy");
  for (const auto& m : results.front()["milestones"])
    std::printf("%14.0f", 100.0 * m["fraction"].get<double>());
  std::printf("\n");
  for (const auto& r : results) {
    std::printf("%-10s", r["policy"].get<std::string>().c_str());
    for (const auto& m : r["milestones"])
      std::printf("%8.2f+-%4.2f", 100.0 * m["rank1_mean"].get<double>(),
                  100.0 * m["rank1_sd"].get<double>());
    std::printf("\n");
  }
}

// ---- bench -----------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> grid = {"256x1000", "512x2000"};
  int repetitions = 5;
  long chunk = 64;
  bool json_output = false;
};

void run_bench(const Globals& g, const BenchArgs& a) {
  json cfg{{"repetitions", a.repetitions}, {"chunk_size", a.chunk}, {"seed", g.seed}};
  cfg["lambda"] = config_value<double>(g.config, "lambda", 1.0);
  json grid = json::array();
  for (const auto& cell : a.grid) {
    const auto x = cell.find('x');
    if (x == std::string::npos) throw CliError("invalid_parameter: grid cells look like 512x2000");
    try {
      grid.push_back({std::stol(cell.substr(0, x)), std::stol(cell.substr(x + 1))});
    } catch (const std::exception&) {
      throw CliError("invalid_parameter: bad grid cell '" + cell + "'");
    }
  }
  cfg["grid"] = grid;
  OwnedString out;
  check(her_bench(cfg.dump().c_str(), &out.text));
  const json r = json::parse(out.text);
  if (a.json_output) {
    std::cout << r.dump() << '\n';
    return;
  }
  std::printf("%6s %6s %6s %12s %12s %12s %9s %9s\n", "d", "n", "chunk", "batch_s", "pair_s",
              "chunk_s", "pair_x", "chunk_x");
  for (const auto& row : r["rows"])
    std::printf("%6ld %6ld %6ld %12.6f %12.6f %12.6f %9.1f %9.1f\n", row["dim"].get<long>(),
                row["samples"].get<long>(), row["chunk_size"].get<long>(),
                row["batch_fit_seconds"].get<double>(), row["single_pair_seconds"].get<double>(),
                row["chunk_seconds"].get<double>(), row["single_speedup"].get<double>(),
                row["chunk_speedup"].get<double>());
}

// ---- update ----------------------------------------------------------------

struct UpdateArgs {
  std::string model;
  std::string batch;
  std::string out;
};

void run_update(const UpdateArgs& a) {
  her_model_t* raw = nullptr;
  check(her_model_load(a.model.c_str(), &raw));
  Model model(raw);
  Dataset batch = open_dataset(a.batch);
  her_update_report r{};
  check(her_model_update(model.get(), batch.get(), &r));
  const std::string out = a.out.empty() ? a.model : a.out;
  check(her_model_save(model.get(), out.c_str()));
  if (r.drift_estimate > 1e-6)
    std::cerr << "warning: inverse drift " << r.drift_estimate
              << " exceeds 1e-6; consider refitting from the full data\n";
  std::cout << json{{"model", out},
                    {"samples_applied", r.samples_applied},
                    {"classes_added", r.classes_added},
                    {"path", r.chunk_path ? "chunk-woodbury" : "scalar-sequential"},
                    {"elapsed_seconds", r.elapsed_seconds},
                    {"drift_estimate", r.drift_estimate},
                    {"stale_class_rows", r.stale_class_rows}}
                   .dump()
            << '\n';
}

// ---- serve -----------------------------------------------------------------

struct ServeArgs {
  std::string listen = "127.0.0.1:8080";
  std::vector<std::string> datasets;
  long synth_identities = 0;
  long synth_dim = 64;
  std::string static_dir;
  std::string snapshot_dir;
  long top_r = 50;
};

void run_serve(const Globals& g, const ServeArgs& a) {
  const auto colon = a.listen.rfind(':');
  if (colon == std::string::npos) throw CliError("invalid_parameter: --listen expects host:port");
  const std::string host = a.listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(a.listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw CliError("invalid_parameter: bad port in '" + a.listen + "'");
  }

  json cfg{{"top_r", a.top_r}};
  if (!a.static_dir.empty()) cfg["static_dir"] = a.static_dir;
  if (!a.snapshot_dir.empty()) cfg["snapshot_dir"] = a.snapshot_dir;
  her_service_t* raw = nullptr;
  check(her_service_create(cfg.dump().c_str(), &raw));
  ServicePtr service(raw);

  std::vector<std::string> names;
  for (const auto& spec : a.datasets) {
    const auto eq = spec.find('=');
    const std::string name = eq == std::string::npos ? spec : spec.substr(0, eq);
    const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
    Dataset data = open_dataset(path);
    check(her_service_add_dataset(service.get(), name.c_str(), data.get()));
    names.push_back(name);
  }
  if (a.synth_identities > 0) {
    her_synth_spec spec;
    her_synth_spec_default(&spec);
    spec.identities = static_cast<size_t>(a.synth_identities);
    spec.dim = static_cast<size_t>(a.synth_dim);
    spec.seed = g.seed;
    her_dataset_t* d = nullptr;
    check(her_dataset_synth(&spec, &d));
    Dataset data(d);
    check(her_service_add_dataset(service.get(), "synthetic", data.get()));
    names.push_back("synthetic");
  }

  int bound = 0;
  check(her_service_bind(service.get(), host.c_str(), port, &bound));

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  std::cout << json{{"listening", host + ":" + std::to_string(bound)}, {"datasets", names}}.dump()
            << std::endl;
  her_status run_status = HER_OK;
  std::thread server([&] { run_status = her_service_run(service.get()); });
  int received = 0;
  sigwait(&signals, &received);
  her_service_stop(service.get());
  server.join();
  check(run_status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HER closed-form re-identification: fit, evaluate, simulate and serve"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->envname("SEED");
  app.add_option("--config", g.config_path, "JSON run configuration")->envname("CONFIG");
  app.add_option("--threads", g.threads, "Linear-algebra worker threads")
      ->envname("THREADS")
      ->check(CLI::NonNegativeNumber);

  SynthArgs synth;
  her_synth_spec_default(&synth.spec);
  auto* cmd_synth = app.add_subcommand("synth", "Write a synthetic two-view dataset (HERF)");
  cmd_synth->add_option("--out", synth.out, "Output HERF file")->required();
  cmd_synth->add_option("--identities", synth.spec.identities, "Number of identities");
  cmd_synth->add_option("--images", synth.spec.images_per_view, "Images per identity per view");
  cmd_synth->add_option("--dim", synth.spec.dim, "Feature dimension");
  cmd_synth->add_option("--spread", synth.spec.identity_spread, "Std-dev of identity centers");
  cmd_synth->add_option("--shift", synth.spec.view_shift, "Norm of the gallery view offset");
  cmd_synth->add_option("--noise", synth.spec.noise, "Per-image noise std-dev");
  cmd_synth->add_option("--dtype", synth.dtype, "0 = float32, 1 = float64")->check(CLI::Range(0, 1));

  FitArgs fit;
  auto* cmd_fit = app.add_subcommand("fit", "Fit a model on labelled features");
  cmd_fit->add_option("--train", fit.train, "Training features (HERF or text)")->required();
  cmd_fit->add_option("--out", fit.out, "Output HERM model file")->required();
  cmd_fit->add_option("--lambda", fit.lambda, "Ridge weight")->check(CLI::PositiveNumber);
  cmd_fit->add_flag("--incremental", fit.incremental, "Keep the inverse for later updates");
  cmd_fit->add_flag("--cross-validate", fit.cross_validate, "Choose lambda from the config grid");

  EvalArgs eval;
  auto* cmd_eval = app.add_subcommand("eval", "CMC of a model on a test set");
  cmd_eval->add_option("--model", eval.model, "HERM model file")->required();
  cmd_eval->add_option("--test", eval.test, "Test features with both views");
  cmd_eval->add_option("--probe", eval.probe, "Probe features");
  cmd_eval->add_option("--gallery", eval.gallery, "Gallery features");
  cmd_eval->add_flag("--json", eval.json_output, "Machine-readable output");

  SimArgs sim;
  auto* cmd_sim = app.add_subcommand("active-sim", "Simulated-oracle active learning by budget");
  cmd_sim->add_option("--data", sim.data, "Dataset with both views")->required();
  cmd_sim->add_option("--policies", sim.policies, "Policies to compare")->delimiter(',');
  cmd_sim->add_option("--trials", sim.trials, "Trials per policy")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--lambda", sim.lambda, "Ridge weight")->check(CLI::PositiveNumber);
  cmd_sim->add_option("--budget", sim.budget, "Largest budget fraction")->check(CLI::Range(0.0, 1.0));
  cmd_sim->add_flag("--json", sim.json_output, "Machine-readable output");

  BenchArgs bench;
  auto* cmd_bench = app.add_subcommand("bench", "Batch refit versus incremental update timing");
  cmd_bench->add_option("--grid", bench.grid, "Cells as DxN")->delimiter(',');
  cmd_bench->add_option("--repetitions", bench.repetitions, "Timed repetitions")
      ->check(CLI::PositiveNumber);
  cmd_bench->add_option("--chunk", bench.chunk, "Chunk size")->check(CLI::PositiveNumber);
  cmd_bench->add_flag("--json", bench.json_output, "Machine-readable output");

  UpdateArgs update;
  auto* cmd_update = app.add_subcommand("update", "Absorb a labelled batch into a saved model");
  cmd_update->add_option("--model", update.model, "Incremental HERM model")->required();
  cmd_update->add_option("--batch", update.batch, "New labelled features")->required();
  cmd_update->add_option("--out", update.out, "Output model (default: overwrite --model)");

  ServeArgs serve;
  auto* cmd_serve = app.add_subcommand("serve", "Run the HTTP annotation service");
  cmd_serve->add_option("--listen", serve.listen, "host:port")->envname("LISTEN");
  cmd_serve->add_option("--dataset", serve.datasets, "name=path, repeatable")->envname("DATASET");
  cmd_serve->add_option("--synth", serve.synth_identities,
                        "Register a synthetic dataset with this many identities")
      ->envname("SYNTH");
  cmd_serve->add_option("--synth-dim", serve.synth_dim, "Synthetic feature dimension")
      ->envname("SYNTH_DIM");
  cmd_serve->add_option("--static-dir", serve.static_dir, "Directory served at /")
      ->envname("STATIC_DIR");
  cmd_serve->add_option("--snapshot-dir", serve.snapshot_dir, "Snapshot output directory")
      ->envname("SNAPSHOT_DIR");
  cmd_serve->add_option("--top-r", serve.top_r, "Default ranking page size")
      ->envname("TOP_R")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "her-cli: " << e.what() << '\n';
    return 2;
  }

  try {
    g.config = read_config(g.config_path);
    if (g.config.contains("seed") && app.count("--seed") == 0 && std::getenv("SEED") == nullptr)
      g.seed = config_value<std::uint64_t>(g.config, "seed", 0);
    check(her_set_threads(g.threads));

    if (*cmd_synth) run_synth(g, synth);
    else if (*cmd_fit) run_fit(g, fit);
    else if (*cmd_eval) run_eval(eval);
    else if (*cmd_sim) run_active_sim(g, sim);
    else if (*cmd_bench) run_bench(g, bench);
    else if (*cmd_update) run_update(update);
    else if (*cmd_serve) run_serve(g, serve);
  } catch (const std::exception& e) {
    std::cerr << "her-cli: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
