#include "her/her.h"

#include "her/active.hpp"
#include "her/bench.hpp"
#include "her/config.hpp"
#include "her/data.hpp"
#include "her/error.hpp"
#include "her/eval.hpp"
#include "her/incremental.hpp"
#include "her/service.hpp"

#include "json.hpp"

#include <chrono>
#include <cstring>
#include <memory>
#include <string>

struct her_dataset {
  her::FeatureMatrix data;
};

struct her_model {
  her::HerModel model;
};

struct her_service {
  her::Service service;
  explicit her_service(her::ServiceConfig config) : service(std::move(config)) {}
};

namespace {

using nlohmann::json;

thread_local std::string last_error;

her_status status_of(her::ErrorCode code) { return static_cast<her_status>(code); }

template <class F>
her_status guard(F&& body) {
  last_error.clear();
  try {
    body();
    return HER_OK;
  } catch (const her::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    last_error = std::string("malformed JSON: ") + e.what();
    return HER_INVALID_INPUT;
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return HER_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return HER_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) her::fail(her::ErrorCode::invalid_input, std::string(what) + " is null");
}

her_dataset_t* wrap(her::FeatureMatrix m) { return new her_dataset{std::move(m)}; }

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void fill(her_update_report* out, const her::UpdateReport& r) {
  if (out == nullptr) return;
  out->samples_applied = static_cast<size_t>(r.samples_applied);
  out->classes_added = static_cast<size_t>(r.classes_added);
  out->chunk_path = r.path == her::UpdatePath::chunk_woodbury ? 1 : 0;
  out->elapsed_seconds = r.elapsed_seconds;
  out->drift_estimate = r.drift_estimate;
  out->stale_class_rows = static_cast<size_t>(r.stale_class_rows);
}

double normal_equation_residual(const her::FeatureMatrix& data, const her::HerModel& m) {
  const auto y = her::build_indicator(data.labels);
  const Eigen::MatrixXd& x = data.values;
  const Eigen::MatrixXd rhs = x * y.values;
  const Eigen::MatrixXd lhs = x * (x.transpose() * m.projection) + m.lambda * m.projection;
  const double scale = rhs.norm();
  return scale > 0.0 ? (lhs - rhs).norm() / scale : (lhs - rhs).norm();
}

}  // namespace

extern "C" {

const char* her_last_error(void) { return last_error.c_str(); }

const char* her_status_name(her_status status) {
  if (status == HER_OK) return "ok";
  if (status == HER_INTERNAL) return "internal";
  if (status >= HER_INVALID_INPUT && status <= HER_CONFLICT)
    return her::to_string(static_cast<her::ErrorCode>(status));
  return "unknown";
}

const char* her_version(void) { return "1.0.0"; }

her_status her_set_threads(int threads) {
  return guard([&] {
    if (threads < 0) her::fail(her::ErrorCode::invalid_parameter, "thread count must be >= 0");
    Eigen::setNbThreads(threads);
  });
}

her_status her_dataset_create(size_t dim, size_t count, const double* values,
                              const uint32_t* labels, const uint8_t* views,
                              her_dataset_t** out) {
  return guard([&] {
    require(out, "output handle");
    require(values, "values");
    require(labels, "labels");
    require(views, "views");
    her::FeatureMatrix m;
    const auto d = static_cast<her::Index>(dim);
    const auto n = static_cast<her::Index>(count);
    m.values = Eigen::Map<const Eigen::MatrixXd>(values, d, n);
    m.labels.assign(labels, labels + count);
    m.views.reserve(count);
    for (size_t i = 0; i < count; ++i) {
      if (views[i] > 1) her::fail(her::ErrorCode::invalid_input, "view must be 0 or 1");
      m.views.push_back(static_cast<her::View>(views[i]));
    }
    m.validate();
    *out = wrap(std::move(m));
  });
}

her_status her_dataset_load(const char* path, her_dataset_t** out) {
  return guard([&] {
    require(path, "path");
    require(out, "output handle");
    *out = wrap(her::load_features(path));
  });
}

her_status her_dataset_import_text(const char* path, her_dataset_t** out) {
  return guard([&] {
    require(path, "path");
    require(out, "output handle");
    *out = wrap(her::import_text(path));
  });
}

her_status her_dataset_save(const her_dataset_t* data, const char* path, int dtype) {
  return guard([&] {
    require(data, "dataset");
    require(path, "path");
    if (dtype != 0 && dtype != 1) her::fail(her::ErrorCode::invalid_parameter, "dtype must be 0 or 1");
    her::save_features(data->data, path, static_cast<her::Dtype>(dtype));
  });
}

her_status her_dataset_dims(const her_dataset_t* data, size_t* dim, size_t* count,
                            size_t* classes) {
  return guard([&] {
    require(data, "dataset");
    if (dim) *dim = static_cast<size_t>(data->data.dim());
    if (count) *count = static_cast<size_t>(data->data.size());
    if (classes) *classes = data->data.classes().size();
  });
}

her_status her_dataset_read(const her_dataset_t* data, double* values, uint32_t* labels,
                            uint8_t* views) {
  return guard([&] {
    require(data, "dataset");
    const auto& m = data->data;
    if (values) std::memcpy(values, m.values.data(), sizeof(double) * m.values.size());
    if (labels) std::copy(m.labels.begin(), m.labels.end(), labels);
    if (views)
      for (size_t i = 0; i < m.views.size(); ++i) views[i] = static_cast<uint8_t>(m.views[i]);
  });
}

her_status her_dataset_view(const her_dataset_t* data, int view, her_dataset_t** out) {
  return guard([&] {
    require(data, "dataset");
    require(out, "output handle");
    if (view != 0 && view != 1) her::fail(her::ErrorCode::invalid_parameter, "view must be 0 or 1");
    *out = wrap(data->data.with_view(static_cast<her::View>(view)));
  });
}

her_status her_dataset_concat(const her_dataset_t* a, const her_dataset_t* b,
                              her_dataset_t** out) {
  return guard([&] {
    require(a, "dataset");
    require(b, "dataset");
    require(out, "output handle");
    *out = wrap(her::FeatureMatrix::concat(a->data, b->data));
  });
}

void her_dataset_free(her_dataset_t* data) { delete data; }

void her_synth_spec_default(her_synth_spec* spec) {
  if (spec == nullptr) return;
  const her::SyntheticSpec s;
  spec->identities = static_cast<size_t>(s.identities);
  spec->images_per_view = static_cast<size_t>(s.images_per_view);
  spec->dim = static_cast<size_t>(s.dim);
  spec->identity_spread = s.identity_spread;
  spec->view_shift = s.view_shift;
  spec->noise = s.noise;
  spec->seed = s.seed;
}

her_status her_dataset_synth(const her_synth_spec* spec, her_dataset_t** out) {
  return guard([&] {
    require(spec, "spec");
    require(out, "output handle");
    her::SyntheticSpec s;
    s.identities = static_cast<her::Index>(spec->identities);
    s.images_per_view = static_cast<her::Index>(spec->images_per_view);
    s.dim = static_cast<her::Index>(spec->dim);
    s.identity_spread = spec->identity_spread;
    s.view_shift = spec->view_shift;
    s.noise = spec->noise;
    s.seed = spec->seed;
    *out = wrap(her::generate_synthetic(s).combined());
  });
}

her_status her_dataset_split(const her_dataset_t* data, uint64_t seed, int protocol,
                             her_dataset_t** train, her_dataset_t** test_probe,
                             her_dataset_t** test_gallery) {
  return guard([&] {
    require(data, "dataset");
    if (protocol != 0 && protocol != 1)
      her::fail(her::ErrorCode::invalid_parameter, "split protocol must be 0 or 1");
    her::SplitSpec spec;
    spec.seed = seed;
    spec.protocol = protocol == 0 ? her::SplitProtocol::half_split
                                  : her::SplitProtocol::single_shot_gallery;
    her::Split s = her::make_split(data->data, spec);
    if (train) *train = wrap(std::move(s.train));
    if (test_probe) *test_probe = wrap(std::move(s.test_probe));
    if (test_gallery) *test_gallery = wrap(std::move(s.test_gallery));
  });
}

her_status her_model_fit(const her_dataset_t* data, double lambda, int incremental,
                         her_model_t** out, her_fit_report* report) {
  return guard([&] {
    require(data, "dataset");
    require(out, "output handle");
    her::FitOptions options;
    options.incremental = incremental != 0;
    const auto start = std::chrono::steady_clock::now();
    her::HerModel m = her::fit_her_primal(data->data, lambda, options);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (report) {
      report->elapsed_seconds = elapsed;
      report->residual = normal_equation_residual(data->data, m);
      report->dim = static_cast<size_t>(m.feature_dim());
      report->classes = static_cast<size_t>(m.class_count());
    }
    *out = new her_model{std::move(m)};
  });
}

her_status her_model_fit_cv(const her_dataset_t* data, const double* lambdas, size_t count,
                            int folds, uint64_t seed, double* chosen, double* mean_rank1) {
  return guard([&] {
    require(data, "dataset");
    require(lambdas, "lambda grid");
    const auto cv = her::cross_validate_lambda(data->data, {lambdas, count}, folds, seed);
    if (chosen) *chosen = cv.chosen_lambda;
    if (mean_rank1) std::copy(cv.mean_rank1.begin(), cv.mean_rank1.end(), mean_rank1);
  });
}

her_status her_model_update(her_model_t* model, const her_dataset_t* batch,
                            her_update_report* report) {
  return guard([&] {
    require(model, "model");
    require(batch, "batch");
    batch->data.validate();
    her::UpdateBatch b{batch->data.values, batch->data.labels};
    fill(report, her::apply_update_policy(model->model, b));
  });
}

her_status her_model_save(const her_model_t* model, const char* path) {
  return guard([&] {
    require(model, "model");
    require(path, "path");
    her::save_model(model->model, path);
  });
}

her_status her_model_load(const char* path, her_model_t** out) {
  return guard([&] {
    require(path, "path");
    require(out, "output handle");
    *out = new her_model{her::load_model(path)};
  });
}

her_status her_model_dims(const her_model_t* model, size_t* dim, size_t* classes,
                          double* lambda, int* incremental) {
  return guard([&] {
    require(model, "model");
    if (dim) *dim = static_cast<size_t>(model->model.feature_dim());
    if (classes) *classes = static_cast<size_t>(model->model.class_count());
    if (lambda) *lambda = model->model.lambda;
    if (incremental) *incremental = model->model.incremental() ? 1 : 0;
  });
}

her_status her_model_project(const her_model_t* model, const double* x, size_t count,
                             double* out) {
  return guard([&] {
    require(model, "model");
    require(x, "input");
    require(out, "output");
    const auto& m = model->model;
    const Eigen::Map<const Eigen::MatrixXd> z(x, m.feature_dim(), static_cast<her::Index>(count));
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<RowMajor>(out, static_cast<her::Index>(count), m.class_count()) =
        her::project(m, Eigen::MatrixXd(z));
  });
}

her_status her_model_distance(const her_model_t* model, const double* x1, const double* x2,
                              double* out) {
  return guard([&] {
    require(model, "model");
    require(x1, "x1");
    require(x2, "x2");
    require(out, "output");
    const auto d = model->model.feature_dim();
    *out = her::model_distance(model->model, Eigen::Map<const Eigen::VectorXd>(x1, d),
                               Eigen::Map<const Eigen::VectorXd>(x2, d));
  });
}

void her_model_free(her_model_t* model) { delete model; }

her_status her_eval_cmc(const her_model_t* model, const her_dataset_t* probe,
                        const her_dataset_t* gallery, double* rates, size_t max_rank,
                        size_t* probe_count) {
  return guard([&] {
    require(model, "model");
    require(probe, "probe set");
    require(gallery, "gallery set");
    const her::CmcCurve cmc = her::compute_cmc(model->model, probe->data, gallery->data);
    if (rates)
      for (size_t k = 0; k < max_rank; ++k) rates[k] = cmc.rank(static_cast<her::Index>(k + 1));
    if (probe_count) *probe_count = static_cast<size_t>(cmc.probe_count);
  });
}

her_status her_active_sim(const her_dataset_t* data, const char* config_json,
                          char** result_json) {
  return guard([&] {
    require(data, "dataset");
    require(result_json, "output string");
    const her::RunConfig rc =
        her::merge_run_config(her::RunConfig{}, config_json ? config_json : "{}");
    const her::SimulationConfig sc = rc.simulation();
    const auto start = std::chrono::steady_clock::now();
    const her::SimulationResult r = her::simulate_active_run(data->data, sc);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json rows = json::array();
    for (std::size_t m = 0; m < r.milestones.size(); ++m) {
      json row{{"fraction", r.milestones[m]}};
      for (her::Index k : {1, 5, 10, 20}) {
        const std::string key = "rank" + std::to_string(k);
        row[key + "_mean"] = r.mean_rank(m, k);
        row[key + "_sd"] = r.sd_rank(m, k);
      }
      json per_trial = json::array();
      for (const auto& cmc : r.curves[m]) per_trial.push_back(cmc.rank(1));
      row["rank1_trials"] = per_trial;
      rows.push_back(std::move(row));
    }
    json out{{"policy", her::to_string(sc.policy)},
             {"trials", sc.trials},
             {"seed", sc.seed},
             {"lambda", sc.lambda},
             {"budget_fraction", sc.budget_fraction},
             {"elapsed_seconds", elapsed},
             {"milestones", rows}};
    *result_json = copy_string(out.dump());
  });
}

her_status her_bench(const char* config_json, char** result_json) {
  return guard([&] {
    require(result_json, "output string");
    const json in = json::parse(config_json ? config_json : "{}");
    her::BenchConfig bc;
    for (const auto& [key, value] : in.items()) {
      if (key == "grid") {
        bc.grid.clear();
        for (const auto& cell : value)
          bc.grid.emplace_back(cell.at(0).get<her::Index>(), cell.at(1).get<her::Index>());
      } else if (key == "repetitions") {
        bc.repetitions = value.get<int>();
      } else if (key == "chunk_size") {
        bc.chunk_size = value.get<her::Index>();
      } else if (key == "lambda") {
        bc.lambda = value.get<double>();
      } else if (key == "seed") {
        bc.seed = value.get<std::uint64_t>();
      } else {
        her::fail(her::ErrorCode::invalid_parameter, "unknown bench key '" + key + "'");
      }
    }
    json rows = json::array();
    for (const her::BenchRow& row : her::run_bench(bc))
      rows.push_back({{"dim", row.dim},
                      {"samples", row.samples},
                      {"chunk_size", row.chunk_size},
                      {"repetitions", row.repetitions},
                      {"batch_fit_seconds", row.batch_fit_seconds},
                      {"single_pair_seconds", row.single_pair_seconds},
                      {"chunk_seconds", row.chunk_seconds},
                      {"single_speedup", row.single_speedup},
                      {"chunk_speedup", row.chunk_speedup}});
    *result_json = copy_string(json{{"rows", rows}, {"threads", Eigen::nbThreads()}}.dump());
  });
}

void her_string_free(char* text) { std::free(text); }

her_status her_service_create(const char* config_json, her_service_t** out) {
  return guard([&] {
    require(out, "output handle");
    const json in = json::parse(config_json ? config_json : "{}");
    her::ServiceConfig sc;
    for (const auto& [key, value] : in.items()) {
      if (key == "top_r")
        sc.top_r = value.get<her::Index>();
      else if (key == "static_dir")
        sc.static_dir = value.get<std::string>();
      else if (key == "snapshot_dir")
        sc.snapshot_dir = value.get<std::string>();
      else
        her::fail(her::ErrorCode::invalid_parameter, "unknown service key '" + key + "'");
    }
    if (sc.top_r < 1) her::fail(her::ErrorCode::invalid_parameter, "top_r must be >= 1");
    *out = new her_service(std::move(sc));
  });
}

her_status her_service_add_dataset(her_service_t* service, const char* name,
                                   const her_dataset_t* data) {
  return guard([&] {
    require(service, "service");
    require(name, "name");
    require(data, "dataset");
    service->service.add_dataset(name, data->data);
  });
}

her_status her_service_bind(her_service_t* service, const char* host, int port,
                            int* bound_port) {
  return guard([&] {
    require(service, "service");
    require(host, "host");
    const int p = service->service.bind(host, port);
    if (bound_port) *bound_port = p;
  });
}

her_status her_service_run(her_service_t* service) {
  return guard([&] {
    require(service, "service");
    service->service.run();
  });
}

void her_service_stop(her_service_t* service) {
  if (service) service->service.stop();
}

void her_service_free(her_service_t* service) { delete service; }

}  // extern "C"
