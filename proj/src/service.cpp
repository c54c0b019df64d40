#include "her/service.hpp"

#include "her/active.hpp"
#include "her/data.hpp"
#include "her/error.hpp"

#include "httplib.h"
#include "json.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <mutex>
#include <shared_mutex>

namespace her {

using nlohmann::json;

namespace {

double epoch_seconds(std::chrono::system_clock::time_point t) {
  return std::chrono::duration<double>(t.time_since_epoch()).count();
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict:
    case ErrorCode::pool_exhausted:
    case ErrorCode::invalid_state: return 409;
    case ErrorCode::io_error: return 500;
    default: return 400;
  }
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  reply(res, http_status(code), json{{"error", to_string(code)}, {"message", message}});
}

json report_json(const UpdateReport& r) {
  return {{"samples_applied", r.samples_applied},
          {"classes_added", r.classes_added},
          {"path", to_string(r.path)},
          {"elapsed_seconds", r.elapsed_seconds},
          {"drift_estimate", r.drift_estimate},
          {"stale_class_rows", r.stale_class_rows}};
}

json cmc_json(const CmcCurve& cmc) {
  return {{"rank1", cmc.rank(1)},
          {"rank5", cmc.rank(5)},
          {"rank10", cmc.rank(10)},
          {"rank20", cmc.rank(20)},
          {"probe_count", cmc.probe_count}};
}

template <class T>
T field(const json& body, const char* key, T fallback) {
  if (!body.contains(key) || body[key].is_null()) return fallback;
  try {
    return body[key].get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_input, std::string("field '") + key + "' has the wrong type");
  }
}

json parse_body(const httplib::Request& req) {
  try {
    json body = req.body.empty() ? json::object() : json::parse(req.body);
    if (!body.is_object()) fail(ErrorCode::invalid_input, "request body must be a JSON object");
    return body;
  } catch (const json::parse_error& e) {
    fail(ErrorCode::invalid_input, std::string("malformed JSON: ") + e.what());
  }
}

}  // namespace

struct LiveSession {
  std::string id;
  std::string dataset;
  std::mutex mutex;
  std::unique_ptr<ActiveSession> active;
  std::vector<Index> probe_samples;    // dataset column of each probe id
  std::vector<Index> gallery_samples;  // dataset column of each gallery id
  std::optional<FeatureMatrix> test_probe;
  std::optional<FeatureMatrix> test_gallery;
  std::vector<double> milestones;
  std::vector<json> milestone_results;
  std::optional<double> last_update_elapsed;
  Index top_r = 50;
  std::chrono::system_clock::time_point created;
  std::chrono::system_clock::time_point updated;
};

struct Service::Impl {
  ServiceConfig config;
  httplib::Server server;
  std::shared_mutex registry_mutex;
  std::map<std::string, std::shared_ptr<const FeatureMatrix>> datasets;
  std::map<std::string, std::shared_ptr<LiveSession>> sessions;
  std::atomic<std::uint64_t> next_session{1};
  bool bound = false;

  explicit Impl(ServiceConfig c) : config(std::move(c)) {
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    routes();
  }

  std::shared_ptr<LiveSession> find_session(const std::string& id) {
    std::shared_lock lock(registry_mutex);
    auto it = sessions.find(id);
    if (it == sessions.end()) fail(ErrorCode::not_found, "unknown session '" + id + "'");
    return it->second;
  }

  template <class Handler>
  httplib::Server::Handler guarded(Handler h) {
    return [h](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        reply_error(res, e.code(), e.what());
      } catch (const std::exception& e) {
        reply(res, 500, json{{"error", "internal"}, {"message", e.what()}});
      }
    };
  }

  void routes() {
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, json{{"status", "ok"}});
    });
    server.Post("/sessions", guarded([this](const auto& req, auto& res) { create(req, res); }));
    server.Get(R"(/sessions/([^/]+)/next-probe)",
               guarded([this](const auto& req, auto& res) { next_probe(req, res); }));
    server.Post(R"(/sessions/([^/]+)/labels)",
                guarded([this](const auto& req, auto& res) { submit_label(req, res); }));
    server.Get(R"(/sessions/([^/]+)/metrics)",
               guarded([this](const auto& req, auto& res) { metrics(req, res); }));
    server.Post(R"(/sessions/([^/]+)/snapshot)",
                guarded([this](const auto& req, auto& res) { snapshot(req, res); }));
    if (config.static_dir) server.set_mount_point("/", config.static_dir->string());
  }

  void create(const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    const auto name = field<std::string>(body, "dataset", "");
    std::shared_ptr<const FeatureMatrix> data;
    {
      std::shared_lock lock(registry_mutex);
      auto it = datasets.find(name);
      if (it == datasets.end()) fail(ErrorCode::not_found, "unknown dataset '" + name + "'");
      data = it->second;
    }

    auto s = std::make_shared<LiveSession>();
    s->dataset = name;
    s->top_r = field<Index>(body, "top_r", config.top_r);
    if (s->top_r < 1) fail(ErrorCode::invalid_parameter, "top_r must be >= 1");

    ActiveConfig ac;
    ac.policy = parse_policy(field<std::string>(body, "policy", "joint-e2"));
    ac.seed = field<std::uint64_t>(body, "seed", 0);
    ac.lambda = field<double>(body, "lambda", 1.0);
    if (!(ac.lambda > 0.0)) fail(ErrorCode::invalid_parameter, "lambda must be positive");
    const auto gallery_set = field<std::string>(body, "criteria_gallery", "full");
    if (gallery_set != "full" && gallery_set != "unlabeled")
      fail(ErrorCode::invalid_parameter, "criteria_gallery must be 'full' or 'unlabeled'");
    ac.criteria_gallery = gallery_set == "full" ? GallerySet::full : GallerySet::unlabeled;

    FeatureMatrix pool_data;
    std::vector<Index> columns;
    if (field<bool>(body, "holdout", false)) {
      Split split = make_split(*data, {SplitProtocol::half_split, 0.5, ac.seed});
      pool_data = std::move(split.train);
      columns = std::move(split.train_columns);
      s->test_probe = std::move(split.test_probe);
      s->test_gallery = std::move(split.test_gallery);
      s->milestones = field<std::vector<double>>(body, "milestones", {0.1, 0.2, 0.3, 0.4, 0.5, 1.0});
      for (double m : s->milestones)
        if (!(m > 0.0 && m <= 1.0)) fail(ErrorCode::invalid_parameter, "milestones must lie in (0, 1]");
    } else {
      pool_data = *data;
      for (Index i = 0; i < data->size(); ++i) columns.push_back(i);
    }
    for (std::size_t k = 0; k < columns.size(); ++k)
      (pool_data.views[k] == View::probe ? s->probe_samples : s->gallery_samples).push_back(columns[k]);

    ActiveDataset active_data = ActiveDataset::from_views(pool_data);
    const Index probes = active_data.probe.size();
    if (active_data.probe.size() == 0 || active_data.gallery.size() == 0)
      fail(ErrorCode::invalid_input, "dataset needs both probe and gallery samples");
    if (body.contains("budget_fraction")) {
      const auto f = field<double>(body, "budget_fraction", 0.0);
      if (!(f > 0.0 && f <= 1.0)) fail(ErrorCode::invalid_parameter, "budget_fraction must lie in (0, 1]");
      ac.budget = milestone_count(f, probes);
    } else {
      ac.budget = field<Index>(body, "budget", probes);
    }
    if (ac.budget < 1) fail(ErrorCode::invalid_parameter, "budget must be >= 1");

    s->active = std::make_unique<ActiveSession>(std::move(active_data), ac);
    s->created = s->updated = std::chrono::system_clock::now();
    s->id = "s" + std::to_string(next_session.fetch_add(1));
    {
      std::unique_lock lock(registry_mutex);
      sessions[s->id] = s;
    }
    reply(res, 201,
          json{{"session_id", s->id},
               {"dataset", name},
               {"policy", to_string(ac.policy)},
               {"seed", ac.seed},
               {"budget", ac.budget},
               {"step", 0},
               {"probe_count", probes},
               {"gallery_count", s->active->data().gallery.size()},
               {"holdout", s->test_probe.has_value()}});
  }

  void next_probe(const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(req.matches[1]);
    std::lock_guard lock(s->mutex);
    const Offer& offer = s->active->offer();

    Index offset = 0;
    Index limit = s->top_r;
    try {
      if (req.has_param("offset")) offset = std::stoll(req.get_param_value("offset"));
      if (req.has_param("limit")) limit = std::stoll(req.get_param_value("limit"));
    } catch (const std::exception&) {
      fail(ErrorCode::invalid_input, "offset and limit must be integers");
    }
    if (offset < 0 || limit < 1) fail(ErrorCode::invalid_input, "offset must be >= 0 and limit >= 1");

    const auto total = static_cast<Index>(offer.ranking.size());
    json ranking = json::array();
    for (Index k = offset; k < std::min(total, offset + limit); ++k) {
      const RankedCandidate& c = offer.ranking[static_cast<std::size_t>(k)];
      ranking.push_back({{"gallery_id", c.gallery_id},
                         {"sample", s->gallery_samples[static_cast<std::size_t>(c.gallery_id)]},
                         {"distance", c.distance},
                         {"rank", k + 1}});
    }

    json scores = nullptr;
    if (offer.scores) {
      const SelectionScores& sc = *offer.scores;
      const auto it = std::find(sc.probe_ids.begin(), sc.probe_ids.end(), offer.probe_id);
      const auto k = static_cast<Index>(it - sc.probe_ids.begin());
      scores = {{"diversity", sc.raw_diversity(k)},
                {"matching", sc.raw_matching(k)},
                {"entropy", sc.raw_entropy(k)},
                {"diversity_normalized", sc.diversity(k)},
                {"matching_normalized", sc.matching(k)},
                {"entropy_normalized", sc.entropy(k)},
                {"joint", sc.joint(k)},
                {"diversity_used", sc.diversity_used}};
    }

    reply(res, 200,
          json{{"session_id", s->id},
               {"probe_id", offer.probe_id},
               {"probe_sample", s->probe_samples[static_cast<std::size_t>(offer.probe_id)]},
               {"step", offer.step},
               {"budget", s->active->pool().budget},
               {"scores", scores},
               {"ranking", ranking},
               {"ranking_total", total},
               {"offset", offset}});
  }

  void submit_label(const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(req.matches[1]);
    const json body = parse_body(req);
    if (!body.contains("probe_id")) fail(ErrorCode::invalid_input, "probe_id is required");
    const auto probe = field<Index>(body, "probe_id", -1);
    const bool no_match = field<bool>(body, "no_match", false);
    std::optional<Index> gallery;
    if (!no_match) {
      if (!body.contains("gallery_id"))
        fail(ErrorCode::invalid_input, "gallery_id is required unless no_match is true");
      gallery = field<Index>(body, "gallery_id", -1);
    }

    std::lock_guard lock(s->mutex);
    const LabelOutcome out = s->active->label(probe, gallery, AnnotatorKind::human);
    s->updated = std::chrono::system_clock::now();
    if (!out.parked) s->last_update_elapsed = out.report.elapsed_seconds;
    record_milestones(*s);

    json reply_body{{"session_id", s->id},
                    {"step", s->active->pool().step},
                    {"budget", s->active->pool().budget},
                    {"parked", out.parked},
                    {"identity", out.event.identity},
                    {"report", report_json(out.report)}};
    if (out.report.drift_estimate > 1e-6) reply_body["warning"] = "inverse drift above 1e-6";
    reply(res, 200, reply_body);
  }

  static void record_milestones(LiveSession& s) {
    if (!s.test_probe) return;
    const ActivePool& pool = s.active->pool();
    while (s.milestone_results.size() < s.milestones.size()) {
      const double f = s.milestones[s.milestone_results.size()];
      const Index target = milestone_count(f, pool.probe_total);
      if (pool.step < target) break;
      json entry = cmc_json(compute_cmc(s.active->model(), *s.test_probe, *s.test_gallery));
      entry["fraction"] = f;
      entry["labeled"] = pool.step;
      s.milestone_results.push_back(std::move(entry));
    }
  }

  void metrics(const httplib::Request& req, httplib::Response& res) {
    auto s = find_session(req.matches[1]);
    std::lock_guard lock(s->mutex);
    const ActivePool& pool = s->active->pool();
    reply(res, 200,
          json{{"session_id", s->id},
               {"step", pool.step},
               {"budget", pool.budget},
               {"labeled", static_cast<Index>(pool.probe_labeled.size())},
               {"matched", s->active->matched_count()},
               {"parked", static_cast<Index>(pool.probe_parked.size())},
               {"classes", s->active->model().class_count()},
               {"exhausted", s->active->exhausted()},
               {"milestones_configured", s->milestones},
               {"milestones", s->milestone_results},
               {"last_update_elapsed",
                s->last_update_elapsed ? json(*s->last_update_elapsed) : json(nullptr)},
               {"created", epoch_seconds(s->created)},
               {"updated", epoch_seconds(s->updated)}});
  }

  void snapshot(const httplib::Request& req, httplib::Response& res) {
    if (!config.snapshot_dir) fail(ErrorCode::invalid_state, "service has no snapshot directory");
    auto s = find_session(req.matches[1]);
    std::lock_guard lock(s->mutex);
    const auto model_path = *config.snapshot_dir / (s->id + ".herm");
    const auto log_path = *config.snapshot_dir / (s->id + ".events.json");
    save_model(s->active->model(), model_path);

    json events = json::array();
    for (const AnnotationEvent& e : s->active->events())
      events.push_back({{"probe_id", e.probe_id},
                        {"gallery_id", e.gallery_id ? json(*e.gallery_id) : json(nullptr)},
                        {"identity", e.identity},
                        {"timestamp", epoch_seconds(e.timestamp)},
                        {"annotator", e.annotator == AnnotatorKind::oracle ? "oracle" : "human"}});
    const ActiveConfig& ac = s->active->config();
    json log{{"session_id", s->id},
             {"dataset", s->dataset},
             {"policy", to_string(ac.policy)},
             {"seed", ac.seed},
             {"lambda", ac.lambda},
             {"budget", ac.budget},
             {"events", events}};
    std::ofstream out(log_path);
    out << log.dump(2) << '\n';
    if (!out) fail(ErrorCode::io_error, "cannot write '" + log_path.string() + "'");
    reply(res, 200, json{{"model", model_path.string()}, {"events", log_path.string()}});
  }
};

Service::Service(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

Service::~Service() { stop(); }

void Service::add_dataset(const std::string& name, FeatureMatrix data) {
  data.validate();
  std::unique_lock lock(impl_->registry_mutex);
  impl_->datasets[name] = std::make_shared<const FeatureMatrix>(std::move(data));
}

int Service::bind(const std::string& host, int port) {
  int bound = -1;
  if (port == 0)
    bound = impl_->server.bind_to_any_port(host);
  else if (impl_->server.bind_to_port(host, port))
    bound = port;
  if (bound < 0)
    fail(ErrorCode::io_error, "cannot listen on " + host + ":" + std::to_string(port));
  impl_->bound = true;
  return bound;
}

void Service::run() {
  if (!impl_->bound) fail(ErrorCode::invalid_state, "bind() must succeed before run()");
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

bool Service::running() const { return impl_->server.is_running(); }

}  // namespace her
