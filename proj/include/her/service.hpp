#pragma once

// HTTP/JSON front end for live active re-identification sessions.
//
//   POST /sessions                  create a session on a registered dataset
//   GET  /sessions/{id}/next-probe  current offer (idempotent until labelled)
//   POST /sessions/{id}/labels      submit a match or no-match; returns after
//                                   the incremental update
//   GET  /sessions/{id}/metrics     progress snapshot
//   POST /sessions/{id}/snapshot    write model + event log to snapshot_dir
//   GET  /healthz
//
// Request and response bodies are described in docs/api.json.

#include "her/types.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace her {

struct ServiceConfig {
  Index top_r = 50;
  std::optional<std::filesystem::path> static_dir;
  std::optional<std::filesystem::path> snapshot_dir;
};

class Service {
 public:
  explicit Service(ServiceConfig config = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void add_dataset(const std::string& name, FeatureMatrix data);

  // Binds the listening socket; port 0 picks a free port. Returns the bound
  // port. Throws io_error when the address is unavailable.
  int bind(const std::string& host, int port);
  // Serves until stop(). Requires a successful bind().
  void run();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace her
