#pragma once

#include <memory>
#include <string>
#include <thread>

#include "json.hpp"
#include "stlrl/labels/label_store.hpp"

namespace httplib {
class Server;
}

namespace stlrl::server {

/// Status record: the orchestrator's status.json plus pending and labeled
/// counts for the current iteration.
nlohmann::json status_record(const labels::LabelStore& store);

/// Task as exposed over HTTP. Holds the trace and the display geometry from
/// the config, never anything derived from the hidden constraint.
nlohmann::json task_json(const labels::LabelStore::Task& t, bool include_trace);

/// HTTP labeling API over a label store:
///
///   GET  /api/status
///   GET  /api/traces/pending
///   GET  /api/traces/{id}
///   POST /api/traces/{id}/label   {"label": 0|1}
class LabelServer {
 public:
  explicit LabelServer(labels::LabelStore& store);
  ~LabelServer();
  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  /// Binds host:port (port 0 picks a free one) and serves on a background
  /// thread. Returns the bound port; throws std::runtime_error on failure.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop() is called from elsewhere.
  void listen(const std::string& host, int port);
  void stop();

 private:
  void routes();

  labels::LabelStore& store_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
};

}  // namespace stlrl::server
