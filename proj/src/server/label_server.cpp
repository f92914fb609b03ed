#include "stlrl/server/label_server.hpp"

#include <stdexcept>

#include "httplib.h"

namespace stlrl::server {

using nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json error_body(const std::string& code, const std::string& message) {
  return {{"error", code}, {"message", message}};
}

}  // namespace

json status_record(const labels::LabelStore& store) {
  const json s = store.read_status();
  const std::size_t iteration = s.value("iteration", std::size_t{0});
  const auto labels = store.labels();
  std::size_t pending = 0, labeled = 0;
  for (const auto& e : store.queue()) {
    const bool done = labels.count(e.id) > 0;
    if (!done) ++pending;
    if (done && e.iteration == iteration) ++labeled;
  }
  return {{"iteration", iteration},
          {"stage", s.value("stage", std::string{"idle"})},
          {"pending", pending},
          {"labeled", labeled},
          {"labeled_total", labels.size()},
          {"alpha_history", s.value("alpha_history", json::array())},
          {"current_mcr", s.value("current_mcr", json(nullptr))},
          {"converged", s.value("converged", false)}};
}

json task_json(const labels::LabelStore::Task& t, bool include_trace) {
  json j = {{"id", t.id},
            {"iteration", t.iteration},
            {"geometry", t.geometry},
            {"status", t.label ? "labeled" : "pending"},
            {"samples", t.trace.size()}};
  if (t.label) {
    j["label"] = *t.label;
    j["labeled_at"] = t.labeled_at;
  }
  if (include_trace) j["trace"] = labels::trace_to_json(t.trace);
  return j;
}

LabelServer::LabelServer(labels::LabelStore& store) : store_(store), http_(std::make_unique<httplib::Server>()) {
  routes();
}

LabelServer::~LabelServer() { stop(); }

void LabelServer::routes() {
  http_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  http_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply(res, 500, error_body("internal", what));
  });
  http_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  http_->Get("/api/status", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, status_record(store_));
  });

  http_->Get("/api/traces/pending", [this](const httplib::Request&, httplib::Response& res) {
    json tasks = json::array();
    for (const auto& t : store_.pending()) tasks.push_back(task_json(t, true));
    reply(res, 200, {{"tasks", tasks}});
  });

  http_->Get(R"(/api/traces/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const auto t = store_.get(id);
    if (!t) return reply(res, 404, error_body("not_found", "unknown trace '" + id + "'"));
    reply(res, 200, task_json(*t, true));
  });

  http_->Post(R"(/api/traces/([^/]+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      return reply(res, 400, error_body("bad_request", "body must be JSON"));
    }
    if (!body.is_object() || !body.contains("label") || !body["label"].is_number_integer()) {
      return reply(res, 400, error_body("bad_request", "body must be {\"label\": 0|1}"));
    }
    const int label = body["label"].get<int>();
    switch (store_.post_label(id, label)) {
      case labels::LabelStore::PostResult::Stored:
        return reply(res, 200, {{"id", id}, {"label", label}, {"result", "stored"}});
      case labels::LabelStore::PostResult::Unchanged:
        return reply(res, 200, {{"id", id}, {"label", label}, {"result", "unchanged"}});
      case labels::LabelStore::PostResult::Conflict: {
        const int existing = store_.labels().at(id).label;
        json e = error_body("conflict", "trace '" + id + "' is already labeled " + std::to_string(existing));
        e["label"] = existing;
        return reply(res, 409, e);
      }
      case labels::LabelStore::PostResult::NotFound:
        return reply(res, 404, error_body("not_found", "unknown trace '" + id + "'"));
      case labels::LabelStore::PostResult::Invalid:
        return reply(res, 400, error_body("bad_request", "label must be 0 or 1"));
    }
  });
}

int LabelServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { http_->listen_after_bind(); });
  http_->wait_until_ready();
  return bound;
}

void LabelServer::listen(const std::string& host, int port) {
  if (!http_->listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

void LabelServer::stop() {
  if (http_->is_running()) http_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace stlrl::server
