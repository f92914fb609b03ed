#include "stlrl/labels/label_store.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace stlrl::labels {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Lines without a trailing newline are a write still in progress.
std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::size_t start = 0;
  while (start < text.size()) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) break;
    const std::string line = text.substr(start, nl - start);
    start = nl + 1;
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

void append_line(const fs::path& path, const std::string& line) {
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw std::runtime_error("cannot append to " + path.string());
  const std::string data = line + "\n";
  const bool ok = std::fwrite(data.data(), 1, data.size(), f) == data.size() && std::fflush(f) == 0;
  std::fclose(f);
  if (!ok) throw std::runtime_error("short write to " + path.string());
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool safe_id(const std::string& id) {
  if (id.empty() || id.size() > 200) return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) return false;
  }
  return id != "." && id != "..";
}

}  // namespace

json trace_to_json(const stl::Trace& tr) {
  json samples = json::array();
  for (std::size_t t = 0; t < tr.size(); ++t) {
    const auto s = tr.sample(t);
    samples.push_back(std::vector<double>(s.begin(), s.end()));
  }
  return {{"id", tr.id()}, {"dims", tr.dims()}, {"dt", tr.dt()}, {"samples", std::move(samples)}};
}

stl::Trace trace_from_json(const json& j) {
  stl::Trace tr(j.at("dims").get<std::vector<std::string>>(), j.at("dt").get<double>(), j.at("id").get<std::string>());
  for (const auto& row : j.at("samples")) tr.push_back(row.get<std::vector<double>>());
  return tr;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

LabelStore::LabelStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_ / "tasks"); }

std::vector<LabelStore::QueueEntry> LabelStore::queue() const {
  std::vector<QueueEntry> out;
  for (const auto& j : read_jsonl(root_ / "queue.jsonl")) {
    out.push_back({j.at("id").get<std::string>(), j.at("iteration").get<std::size_t>()});
  }
  return out;
}

std::map<std::string, LabelStore::LabelRecord> LabelStore::labels() const {
  std::map<std::string, LabelRecord> out;
  for (const auto& j : read_jsonl(root_ / "labels.jsonl")) {
    // First record wins; later lines for the same id cannot be written by
    // post_label but are ignored for robustness.
    out.try_emplace(j.at("id").get<std::string>(),
                    LabelRecord{j.at("label").get<int>(), j.at("labeled_at").get<std::string>()});
  }
  return out;
}

void LabelStore::enqueue(const stl::Trace& trace, std::size_t iteration, const json& geometry) {
  if (!safe_id(trace.id())) throw std::invalid_argument("trace id '" + trace.id() + "' is not usable as a task id");
  if (contains(trace.id())) return;
  json task = {{"id", trace.id()}, {"iteration", iteration}, {"geometry", geometry}, {"trace", trace_to_json(trace)}};
  write_file_atomic(root_ / "tasks" / (trace.id() + ".json"), task.dump());
  append_line(root_ / "queue.jsonl", json{{"id", trace.id()}, {"iteration", iteration}}.dump());
}

bool LabelStore::contains(const std::string& id) const {
  for (const auto& e : queue()) {
    if (e.id == id) return true;
  }
  return false;
}

std::size_t LabelStore::task_count() const { return queue().size(); }

LabelStore::Task LabelStore::load_task(const QueueEntry& e, const std::map<std::string, LabelRecord>& labels) const {
  std::ifstream in(root_ / "tasks" / (e.id + ".json"), std::ios::binary);
  if (!in) throw std::runtime_error("task payload missing for '" + e.id + "'");
  const json j = json::parse(in);
  Task t{e.id, e.iteration, j.value("geometry", json::object()), trace_from_json(j.at("trace")), std::nullopt, {}};
  if (auto it = labels.find(e.id); it != labels.end()) {
    t.label = it->second.label;
    t.labeled_at = it->second.labeled_at;
  }
  return t;
}

std::vector<LabelStore::Task> LabelStore::pending() const {
  const auto done = labels();
  std::vector<Task> out;
  for (const auto& e : queue()) {
    if (!done.count(e.id)) out.push_back(load_task(e, done));
  }
  return out;
}

std::optional<LabelStore::Task> LabelStore::get(const std::string& id) const {
  for (const auto& e : queue()) {
    if (e.id == id) return load_task(e, labels());
  }
  return std::nullopt;
}

LabelStore::PostResult LabelStore::post_label(const std::string& id, int label) {
  if (label != 0 && label != 1) return PostResult::Invalid;
  std::lock_guard lock(write_mutex_);
  if (!contains(id)) return PostResult::NotFound;
  const auto existing = labels();
  if (auto it = existing.find(id); it != existing.end()) {
    return it->second.label == label ? PostResult::Unchanged : PostResult::Conflict;
  }
  append_line(root_ / "labels.jsonl", json{{"id", id}, {"label", label}, {"labeled_at", utc_now()}}.dump());
  return PostResult::Stored;
}

void LabelStore::write_status(const json& status) { write_file_atomic(root_ / "status.json", status.dump(2)); }

json LabelStore::read_status() const {
  std::ifstream in(root_ / "status.json", std::ios::binary);
  if (!in) return json::object();
  try {
    return json::parse(in);
  } catch (const json::exception&) {
    return json::object();
  }
}

}  // namespace stlrl::labels
