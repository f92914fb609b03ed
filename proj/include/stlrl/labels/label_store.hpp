#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stlrl/stl/trace.hpp"

namespace stlrl::labels {

/// On-disk queue shared by the orchestrator and the labeling server.
///
///   <root>/queue.jsonl     one {"id","iteration"} line per enqueued task
///   <root>/tasks/<id>.json task payload (trace + display geometry)
///   <root>/labels.jsonl    one {"id","label","labeled_at"} line per label
///   <root>/status.json     orchestrator progress
///
/// The orchestrator is the only writer of queue, tasks and status; the
/// server is the only writer of labels, serialized through this object.
class LabelStore {
 public:
  explicit LabelStore(std::filesystem::path root);

  struct Task {
    std::string id;
    std::size_t iteration = 0;
    nlohmann::json geometry;  // display metadata, passed through verbatim
    stl::Trace trace;
    std::optional<int> label;
    std::string labeled_at;
  };

  void enqueue(const stl::Trace& trace, std::size_t iteration, const nlohmann::json& geometry);
  bool contains(const std::string& id) const;

  /// Unlabeled tasks in enqueue order.
  std::vector<Task> pending() const;
  std::optional<Task> get(const std::string& id) const;

  enum class PostResult { Stored, Unchanged, Conflict, NotFound, Invalid };
  /// First label wins; re-posting the same label is a no-op.
  PostResult post_label(const std::string& id, int label);

  struct LabelRecord {
    int label = 0;
    std::string labeled_at;
  };
  std::map<std::string, LabelRecord> labels() const;
  std::size_t task_count() const;

  struct QueueEntry {
    std::string id;
    std::size_t iteration;
  };
  /// Enqueued ids without loading payloads.
  std::vector<QueueEntry> queue() const;

  void write_status(const nlohmann::json& status);
  nlohmann::json read_status() const;

  const std::filesystem::path& root() const { return root_; }

 private:
  Task load_task(const QueueEntry& e, const std::map<std::string, LabelRecord>& labels) const;

  std::filesystem::path root_;
  mutable std::mutex write_mutex_;
};

/// JSON form of a trace: {"id","dims","dt","samples":[[...],...]}.
nlohmann::json trace_to_json(const stl::Trace& tr);
stl::Trace trace_from_json(const nlohmann::json& j);

/// Writes text to a sibling temp file and renames it over path.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace stlrl::labels
