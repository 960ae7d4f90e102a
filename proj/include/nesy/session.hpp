#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "nesy/evaluator.hpp"
#include "nesy/knowledge.hpp"

namespace nesy {

struct SessionOptions {
  std::uint64_t seed = 0;
  std::optional<SemanticsConfig> semantics;
  // Extra dataset directories loaded after the scenario datasets.
  std::vector<std::filesystem::path> datasets;
  // Progress lines during initialization; may be null.
  std::ostream* log = nullptr;
};

struct QueryResult {
  std::string formula;  // canonical text
  EvalResult result;
};

nlohmann::json to_json(const QueryResult& q);

// One workbench: model, predicate registry, knowledge base, datasets and
// checkpoints, persisted under a directory:
//
//   session.json  semantics.json  registry.json  kb.txt
//   datasets/<name>/   checkpoints/cycle-<n>/   history/job-<n>.jsonl
//
// The model parameters always equal checkpoint `cycle()`. Every mutation is
// written through and bumps epoch(). While a training job runs, everything
// except training_status() throws Conflict("training_in_progress").
class Session {
 public:
  // Builds the zebra/quagga scenario in `dir` (which must not hold a session)
  // and saves it as cycle 0.
  static std::unique_ptr<Session> init(const std::filesystem::path& dir, const SessionOptions& options = {});
  // Throws CorruptSession when the directory cannot be loaded.
  static std::unique_ptr<Session> open(const std::filesystem::path& dir);
  static bool exists(const std::filesystem::path& dir);

  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::filesystem::path& dir() const { return dir_; }
  std::uint64_t epoch() const { return epoch_.load(); }
  std::uint64_t cycle() const;
  bool training() const { return training_.load(); }

  nlohmann::json summary() const;

  // Loads a dataset directory and copies it into the session.
  nlohmann::json load_dataset(const std::filesystem::path& path);
  // Concept manifests: example ids resolve against the loaded datasets.
  ProbeReport add_concept(const nlohmann::json& manifest);
  std::map<std::string, ProbeReport> add_group(const nlohmann::json& manifest);

  QueryResult query(const std::string& text) const;
  // Local explanation of `text` on one example.
  QueryResult explain(const std::string& text, const std::string& example_id) const;

  nlohmann::json kb_json() const;
  std::string add_rule(const std::string& text);
  void remove_rule(const std::string& id);
  void set_rule_enabled(const std::string& id, bool enabled);
  SatReport sat() const;

  // Starts a background job; returns its id. `overrides` is merged onto the
  // session's default training config.
  std::string start_training(const nlohmann::json& overrides = nlohmann::json::object());
  nlohmann::json training_status() const;
  // Blocks until the current job (if any) has finished.
  void wait_for_training();
  void cancel_training();
  TrainConfig train_defaults() const;

  nlohmann::json checkpoints() const;
  // Restores parameters and KB of `cycle`; returns the new sat report.
  SatReport revert(std::uint64_t cycle);

  SemanticsConfig semantics() const;
  void set_semantics(const SemanticsConfig& cfg);

  // Self-contained report; `timestamp` is its only time-dependent field.
  nlohmann::json report() const;
  void export_report(const std::filesystem::path& path) const;

 private:
  explicit Session(std::filesystem::path dir);

  void ensure_idle() const;
  void persist_state() const;
  void persist_registry() const;
  void persist_kb() const;
  void persist_semantics() const;
  void bump();
  SatReport sat_locked() const;
  void run_job(std::string job, TrainConfig cfg, std::uint64_t from_cycle, std::uint64_t to_cycle);
  void finish_job(const nlohmann::json& status);

  std::filesystem::path dir_;
  std::uint64_t seed_ = 0;
  std::unique_ptr<Model> model_;
  PredicateRegistry registry_;
  KnowledgeBase kb_;
  DatasetTable datasets_;
  SemanticsConfig semantics_;
  TrainConfig train_defaults_;
  std::unique_ptr<CheckpointStore> store_;
  std::uint64_t cycle_ = 0;
  std::uint64_t next_job_ = 1;
  std::atomic<std::uint64_t> epoch_{0};

  mutable std::shared_mutex mutex_;
  std::atomic<bool> training_{false};
  std::atomic<bool> cancel_{false};
  std::mutex worker_mutex_;
  std::thread worker_;
  mutable std::mutex status_mutex_;
  nlohmann::json status_;
};

// Checks the shape of an exported report; returns a list of problems.
std::vector<std::string> check_report_schema(const nlohmann::json& report);

}  // namespace nesy
