#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nesy/evaluator.hpp"

namespace nesy {

enum class RuleOrigin { user, initial };
std::string to_string(RuleOrigin o);

struct Rule {
  std::string id;
  ValidatedFormula formula;
  bool enabled = true;
  RuleOrigin origin = RuleOrigin::user;
};

class KnowledgeBase {
 public:
  // Ids are r1, r2, ... and never reused within one KB.
  std::string add_rule(const ValidatedFormula& formula, RuleOrigin origin = RuleOrigin::user);
  void remove_rule(const std::string& id);
  void set_enabled(const std::string& id, bool enabled);
  const Rule& rule(const std::string& id) const;
  const std::vector<Rule>& rules() const { return rules_; }
  std::size_t enabled_count() const;
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t next_id() const { return next_id_; }
  // Ids below n are never handed out again.
  void reserve_ids(std::uint64_t n) { next_id_ = std::max(next_id_, n); }

  // kb.txt: one canonical formula per line, each preceded by a
  // "#@ id=<id> enabled=<bool> origin=<origin>" line.
  std::string to_text() const;
  // Lines without a "#@" header get fresh ids. Every formula is validated.
  static KnowledgeBase from_text(const std::string& text, const Vocabulary& vocab);

 private:
  std::vector<Rule> rules_;
  std::uint64_t next_id_ = 1;
  std::uint64_t epoch_ = 0;
};

struct RuleSat {
  std::string id;
  std::string text;
  double sat = 0.0;
};

struct SatReport {
  std::vector<RuleSat> rules;  // enabled rules, KB order
  double aggregate = 1.0;
  bool empty = true;
  std::string timestamp;
  std::uint64_t cycle = 0;
};

nlohmann::json to_json(const SatReport& r, bool with_timestamp = true);
SatReport sat_report_from_json(const nlohmann::json& j);

// Evaluates every enabled rule on the full bound datasets. Compilation errors
// are rethrown as DomainError naming the rule id.
SatReport sat_report(const KnowledgeBase& kb, const PredicateRegistry& registry, const Model& model,
                     const DatasetTable& datasets, const SemanticsConfig& semantics, std::uint64_t cycle = 0);

struct TrainConfig {
  double learning_rate = 2e-3;
  std::size_t max_steps = 500;
  // Examples sampled per quantified dataset (and per task batch) each step.
  std::size_t batch_size = 64;
  double lambda = 0.3;  // weight of the task-retention term
  double tau = 0.95;    // stop once the full-set aggregate reaches this
  std::uint64_t seed = 0;
  std::size_t report_every = 10;
  std::string task_dataset = "train";
  // Keep the conv layers fixed while retraining.
  bool freeze_conv = false;
  // Test hook: make the objective non-finite at this step.
  std::optional<std::size_t> inject_nan_at;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct StepRecord {
  std::size_t step = 0;
  double objective = 0.0;
  double batch_aggregate = 0.0;
  // Full-set evaluation, every report_every steps and at the end.
  bool full = false;
  std::map<std::string, double> rules;
  double aggregate = 0.0;
  double task_accuracy = 0.0;
};

nlohmann::json to_json(const StepRecord& r);

struct CycleCheckpoint {
  std::uint64_t cycle = 0;
  ParamSnapshot params;
  std::string kb_text;
  SatReport report;                 // state of this checkpoint
  std::optional<SatReport> before;  // report of the cycle it was trained from
  std::string created;
};

// checkpoints/cycle-<n>/{params.bin, kb.txt, report.json}
class CheckpointStore {
 public:
  explicit CheckpointStore(std::filesystem::path root);
  const std::filesystem::path& root() const { return root_; }

  void save(const CycleCheckpoint& c);
  CycleCheckpoint load(std::uint64_t cycle) const;
  bool contains(std::uint64_t cycle) const;
  std::vector<std::uint64_t> cycles() const;
  std::optional<std::uint64_t> latest() const;

 private:
  std::filesystem::path dir(std::uint64_t cycle) const;
  std::filesystem::path root_;
};

struct TrainProgress {
  std::function<void(const StepRecord&)> on_step;
  const std::atomic<bool>* cancel = nullptr;
};

struct TrainResult {
  std::vector<StepRecord> history;
  SatReport before;
  SatReport after;
  bool reached_tau = false;
  bool cancelled = false;
};

// Gradient ascent on (1 - lambda) * Sat_A + lambda * (-cross-entropy) over the
// enabled rules. Quantified datasets are resampled to batch_size examples per
// step. On a non-finite objective or gradient the parameters are restored and
// NumericError is thrown.
TrainResult train_to_satisfy(Model& model, const KnowledgeBase& kb, const PredicateRegistry& registry,
                             const DatasetTable& datasets, const SemanticsConfig& semantics,
                             const TrainConfig& cfg, const TrainProgress& progress = {});

}  // namespace nesy
