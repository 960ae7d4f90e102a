#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "nesy/dataset.hpp"
#include "nesy/fuzzy.hpp"
#include "nesy/graph.hpp"
#include "nesy/grounding.hpp"
#include "nesy/model.hpp"
#include "nesy/query.hpp"

namespace nesy {

// Named datasets that quantifiers can bind. Every change bumps the epoch.
class DatasetTable {
 public:
  void put(std::shared_ptr<const Dataset> d);
  void put(Dataset d) { put(std::make_shared<const Dataset>(std::move(d))); }
  bool remove(const std::string& name);
  bool contains(const std::string& name) const { return sets_.count(name) > 0; }
  std::shared_ptr<const Dataset> get(const std::string& name) const;
  // First match in dataset-name order.
  const ExampleImage* find_example(const std::string& id) const;
  std::vector<std::string> names() const;
  std::uint64_t epoch() const { return epoch_; }

 private:
  std::map<std::string, std::shared_ptr<const Dataset>> sets_;
  std::uint64_t epoch_ = 0;
};

Vocabulary make_vocabulary(const PredicateRegistry& registry, const DatasetTable& datasets);
// Parse + validate against the registry and datasets.
ValidatedFormula validate_text(const std::string& text, const PredicateRegistry& registry,
                               const DatasetTable& datasets);

struct EvalOptions {
  // Examples per model forward inside a quantifier; 0 means the whole dataset.
  std::size_t chunk_size = 0;
  std::size_t max_trace_examples = 4096;
  std::size_t worst_k = 16;
};

constexpr int kMaxQuantifierNesting = 2;
constexpr std::size_t kMaxQuantifierGrid = 65536;

struct ExampleTruth {
  std::string id;  // comma-joined ids for nested quantifiers, outermost first
  double truth = 0.0;
};

// Mirrors the formula tree. Sub-formulas with free variables report the mean
// truth over their variable grid and set `open`.
struct TruthTrace {
  std::string op;  // predicate, not, and, or, implies, forall, exists
  std::string text;
  SourceSpan span;
  double truth = 0.0;
  bool open = false;
  std::vector<TruthTrace> children;
  // Quantifiers: body truth per bound example (up to the trace cap) and the
  // lowest-truth examples, ascending.
  std::vector<ExampleTruth> examples;
  bool examples_truncated = false;
  std::vector<ExampleTruth> worst_examples;

  std::size_t node_count() const;
};

nlohmann::json to_json(const TruthTrace& t);

struct EvalResult {
  double truth = 0.0;
  TruthTrace trace;
};

class EvalPlan;
EvalResult evaluate(const EvalPlan& plan, const Model& model);

class EvalPlan {
 public:
  const ValidatedFormula& formula() const { return formula_; }
  const SemanticsConfig& semantics() const { return semantics_; }
  // (variable, dataset) per quantifier, in pre-order.
  const std::vector<std::pair<std::string, std::string>>& bindings() const { return bindings_; }
  std::uint64_t registry_epoch() const { return registry_epoch_; }
  std::uint64_t dataset_epoch() const { return dataset_epoch_; }

  // Scalar truth node; differentiable w.r.t. trainable parameters.
  NodeId root() const { return slots_.front().node; }
  Graph& graph() { return *graph_; }
  const Graph& graph() const { return *graph_; }

 private:
  friend class PlanBuilder;
  friend EvalResult evaluate(const EvalPlan& plan, const Model& model);

  struct Var {
    std::string name;
    std::shared_ptr<const Dataset> dataset;
  };
  struct Slot {
    const Formula* formula = nullptr;
    NodeId node = 0;
    std::vector<Var> context;
    std::vector<std::size_t> children;
  };

  TruthTrace trace(std::size_t slot) const;

  ValidatedFormula formula_;
  SemanticsConfig semantics_;
  EvalOptions options_;
  std::vector<std::pair<std::string, std::string>> bindings_;
  std::unique_ptr<Graph> graph_;
  std::vector<Slot> slots_;  // slot 0 is the root
  const PredicateRegistry* registry_ = nullptr;
  const DatasetTable* datasets_ = nullptr;
  const Model* model_ = nullptr;
  std::uint64_t registry_epoch_ = 0;
  std::uint64_t dataset_epoch_ = 0;
  std::uint64_t fingerprint_ = 0;
  mutable std::uint64_t evaluated_hash_ = 0;
  mutable std::mutex mutex_;
};

// Builds the plan graph: one model forward per bound dataset (chunked when
// requested) and one per referenced example. The plan keeps pointers to the
// registry, datasets and model, which must outlive it.
std::unique_ptr<EvalPlan> compile(const ValidatedFormula& formula, const PredicateRegistry& registry,
                                  const Model& model, const DatasetTable& datasets,
                                  const SemanticsConfig& semantics, const EvalOptions& options = {});

// Re-runs the graph if the model parameters changed since the last call.
// Throws Conflict("stale_plan") when the registry or datasets changed or the
// model is not the one the plan was compiled for.
EvalResult evaluate(const EvalPlan& plan, const Model& model);

// Evaluates one example: a leading quantifier is dropped and its variable
// bound to the example; otherwise the single example reference that names no
// known example is replaced by it. The result is validated before evaluation.
EvalResult explain_local(const FormulaPtr& formula, const std::string& example_id,
                         const PredicateRegistry& registry, const Model& model, const DatasetTable& datasets,
                         const SemanticsConfig& semantics);

}  // namespace nesy
