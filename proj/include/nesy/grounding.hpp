#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nesy/dataset.hpp"
#include "nesy/graph.hpp"
#include "nesy/model.hpp"

namespace nesy {

enum class Squash { sigmoid, softmax };

// A linear head on a model layer: sigmoid heads have one column and ground a
// single concept; softmax heads ground one exclusive group, a column per member.
struct ProbeHead {
  std::string id;
  std::string layer;
  Squash squash = Squash::sigmoid;
  ParameterPtr weights;  // [width, columns]
  ParameterPtr bias;     // [columns]
  std::vector<std::string> members;
};

struct PredicateBinding {
  enum class Kind { class_output, probe };
  Kind kind = Kind::class_output;
  std::size_t index = 0;  // class index, or column of the head
  std::string head;       // probe only
};

struct ProbeReport {
  double train_accuracy = 0.0;
  double held_out_accuracy = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t epochs = 0;
};

nlohmann::json to_json(const ProbeReport& r);

struct ProbeTrainConfig {
  std::size_t epochs = 300;
  double learning_rate = 0.02;
  double held_out_fraction = 0.2;
  double weight_decay = 1e-3;
  std::uint64_t split_seed = 17;
  // Test hook: skip the disjointness check on positive/negative ids.
  bool allow_overlap = false;
};

class PredicateRegistry {
 public:
  void register_class_predicate(const std::string& name, std::size_t class_index, std::size_t num_classes);
  // Installs a trained head and binds every member to its column.
  void install_head(ProbeHead head, const std::map<std::string, ProbeReport>& reports);

  bool contains(const std::string& name) const { return bindings_.count(name) > 0; }
  const PredicateBinding& binding(const std::string& name) const;
  const ProbeHead& head(const std::string& id) const;
  std::vector<std::string> names() const;
  // Exclusive groups: head id -> ordered member names.
  std::map<std::string, std::vector<std::string>> groups() const;
  const std::map<std::string, ProbeReport>& reports() const { return reports_; }
  const std::map<std::string, ProbeHead>& heads() const { return heads_; }

  // Probe parameters take part in constraint training only when trainable.
  void set_probes_trainable(bool trainable);
  bool probes_trainable() const { return probes_trainable_; }

  // Bumped by every change; evaluation plans record it.
  std::uint64_t epoch() const { return epoch_; }

  nlohmann::json to_json() const;
  static PredicateRegistry from_json(const nlohmann::json& j);

 private:
  void claim(const std::string& name) const;

  std::map<std::string, PredicateBinding> bindings_;
  std::map<std::string, ProbeHead> heads_;
  std::map<std::string, ProbeReport> reports_;
  bool probes_trainable_ = false;
  std::uint64_t epoch_ = 0;
};

// Features and integer labels for head fitting.
struct LinearHead {
  Tensor weights;  // [width, columns]
  Tensor bias;     // [columns]
  Squash squash = Squash::sigmoid;
};

// Fits a logistic (sigmoid, labels 0/1, one column) or softmax (labels in
// [0,k)) head by full-batch Adam on cross-entropy with L2 weight decay.
LinearHead fit_linear_head(const Tensor& features, const std::vector<int>& labels, std::size_t classes,
                           Squash squash, const ProbeTrainConfig& cfg);
// Truth matrix [n, columns] of a head on features.
Tensor apply_head(const LinearHead& head, const Tensor& features);
double head_accuracy(const LinearHead& head, const Tensor& features, const std::vector<int>& labels);

// Trains a sigmoid probe for `name` on the model's `layer` activations; the
// model is only read.
ProbeReport train_probe(PredicateRegistry& registry, const Model& model, const std::string& name,
                        const std::string& layer, const ConceptExampleSet& sets,
                        const ProbeTrainConfig& cfg = {});

// Trains one softmax head whose columns are the group members; member i's
// examples are the positives of sets[i].
std::map<std::string, ProbeReport> register_exclusive_group(PredicateRegistry& registry, const Model& model,
                                                            const std::vector<std::string>& names,
                                                            const std::string& layer,
                                                            const std::vector<ConceptExampleSet>& sets,
                                                            const ProbeTrainConfig& cfg = {});

// Builds truth nodes for predicates inside one graph; heads shared by several
// predicates are evaluated once.
class Grounder {
 public:
  Grounder(const PredicateRegistry& registry, Graph& graph, const Model::Nodes& nodes)
      : registry_(registry), graph_(graph), nodes_(nodes) {}

  // Truth vector [n] for the batch the model nodes were built on.
  NodeId truth(const std::string& predicate);

 private:
  const PredicateRegistry& registry_;
  Graph& graph_;
  const Model::Nodes& nodes_;
  std::map<std::string, NodeId> head_outputs_;
};

// Truth values of one predicate on a batch of images.
Tensor ground_values(const PredicateRegistry& registry, const Model& model, const std::string& predicate,
                     const Tensor& batch);

struct ConceptManifest {
  std::string concept_name;
  std::string layer;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
};
// {concept, layer, positives: [ids], negatives: [ids]}; layer defaults to the probe tap.
ConceptManifest parse_concept_manifest(const nlohmann::json& j);
nlohmann::json to_json(const ConceptManifest& m);

struct GroupManifest {
  std::string layer;
  std::vector<ConceptManifest> members;  // negatives unused
};
// {layer, members: [{concept, positives: [ids]}, ...]}
GroupManifest parse_group_manifest(const nlohmann::json& j);
nlohmann::json to_json(const GroupManifest& m);

}  // namespace nesy
