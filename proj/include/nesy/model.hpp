#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "nesy/dataset.hpp"
#include "nesy/graph.hpp"

namespace nesy {

struct ArchConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  // One block per entry: 3x3 conv with this many channels, relu, 2x2 max-pool.
  std::vector<std::size_t> conv_channels{8, 16};
  std::size_t hidden = 64;
  std::size_t classes = 4;
  std::uint64_t seed = 42;

  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

nlohmann::json to_json(const ArchConfig& cfg);
ArchConfig arch_from_json(const nlohmann::json& j);
// Hash of everything but the seed: snapshots move between equal architectures.
std::uint64_t arch_fingerprint(const ArchConfig& cfg);

struct ParamSnapshot {
  std::uint64_t cycle = 0;
  std::uint64_t fingerprint = 0;
  std::vector<Tensor> values;  // declaration order
};

struct ForwardResult {
  Tensor probabilities;                // [n, classes]
  std::map<std::string, Tensor> taps;  // layer id -> [n, width]
};

// A CNN classifier whose parameters are shared Parameter objects, so the same
// model can be instantiated inside any number of graphs.
//
// Layer ids: conv<i>, pool<i> (i from 1), flat, hidden, logits, probs. The
// probe tap is "flat", the activation right before the dense head.
class Model {
 public:
  explicit Model(ArchConfig cfg, std::vector<std::string> class_names = {});

  const ArchConfig& arch() const noexcept { return cfg_; }
  std::uint64_t fingerprint() const noexcept { return fingerprint_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }
  const std::vector<ParameterPtr>& parameters() const noexcept { return params_; }
  const std::vector<std::string>& layer_ids() const noexcept { return layer_ids_; }
  static constexpr const char* probe_layer() { return "flat"; }
  std::size_t layer_width(const std::string& layer) const;
  Shape input_shape(std::size_t batch) const { return {batch, cfg_.height, cfg_.width, cfg_.channels}; }

  struct Nodes {
    std::map<std::string, NodeId> layers;
    NodeId logits = 0;
    NodeId probabilities = 0;
  };
  // Appends the network to `g` on top of an [n,h,w,c] input node.
  Nodes build(Graph& g, NodeId input) const;

  ForwardResult forward_with_taps(const Tensor& batch) const;
  Tensor predict(const Tensor& batch) const;

  ParamSnapshot snapshot(std::uint64_t cycle = 0) const;
  // Throws Conflict on a fingerprint or shape mismatch; nothing is modified then.
  void restore(const ParamSnapshot& snap);
  std::uint64_t parameter_hash() const;

  // Marks the conv layers (frozen=true) or everything (frozen=false) as
  // (non-)trainable.
  void set_conv_frozen(bool frozen);

 private:
  ArchConfig cfg_;
  std::uint64_t fingerprint_;
  std::vector<std::string> class_names_;
  std::vector<ParameterPtr> params_;
  std::vector<std::string> layer_ids_;
  std::map<std::string, std::size_t> layer_widths_;
};

struct TaskTrainConfig {
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double learning_rate = 3e-3;
  std::uint64_t seed = 7;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Minibatch Adam on mean cross-entropy; mutates the model in place.
std::vector<EpochRecord> train_task(Model& model, const Dataset& data, const TaskTrainConfig& cfg);
// Fraction of examples whose argmax prediction equals the label.
double task_accuracy(const Model& model, const Dataset& data);

// Cross-entropy graph pieces shared by task and constraint training.
// Returns mean over rows of -log(sum_k probs * onehot).
NodeId cross_entropy(Graph& g, NodeId probabilities, NodeId onehot);
Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

struct CheckpointMeta {
  std::uint64_t cycle = 0;
  std::uint64_t fingerprint = 0;
  std::vector<std::string> class_names;
  std::string created;
};

// Container: magic, meta JSON (cycle, fingerprint, class names, creation
// time, parameter shapes), then little-endian float64 payloads in order.
void save_checkpoint(const std::filesystem::path& path, const ParamSnapshot& snap, const CheckpointMeta& meta);
std::pair<ParamSnapshot, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

std::string utc_timestamp();

}  // namespace nesy
