#include "nesy/model.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <numeric>

#include "nesy/error.hpp"
#include "nesy/optimizer.hpp"
#include "nesy/rng.hpp"

namespace nesy {

namespace {

constexpr char kMagic[8] = {'N', 'E', 'S', 'Y', 'C', 'K', 'P', '1'};

ParameterPtr he_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-limit, limit);
  return std::make_shared<Parameter>(name, std::move(t));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void ArchConfig::validate() const {
  if (conv_channels.empty()) throw DomainError("architecture needs at least one conv block");
  if (classes < 2) throw DomainError("architecture needs at least 2 output classes");
  if (height == 0 || width == 0 || channels == 0 || hidden == 0) throw DomainError("architecture has a zero dimension");
  std::size_t h = height, w = width;
  for (std::size_t c : conv_channels) {
    if (c == 0) throw DomainError("conv block with zero channels");
    if (h < 2 || w < 2) throw DomainError("pooling reduces the feature map below 1x1");
    h /= 2;
    w /= 2;
  }
}

nlohmann::json to_json(const ArchConfig& c) {
  return {{"height", c.height}, {"width", c.width},   {"channels", c.channels}, {"conv_channels", c.conv_channels},
          {"hidden", c.hidden}, {"classes", c.classes}, {"seed", c.seed}};
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  ArchConfig c;
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  c.channels = j.value("channels", c.channels);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.hidden = j.value("hidden", c.hidden);
  c.classes = j.value("classes", c.classes);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

std::uint64_t arch_fingerprint(const ArchConfig& c) {
  std::vector<std::uint64_t> words{c.height, c.width, c.channels, c.hidden, c.classes, c.conv_channels.size()};
  for (auto ch : c.conv_channels) words.push_back(ch);
  return fnv1a({reinterpret_cast<const unsigned char*>(words.data()), words.size() * sizeof(std::uint64_t)});
}

Model::Model(ArchConfig cfg, std::vector<std::string> class_names)
    : cfg_(std::move(cfg)), fingerprint_(0), class_names_(std::move(class_names)) {
  cfg_.validate();
  fingerprint_ = arch_fingerprint(cfg_);
  if (class_names_.empty())
    for (std::size_t i = 0; i < cfg_.classes; ++i) class_names_.push_back("class" + std::to_string(i));
  if (class_names_.size() != cfg_.classes) throw DomainError("class name count does not match output classes");

  Rng rng(splitmix(cfg_.seed));
  std::size_t cin = cfg_.channels, h = cfg_.height, w = cfg_.width;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    const std::size_t cout = cfg_.conv_channels[i];
    const std::string id = std::to_string(i + 1);
    params_.push_back(he_uniform("conv" + id + ".w", {3, 3, cin, cout}, 9 * cin, rng));
    params_.push_back(std::make_shared<Parameter>("conv" + id + ".b", Tensor(Shape{cout})));
    layer_ids_.push_back("conv" + id);
    layer_widths_["conv" + id] = h * w * cout;
    h /= 2;
    w /= 2;
    layer_ids_.push_back("pool" + id);
    layer_widths_["pool" + id] = h * w * cout;
    cin = cout;
  }
  const std::size_t flat = h * w * cin;
  params_.push_back(he_uniform("dense1.w", {flat, cfg_.hidden}, flat, rng));
  params_.push_back(std::make_shared<Parameter>("dense1.b", Tensor(Shape{cfg_.hidden})));
  params_.push_back(he_uniform("dense2.w", {cfg_.hidden, cfg_.classes}, cfg_.hidden, rng));
  params_.push_back(std::make_shared<Parameter>("dense2.b", Tensor(Shape{cfg_.classes})));
  for (const auto& [id, width] : std::initializer_list<std::pair<const char*, std::size_t>>{
           {"flat", flat}, {"hidden", cfg_.hidden}, {"logits", cfg_.classes}, {"probs", cfg_.classes}}) {
    layer_ids_.push_back(id);
    layer_widths_[id] = width;
  }
}

std::size_t Model::layer_width(const std::string& layer) const {
  auto it = layer_widths_.find(layer);
  if (it == layer_widths_.end()) throw NotFound("unknown layer '" + layer + "'");
  return it->second;
}

Model::Nodes Model::build(Graph& g, NodeId input) const {
  const Shape& in = g.shape(input);
  if (in.size() != 4 || in[1] != cfg_.height || in[2] != cfg_.width || in[3] != cfg_.channels)
    throw ShapeError(input, "model input", "[*," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                                               "," + std::to_string(cfg_.channels) + "]",
                     shape_str(in));
  const std::size_t n = in[0];
  Nodes out;
  NodeId x = input;
  std::size_t p = 0;
  for (std::size_t i = 0; i < cfg_.conv_channels.size(); ++i) {
    const std::string id = std::to_string(i + 1);
    const NodeId w = g.parameter(params_[p++]);
    const NodeId b = g.parameter(params_[p++]);
    x = g.relu(g.add_bias(g.conv2d(x, w), b));
    out.layers["conv" + id] = x;
    x = g.max_pool2(x);
    out.layers["pool" + id] = x;
  }
  const NodeId flat = g.reshape(x, {n, layer_widths_.at("flat")});
  out.layers["flat"] = flat;
  const NodeId hidden = g.relu(g.add_bias(g.matmul(flat, g.parameter(params_[p])), g.parameter(params_[p + 1])));
  out.layers["hidden"] = hidden;
  out.logits = g.add_bias(g.matmul(hidden, g.parameter(params_[p + 2])), g.parameter(params_[p + 3]));
  out.layers["logits"] = out.logits;
  out.probabilities = g.softmax(out.logits);
  out.layers["probs"] = out.probabilities;
  return out;
}

ForwardResult Model::forward_with_taps(const Tensor& batch) const {
  Graph g;
  const NodeId input = g.constant(batch);
  const Nodes nodes = build(g, input);
  ForwardResult r;
  r.probabilities = g.value(nodes.probabilities);
  const std::size_t n = batch.dim(0);
  for (const auto& [id, node] : nodes.layers) r.taps[id] = g.value(node).reshaped({n, layer_widths_.at(id)});
  return r;
}

Tensor Model::predict(const Tensor& batch) const {
  Graph g;
  return g.value(build(g, g.constant(batch)).probabilities);
}

ParamSnapshot Model::snapshot(std::uint64_t cycle) const {
  ParamSnapshot s;
  s.cycle = cycle;
  s.fingerprint = fingerprint_;
  for (const auto& p : params_) s.values.push_back(p->value);
  return s;
}

void Model::restore(const ParamSnapshot& snap) {
  if (snap.fingerprint != fingerprint_)
    throw Conflict("fingerprint_mismatch", "snapshot was taken from a different architecture (" + hex(snap.fingerprint) +
                                               " vs " + hex(fingerprint_) + ")");
  if (snap.values.size() != params_.size()) throw Conflict("fingerprint_mismatch", "snapshot parameter count differs");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (snap.values[i].shape() != params_[i]->value.shape())
      throw Conflict("fingerprint_mismatch", "snapshot shape differs for " + params_[i]->name);
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = snap.values[i];
}

std::uint64_t Model::parameter_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) h = hash_tensor(p->value, h);
  return h;
}

void Model::set_conv_frozen(bool frozen) {
  const std::size_t conv_params = 2 * cfg_.conv_channels.size();
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->trainable = !(frozen && i < conv_params);
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t(Shape{labels.size(), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) throw DomainError("label out of range");
    t.data()[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  return t;
}

NodeId cross_entropy(Graph& g, NodeId probabilities, NodeId onehot) {
  const double n = static_cast<double>(g.shape(probabilities).at(0));
  return g.affine(g.sum(g.mul(onehot, g.log(probabilities))), -1.0 / n, 0.0);
}

namespace {

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t k = t.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (t.data()[row * k + j] > t.data()[row * k + best]) best = j;
  return best;
}

}  // namespace

double task_accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw DomainError("empty dataset");
  std::size_t correct = 0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(data.size(), start + chunk); ++i) idx.push_back(i);
    const Tensor probs = model.predict(data.batch(idx));
    for (std::size_t r = 0; r < idx.size(); ++r)
      if (static_cast<int>(argmax_row(probs, r)) == data.examples[idx[r]].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<EpochRecord> train_task(Model& model, const Dataset& data, const TaskTrainConfig& cfg) {
  if (data.size() == 0) throw DomainError("empty dataset");
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0)) throw DomainError("invalid task training config");
  const std::size_t classes = model.arch().classes;

  struct Plan {
    Graph g;
    NodeId input = 0, labels = 0, probs = 0, loss = 0;
  };
  std::map<std::size_t, std::unique_ptr<Plan>> plans;
  auto plan_for = [&](std::size_t n) -> Plan& {
    auto& slot = plans[n];
    if (!slot) {
      slot = std::make_unique<Plan>();
      slot->input = slot->g.placeholder(model.input_shape(n), "images");
      slot->labels = slot->g.placeholder({n, classes}, "labels");
      slot->probs = model.build(slot->g, slot->input).probabilities;
      slot->loss = cross_entropy(slot->g, slot->probs, slot->labels);
    }
    return *slot;
  };

  Optimizer opt(OptimizerKind::adam, cfg.learning_rate);
  Rng rng(splitmix(cfg.seed));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EpochRecord> history;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.examples[i].label);
      Plan& plan = plan_for(idx.size());
      plan.g.forward({{plan.input, data.batch(idx)}, {plan.labels, one_hot(labels, classes)}});
      const double loss = plan.g.value(plan.loss).item();
      if (!std::isfinite(loss)) throw NumericError("non-finite task loss");
      loss_sum += loss * static_cast<double>(idx.size());
      const Tensor& probs = plan.g.value(plan.probs);
      for (std::size_t r = 0; r < idx.size(); ++r)
        if (static_cast<int>(argmax_row(probs, r)) == labels[r]) ++correct;
      opt.step(gradients_by_parameter(plan.g, plan.g.backward(plan.loss)), -1.0);
    }
    history.push_back({epoch, loss_sum / static_cast<double>(data.size()),
                       static_cast<double>(correct) / static_cast<double>(data.size())});
  }
  return history;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const ParamSnapshot& snap, const CheckpointMeta& meta) {
  nlohmann::json j;
  j["cycle"] = meta.cycle;
  j["fingerprint"] = hex(snap.fingerprint);
  j["class_names"] = meta.class_names;
  j["created"] = meta.created;
  auto& shapes = j["shapes"] = nlohmann::json::array();
  for (const auto& t : snap.values) shapes.push_back(t.shape());
  const std::string meta_text = j.dump();

  std::string out(kMagic, sizeof kMagic);
  put_u64(out, meta_text.size());
  out += meta_text;
  for (const auto& t : snap.values)
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("io_error", "cannot write " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw Error("io_error", "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::pair<ParamSnapshot, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw NotFound("cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("not a checkpoint file", 0);
  const std::uint64_t meta_len = get_u64(p + 8);
  if (meta_len > bytes.size() - 16) throw FormatError("truncated checkpoint metadata", bytes.size());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.substr(16, meta_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), 16 + e.byte);
  }
  ParamSnapshot snap;
  CheckpointMeta meta;
  std::size_t offset = 16 + meta_len;
  try {
    meta.cycle = j.at("cycle").get<std::uint64_t>();
    meta.fingerprint = std::stoull(j.at("fingerprint").get<std::string>(), nullptr, 16);
    meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    meta.created = j.at("created").get<std::string>();
    snap.cycle = meta.cycle;
    snap.fingerprint = meta.fingerprint;
    for (const auto& s : j.at("shapes")) {
      Tensor t(s.get<Shape>());
      if (offset + t.size() * 8 > bytes.size()) throw FormatError("truncated checkpoint payload", bytes.size());
      for (double& v : t.data()) {
        v = std::bit_cast<double>(get_u64(p + offset));
        offset += 8;
      }
      snap.values.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what(), 16);
  } catch (const std::invalid_argument&) {
    throw FormatError("checkpoint metadata: bad fingerprint", 16);
  }
  if (offset != bytes.size()) throw FormatError("trailing bytes after checkpoint payload", offset);
  return {std::move(snap), std::move(meta)};
}

}  // namespace nesy
