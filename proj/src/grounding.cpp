#include "nesy/grounding.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "nesy/error.hpp"
#include "nesy/optimizer.hpp"
#include "nesy/rng.hpp"

namespace nesy {

namespace {

nlohmann::json tensor_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const nlohmann::json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

std::string squash_name(Squash s) { return s == Squash::sigmoid ? "sigmoid" : "softmax"; }

Squash squash_from(const std::string& s) {
  if (s == "sigmoid") return Squash::sigmoid;
  if (s == "softmax") return Squash::softmax;
  throw DomainError("unknown squash '" + s + "'");
}

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t k = t.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (t.at(row, j) > t.at(row, best)) best = j;
  return best;
}

int predict(const LinearHead& head, const Tensor& truths, std::size_t row) {
  if (head.squash == Squash::sigmoid) return truths.at(row, 0) >= 0.5 ? 1 : 0;
  return static_cast<int>(argmax_row(truths, row));
}

Tensor tap_features(const Model& model, const std::string& layer, const std::vector<const ExampleImage*>& images) {
  model.layer_width(layer);  // validates the layer id
  return model.forward_with_taps(batch_of(images)).taps.at(layer);
}

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
  const std::size_t m = x.dim(1);
  Tensor out(Shape{rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < m; ++c) out.data()[r * m + c] = x.at(rows[r], c);
  return out;
}

// Splits indices [0, n) into (train, held-out) with a fixed seed.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split(std::size_t n, double fraction, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  std::size_t held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  if (held >= n) held = n > 1 ? n - 1 : 0;
  std::vector<std::size_t> h(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(held));
  std::vector<std::size_t> t(idx.begin() + static_cast<std::ptrdiff_t>(held), idx.end());
  return {t, h};
}

void check_config(const ProbeTrainConfig& cfg) {
  if (!(cfg.learning_rate > 0) || !(cfg.held_out_fraction >= 0 && cfg.held_out_fraction < 1) || cfg.weight_decay < 0)
    throw DomainError("invalid probe training config");
}

}  // namespace

nlohmann::json to_json(const ProbeReport& r) {
  return {{"train_accuracy", r.train_accuracy},
          {"held_out_accuracy", r.held_out_accuracy},
          {"positives", r.positives},
          {"negatives", r.negatives},
          {"epochs", r.epochs}};
}

// ---- registry ----------------------------------------------------------------

void PredicateRegistry::claim(const std::string& name) const {
  if (name.empty()) throw DomainError("empty predicate name");
  if (bindings_.count(name)) throw Conflict("duplicate_predicate", "predicate '" + name + "' is already registered");
}

void PredicateRegistry::register_class_predicate(const std::string& name, std::size_t class_index,
                                                 std::size_t num_classes) {
  claim(name);
  if (class_index >= num_classes)
    throw DomainError("class index " + std::to_string(class_index) + " out of range for " +
                      std::to_string(num_classes) + " classes");
  bindings_[name] = {PredicateBinding::Kind::class_output, class_index, {}};
  ++epoch_;
}

void PredicateRegistry::install_head(ProbeHead head, const std::map<std::string, ProbeReport>& reports) {
  if (head.members.empty()) throw DomainError("probe head without members");
  if (head.squash == Squash::softmax && head.members.size() < 2)
    throw DomainError("an exclusive group needs at least 2 members");
  std::set<std::string> unique(head.members.begin(), head.members.end());
  if (unique.size() != head.members.size()) throw DomainError("repeated name in exclusive group");
  for (const auto& m : head.members) claim(m);
  if (heads_.count(head.id)) throw Conflict("duplicate_predicate", "probe head '" + head.id + "' already exists");
  head.weights->trainable = probes_trainable_;
  head.bias->trainable = probes_trainable_;
  for (std::size_t i = 0; i < head.members.size(); ++i) {
    bindings_[head.members[i]] = {PredicateBinding::Kind::probe, i, head.id};
    if (auto it = reports.find(head.members[i]); it != reports.end()) reports_[head.members[i]] = it->second;
  }
  heads_[head.id] = std::move(head);
  ++epoch_;
}

const PredicateBinding& PredicateRegistry::binding(const std::string& name) const {
  auto it = bindings_.find(name);
  if (it == bindings_.end()) throw NotFound("unknown predicate '" + name + "'");
  return it->second;
}

const ProbeHead& PredicateRegistry::head(const std::string& id) const {
  auto it = heads_.find(id);
  if (it == heads_.end()) throw NotFound("unknown probe head '" + id + "'");
  return it->second;
}

std::vector<std::string> PredicateRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [name, b] : bindings_) out.push_back(name);
  return out;
}

std::map<std::string, std::vector<std::string>> PredicateRegistry::groups() const {
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& [id, h] : heads_)
    if (h.squash == Squash::softmax) out[id] = h.members;
  return out;
}

void PredicateRegistry::set_probes_trainable(bool trainable) {
  probes_trainable_ = trainable;
  for (auto& [id, h] : heads_) {
    h.weights->trainable = trainable;
    h.bias->trainable = trainable;
  }
}

nlohmann::json PredicateRegistry::to_json() const {
  nlohmann::json j;
  auto& preds = j["predicates"] = nlohmann::json::object();
  for (const auto& [name, b] : bindings_) {
    if (b.kind == PredicateBinding::Kind::class_output)
      preds[name] = {{"kind", "class"}, {"index", b.index}};
    else
      preds[name] = {{"kind", "probe"}, {"head", b.head}, {"column", b.index}};
  }
  auto& heads = j["heads"] = nlohmann::json::object();
  for (const auto& [id, h] : heads_)
    heads[id] = {{"layer", h.layer},
                 {"squash", squash_name(h.squash)},
                 {"members", h.members},
                 {"weights", tensor_json(h.weights->value)},
                 {"bias", tensor_json(h.bias->value)}};
  auto& reports = j["reports"] = nlohmann::json::object();
  for (const auto& [name, r] : reports_) reports[name] = nesy::to_json(r);
  j["probes_trainable"] = probes_trainable_;
  j["epoch"] = epoch_;
  return j;
}

PredicateRegistry PredicateRegistry::from_json(const nlohmann::json& j) {
  PredicateRegistry r;
  try {
    r.probes_trainable_ = j.at("probes_trainable").get<bool>();
    for (const auto& [id, h] : j.at("heads").items()) {
      ProbeHead head;
      head.id = id;
      head.layer = h.at("layer").get<std::string>();
      head.squash = squash_from(h.at("squash").get<std::string>());
      head.members = h.at("members").get<std::vector<std::string>>();
      head.weights = std::make_shared<Parameter>("probe." + id + ".w", tensor_from_json(h.at("weights")),
                                                 r.probes_trainable_);
      head.bias = std::make_shared<Parameter>("probe." + id + ".b", tensor_from_json(h.at("bias")),
                                              r.probes_trainable_);
      r.heads_[id] = std::move(head);
    }
    for (const auto& [name, b] : j.at("predicates").items()) {
      PredicateBinding binding;
      if (b.at("kind") == "class") {
        binding.kind = PredicateBinding::Kind::class_output;
        binding.index = b.at("index").get<std::size_t>();
      } else {
        binding.kind = PredicateBinding::Kind::probe;
        binding.head = b.at("head").get<std::string>();
        binding.index = b.at("column").get<std::size_t>();
        if (!r.heads_.count(binding.head)) throw FormatError("registry: predicate refers to unknown head", 0);
      }
      r.bindings_[name] = binding;
    }
    for (const auto& [name, rep] : j.at("reports").items()) {
      ProbeReport pr;
      pr.train_accuracy = rep.at("train_accuracy").get<double>();
      pr.held_out_accuracy = rep.at("held_out_accuracy").get<double>();
      pr.positives = rep.at("positives").get<std::size_t>();
      pr.negatives = rep.at("negatives").get<std::size_t>();
      pr.epochs = rep.at("epochs").get<std::size_t>();
      r.reports_[name] = pr;
    }
    r.epoch_ = j.at("epoch").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("registry: ") + e.what(), 0);
  }
  return r;
}

// ---- head fitting ------------------------------------------------------------

LinearHead fit_linear_head(const Tensor& features, const std::vector<int>& labels, std::size_t classes,
                           Squash squash, const ProbeTrainConfig& cfg) {
  check_config(cfg);
  if (features.rank() != 2 || features.dim(0) != labels.size()) throw DomainError("features and labels disagree");
  if (labels.empty()) throw DomainError("no examples to fit a probe");
  const std::size_t n = labels.size(), m = features.dim(1);
  const std::size_t cols = squash == Squash::sigmoid ? 1 : classes;
  if (squash == Squash::sigmoid && classes != 2) throw DomainError("sigmoid heads are binary");

  auto w = std::make_shared<Parameter>("w", Tensor(Shape{m, cols}));
  auto b = std::make_shared<Parameter>("b", Tensor(Shape{cols}));
  Graph g;
  const NodeId x = g.constant(features);
  const NodeId wn = g.parameter(w);
  const NodeId logits = g.add_bias(g.matmul(x, wn), g.parameter(b));
  NodeId loss;
  if (squash == Squash::sigmoid) {
    Tensor y(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) y.data()[i] = labels[i] == 1 ? 1.0 : 0.0;
    const NodeId yn = g.constant(y);
    const NodeId p = g.sigmoid(logits);
    const NodeId pos = g.mul(yn, g.log(p));
    const NodeId neg = g.mul(g.affine(yn, -1.0, 1.0), g.log(g.affine(p, -1.0, 1.0)));
    loss = g.affine(g.sum(g.add(pos, neg)), -1.0 / static_cast<double>(n), 0.0);
  } else {
    loss = cross_entropy(g, g.softmax(logits), g.constant(one_hot(labels, classes)));
  }
  if (cfg.weight_decay > 0) loss = g.add(loss, g.affine(g.sum(g.mul(wn, wn)), 0.5 * cfg.weight_decay, 0.0));

  Optimizer opt(OptimizerKind::adam, cfg.learning_rate);
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    if (e > 0) g.forward();
    opt.step(gradients_by_parameter(g, g.backward(loss)), -1.0);
  }
  return {w->value, b->value, squash};
}

Tensor apply_head(const LinearHead& head, const Tensor& features) {
  Graph g;
  const NodeId logits = g.add_bias(g.matmul(g.constant(features), g.constant(head.weights)), g.constant(head.bias));
  return g.value(head.squash == Squash::sigmoid ? g.sigmoid(logits) : g.softmax(logits));
}

double head_accuracy(const LinearHead& head, const Tensor& features, const std::vector<int>& labels) {
  if (labels.empty()) return 0.0;
  const Tensor t = apply_head(head, features);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) ok += predict(head, t, i) == labels[i];
  return static_cast<double>(ok) / static_cast<double>(labels.size());
}

ProbeReport train_probe(PredicateRegistry& registry, const Model& model, const std::string& name,
                        const std::string& layer, const ConceptExampleSet& sets, const ProbeTrainConfig& cfg) {
  check_config(cfg);
  if (sets.positives.empty() || sets.negatives.empty())
    throw DomainError("concept '" + name + "' needs non-empty positive and negative sets");
  if (registry.contains(name)) throw Conflict("duplicate_predicate", "predicate '" + name + "' is already registered");
  if (!cfg.allow_overlap) {
    std::set<std::string> pos;
    for (const auto& e : sets.positives) pos.insert(e.id);
    for (const auto& e : sets.negatives)
      if (pos.count(e.id)) throw DomainError("example " + e.id + " is both a positive and a negative");
  }
  std::vector<const ExampleImage*> images;
  std::vector<int> labels;
  for (const auto& e : sets.positives) images.push_back(&e), labels.push_back(1);
  for (const auto& e : sets.negatives) images.push_back(&e), labels.push_back(0);
  const Tensor features = tap_features(model, layer, images);

  Rng rng(splitmix(cfg.split_seed));
  auto [pos_train, pos_held] = split(sets.positives.size(), cfg.held_out_fraction, rng);
  auto [neg_train, neg_held] = split(sets.negatives.size(), cfg.held_out_fraction, rng);
  std::vector<std::size_t> train_rows, held_rows;
  for (auto i : pos_train) train_rows.push_back(i);
  for (auto i : neg_train) train_rows.push_back(sets.positives.size() + i);
  for (auto i : pos_held) held_rows.push_back(i);
  for (auto i : neg_held) held_rows.push_back(sets.positives.size() + i);
  auto labels_of = [&](const std::vector<std::size_t>& rows) {
    std::vector<int> out;
    for (auto r : rows) out.push_back(labels[r]);
    return out;
  };

  const Tensor train_x = select_rows(features, train_rows);
  const LinearHead head = fit_linear_head(train_x, labels_of(train_rows), 2, Squash::sigmoid, cfg);
  ProbeReport report;
  report.train_accuracy = head_accuracy(head, train_x, labels_of(train_rows));
  report.held_out_accuracy =
      held_rows.empty() ? report.train_accuracy : head_accuracy(head, select_rows(features, held_rows), labels_of(held_rows));
  report.positives = sets.positives.size();
  report.negatives = sets.negatives.size();
  report.epochs = cfg.epochs;

  ProbeHead ph;
  ph.id = name;
  ph.layer = layer;
  ph.squash = Squash::sigmoid;
  ph.weights = std::make_shared<Parameter>("probe." + name + ".w", head.weights);
  ph.bias = std::make_shared<Parameter>("probe." + name + ".b", head.bias);
  ph.members = {name};
  registry.install_head(std::move(ph), {{name, report}});
  return report;
}

std::map<std::string, ProbeReport> register_exclusive_group(PredicateRegistry& registry, const Model& model,
                                                            const std::vector<std::string>& names,
                                                            const std::string& layer,
                                                            const std::vector<ConceptExampleSet>& sets,
                                                            const ProbeTrainConfig& cfg) {
  check_config(cfg);
  if (names.size() < 2) throw DomainError("an exclusive group needs at least 2 members");
  if (sets.size() != names.size()) throw DomainError("one example set per group member is required");
  for (const auto& n : names)
    if (registry.contains(n))
      throw Conflict("overlapping_group", "predicate '" + n + "' is already registered or in another group");
  std::set<std::string> seen;
  std::vector<const ExampleImage*> images;
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> rows_of(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (sets[k].positives.empty()) throw DomainError("group member '" + names[k] + "' has no examples");
    for (const auto& e : sets[k].positives) {
      if (!cfg.allow_overlap && !seen.insert(e.id).second)
        throw DomainError("example " + e.id + " belongs to two group members");
      rows_of[k].push_back(images.size());
      images.push_back(&e);
      labels.push_back(static_cast<int>(k));
    }
  }
  const Tensor features = tap_features(model, layer, images);
  Rng rng(splitmix(cfg.split_seed));
  std::vector<std::size_t> train_rows, held_rows;
  for (const auto& rows : rows_of) {
    auto [t, h] = split(rows.size(), cfg.held_out_fraction, rng);
    for (auto i : t) train_rows.push_back(rows[i]);
    for (auto i : h) held_rows.push_back(rows[i]);
  }
  auto labels_of = [&](const std::vector<std::size_t>& rows) {
    std::vector<int> out;
    for (auto r : rows) out.push_back(labels[r]);
    return out;
  };
  const Tensor train_x = select_rows(features, train_rows);
  const LinearHead head = fit_linear_head(train_x, labels_of(train_rows), names.size(), Squash::softmax, cfg);

  // Per member: one-vs-rest accuracy of "argmax is this member".
  auto member_accuracy = [&](const std::vector<std::size_t>& rows, std::size_t k) {
    if (rows.empty()) return 0.0;
    const Tensor t = apply_head(head, select_rows(features, rows));
    std::size_t ok = 0;
    for (std::size_t i = 0; i < rows.size(); ++i)
      ok += (argmax_row(t, i) == k) == (labels[rows[i]] == static_cast<int>(k));
    return static_cast<double>(ok) / static_cast<double>(rows.size());
  };
  std::map<std::string, ProbeReport> reports;
  for (std::size_t k = 0; k < names.size(); ++k) {
    ProbeReport r;
    r.train_accuracy = member_accuracy(train_rows, k);
    r.held_out_accuracy = held_rows.empty() ? r.train_accuracy : member_accuracy(held_rows, k);
    r.positives = sets[k].positives.size();
    r.negatives = images.size() - r.positives;
    r.epochs = cfg.epochs;
    reports[names[k]] = r;
  }
  ProbeHead ph;
  ph.id = "group";
  for (const auto& n : names) ph.id += ":" + n;
  ph.layer = layer;
  ph.squash = Squash::softmax;
  ph.weights = std::make_shared<Parameter>("probe." + ph.id + ".w", head.weights);
  ph.bias = std::make_shared<Parameter>("probe." + ph.id + ".b", head.bias);
  ph.members = names;
  registry.install_head(std::move(ph), reports);
  return reports;
}

// ---- grounding in graphs -----------------------------------------------------

NodeId Grounder::truth(const std::string& predicate) {
  const PredicateBinding& b = registry_.binding(predicate);
  if (b.kind == PredicateBinding::Kind::class_output) return graph_.select_column(nodes_.probabilities, b.index);
  auto it = head_outputs_.find(b.head);
  if (it == head_outputs_.end()) {
    const ProbeHead& h = registry_.head(b.head);
    auto layer = nodes_.layers.find(h.layer);
    if (layer == nodes_.layers.end()) throw NotFound("model has no layer '" + h.layer + "'");
    NodeId tap = layer->second;
    const Shape& s = graph_.shape(tap);
    if (s.size() != 2) tap = graph_.reshape(tap, {s[0], shape_size(s) / s[0]});
    if (graph_.shape(tap)[1] != h.weights->value.dim(0))
      throw ShapeError(tap, "probe " + h.id, "[*," + std::to_string(h.weights->value.dim(0)) + "]",
                       shape_str(graph_.shape(tap)));
    const NodeId logits = graph_.add_bias(graph_.matmul(tap, graph_.parameter(h.weights)), graph_.parameter(h.bias));
    const NodeId out = h.squash == Squash::sigmoid ? graph_.sigmoid(logits) : graph_.softmax(logits);
    it = head_outputs_.emplace(b.head, out).first;
  }
  return graph_.select_column(it->second, b.index);
}

Tensor ground_values(const PredicateRegistry& registry, const Model& model, const std::string& predicate,
                     const Tensor& batch) {
  Graph g;
  const auto nodes = model.build(g, g.constant(batch));
  Grounder grounder(registry, g, nodes);
  return g.value(grounder.truth(predicate));
}

// ---- manifests ---------------------------------------------------------------

ConceptManifest parse_concept_manifest(const nlohmann::json& j) {
  ConceptManifest m;
  try {
    m.concept_name = j.at("concept").get<std::string>();
    m.layer = j.value("layer", std::string(Model::probe_layer()));
    m.positives = j.at("positives").get<std::vector<std::string>>();
    m.negatives = j.value("negatives", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("bad concept manifest: ") + e.what());
  }
  if (m.concept_name.empty()) throw DomainError("bad concept manifest: empty concept name");
  return m;
}

nlohmann::json to_json(const ConceptManifest& m) {
  return {{"concept", m.concept_name}, {"layer", m.layer}, {"positives", m.positives}, {"negatives", m.negatives}};
}

GroupManifest parse_group_manifest(const nlohmann::json& j) {
  GroupManifest g;
  try {
    g.layer = j.value("layer", std::string(Model::probe_layer()));
    for (const auto& member : j.at("members")) {
      ConceptManifest m;
      m.concept_name = member.at("concept").get<std::string>();
      m.layer = g.layer;
      m.positives = member.at("positives").get<std::vector<std::string>>();
      g.members.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("bad group manifest: ") + e.what());
  }
  return g;
}

nlohmann::json to_json(const GroupManifest& g) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : g.members) members.push_back({{"concept", m.concept_name}, {"positives", m.positives}});
  return {{"layer", g.layer}, {"members", members}};
}

}  // namespace nesy
