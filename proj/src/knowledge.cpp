#include "nesy/knowledge.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "nesy/error.hpp"
#include "nesy/optimizer.hpp"
#include "nesy/rng.hpp"

namespace nesy {

namespace fs = std::filesystem;

std::string to_string(RuleOrigin o) { return o == RuleOrigin::user ? "user" : "initial"; }

namespace {

RuleOrigin origin_from(const std::string& s) {
  if (s == "user") return RuleOrigin::user;
  if (s == "initial") return RuleOrigin::initial;
  throw DomainError("unknown rule origin '" + s + "'");
}

std::uint64_t id_number(const std::string& id) {
  if (id.size() < 2 || id[0] != 'r' || !std::all_of(id.begin() + 1, id.end(), ::isdigit)) return 0;
  return std::stoull(id.substr(1));
}

void write_file(const fs::path& path, const std::string& bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw NotFound("cannot write " + path.string());
    out << bytes;
    if (!out) throw NotFound("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void collect_datasets(const Formula& f, std::set<std::string>& out) {
  if (f.is_quantifier()) out.insert(f.dataset);
  if (f.lhs) collect_datasets(*f.lhs, out);
  if (f.rhs) collect_datasets(*f.rhs, out);
}

bool finite(const Tensor& t) {
  for (double v : t.values())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace

// ---- knowledge base --------------------------------------------------------------

std::string KnowledgeBase::add_rule(const ValidatedFormula& formula, RuleOrigin origin) {
  if (!formula.formula) throw DomainError("empty rule");
  Rule r;
  r.id = "r" + std::to_string(next_id_++);
  r.formula = formula;
  r.origin = origin;
  rules_.push_back(r);
  ++epoch_;
  return r.id;
}

void KnowledgeBase::remove_rule(const std::string& id) {
  auto it = std::find_if(rules_.begin(), rules_.end(), [&](const Rule& r) { return r.id == id; });
  if (it == rules_.end()) throw NotFound("unknown rule '" + id + "'");
  rules_.erase(it);
  ++epoch_;
}

void KnowledgeBase::set_enabled(const std::string& id, bool enabled) {
  for (auto& r : rules_)
    if (r.id == id) {
      r.enabled = enabled;
      ++epoch_;
      return;
    }
  throw NotFound("unknown rule '" + id + "'");
}

const Rule& KnowledgeBase::rule(const std::string& id) const {
  for (const auto& r : rules_)
    if (r.id == id) return r;
  throw NotFound("unknown rule '" + id + "'");
}

std::size_t KnowledgeBase::enabled_count() const {
  return static_cast<std::size_t>(std::count_if(rules_.begin(), rules_.end(), [](const Rule& r) { return r.enabled; }));
}

std::string KnowledgeBase::to_text() const {
  std::string out;
  for (const auto& r : rules_) {
    out += "#@ id=" + r.id + " enabled=" + (r.enabled ? "true" : "false") + " origin=" + to_string(r.origin) + "\n";
    out += r.formula.text + "\n";
  }
  return out;
}

KnowledgeBase KnowledgeBase::from_text(const std::string& text, const Vocabulary& vocab) {
  KnowledgeBase kb;
  std::vector<Rule> pending;
  std::set<std::string> ids;
  for (const KbLine& line : parse_kb_text(text)) {
    Rule r;
    try {
      r.formula = validate(line.formula, vocab);
    } catch (const ValidationError& e) {
      throw DomainError("line " + std::to_string(line.line) + ": " + e.what());
    }
    for (const auto& c : line.comments) {
      if (c.empty() || c[0] != '@') continue;
      std::istringstream fields(c.substr(1));
      std::string field;
      while (fields >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "id") r.id = value;
        else if (key == "enabled") r.enabled = value == "true";
        else if (key == "origin") r.origin = origin_from(value);
      }
    }
    if (!r.id.empty()) {
      if (id_number(r.id) == 0) throw DomainError("line " + std::to_string(line.line) + ": bad rule id '" + r.id + "'");
      if (!ids.insert(r.id).second) throw DomainError("duplicate rule id '" + r.id + "'");
      kb.next_id_ = std::max(kb.next_id_, id_number(r.id) + 1);
    }
    pending.push_back(std::move(r));
  }
  for (auto& r : pending)
    if (r.id.empty()) r.id = "r" + std::to_string(kb.next_id_++);
  kb.rules_ = std::move(pending);
  return kb;
}

// ---- sat reports -----------------------------------------------------------------

nlohmann::json to_json(const SatReport& r, bool with_timestamp) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& s : r.rules) rules.push_back({{"id", s.id}, {"formula", s.text}, {"sat", s.sat}});
  nlohmann::json j{{"rules", rules}, {"aggregate", r.aggregate}, {"empty", r.empty}, {"cycle", r.cycle}};
  if (with_timestamp) j["timestamp"] = r.timestamp;
  return j;
}

SatReport sat_report_from_json(const nlohmann::json& j) {
  SatReport r;
  try {
    for (const auto& s : j.at("rules"))
      r.rules.push_back({s.at("id").get<std::string>(), s.at("formula").get<std::string>(), s.at("sat").get<double>()});
    r.aggregate = j.at("aggregate").get<double>();
    r.empty = j.at("empty").get<bool>();
    r.cycle = j.at("cycle").get<std::uint64_t>();
    r.timestamp = j.value("timestamp", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sat report: ") + e.what(), 0);
  }
  return r;
}

SatReport sat_report(const KnowledgeBase& kb, const PredicateRegistry& registry, const Model& model,
                     const DatasetTable& datasets, const SemanticsConfig& semantics, std::uint64_t cycle) {
  SatReport report;
  report.cycle = cycle;
  report.timestamp = utc_timestamp();
  std::vector<double> values;
  for (const auto& rule : kb.rules()) {
    if (!rule.enabled) continue;
    double sat;
    try {
      sat = evaluate(*compile(rule.formula, registry, model, datasets, semantics), model).truth;
    } catch (const Error& e) {
      throw DomainError("rule " + rule.id + ": " + e.what());
    }
    report.rules.push_back({rule.id, rule.formula.text, sat});
    values.push_back(sat);
  }
  const KbAggregate agg = aggregate_kb(semantics, values);
  report.aggregate = agg.value;
  report.empty = agg.empty;
  return report;
}

// ---- training --------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw DomainError("learning rate must be positive");
  if (!(lambda >= 0 && lambda <= 1)) throw DomainError("lambda must lie in [0,1]");
  if (!(tau > 0 && tau <= 1)) throw DomainError("tau must lie in (0,1]");
  if (batch_size == 0) throw DomainError("batch size must be positive");
  if (report_every == 0) throw DomainError("report interval must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"max_steps", c.max_steps}, {"batch_size", c.batch_size},
          {"lambda", c.lambda},               {"tau", c.tau},             {"seed", c.seed},
          {"report_every", c.report_every},   {"task_dataset", c.task_dataset},
          {"freeze_conv", c.freeze_conv}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (!j.is_object()) throw DomainError("train config must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "max_steps") c.max_steps = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lambda") c.lambda = value.get<double>();
      else if (key == "tau") c.tau = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "report_every") c.report_every = value.get<std::size_t>();
      else if (key == "task_dataset") c.task_dataset = value.get<std::string>();
      else if (key == "freeze_conv") c.freeze_conv = value.get<bool>();
      else throw DomainError("unknown train config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j{{"step", r.step}, {"objective", r.objective}, {"batch_aggregate", r.batch_aggregate}, {"full", r.full}};
  if (r.full) {
    j["rules"] = r.rules;
    j["aggregate"] = r.aggregate;
    j["task_accuracy"] = r.task_accuracy;
  }
  return j;
}

namespace {

class Trainer {
 public:
  Trainer(Model& model, const KnowledgeBase& kb, const PredicateRegistry& registry, const DatasetTable& datasets,
          const SemanticsConfig& semantics, const TrainConfig& cfg)
      : model_(model), kb_(kb), registry_(registry), datasets_(datasets), sem_(semantics), cfg_(cfg),
        rng_(splitmix(cfg.seed ^ 0x7a11)), opt_(OptimizerKind::adam, cfg.learning_rate) {
    for (const auto& p : model.parameters())
      if (p->trainable) params_.push_back(p);
    if (registry.probes_trainable())
      for (const auto& [id, h] : registry.heads()) params_.push_back(h.weights), params_.push_back(h.bias);
    if (params_.empty()) throw DomainError("nothing to train: every parameter is frozen");
    for (const auto& r : kb.rules())
      if (r.enabled) {
        rules_.push_back(&r);
        collect_datasets(*r.formula.formula, quantified_);
        for (const auto& ref : example_refs(*r.formula.formula))
          if (const ExampleImage* e = datasets.find_example(ref)) refs_.examples.push_back(*e);
      }
    if (rules_.empty()) throw DomainError("knowledge base has no enabled rules");
    refs_.name = "#refs";
    if (cfg.lambda > 0) task_ = datasets.get(cfg.task_dataset);
  }

  StepRecord full_record(std::size_t step) const {
    StepRecord r;
    r.step = step;
    r.full = true;
    const SatReport rep = sat_report(kb_, registry_, model_, datasets_, sem_);
    for (const auto& s : rep.rules) r.rules[s.id] = s.sat;
    r.aggregate = rep.aggregate;
    if (task_) r.task_accuracy = task_accuracy(model_, *task_);
    return r;
  }

  // One ascent step; returns the batch objective and aggregate.
  std::pair<double, double> step(std::size_t index) {
    DatasetTable sample;
    for (const auto& name : datasets_.names()) {
      auto d = datasets_.get(name);
      if (quantified_.count(name) && d->size() > cfg_.batch_size) {
        Dataset sub;
        sub.name = name;
        for (std::size_t i : draw(d->size())) sub.examples.push_back(d->examples[i]);
        sample.put(std::move(sub));
      } else {
        sample.put(d);
      }
    }
    if (!refs_.examples.empty()) sample.put(std::make_shared<const Dataset>(refs_));

    std::vector<double> sats;
    std::vector<std::vector<std::pair<ParameterPtr, Tensor>>> rule_grads;
    for (const Rule* r : rules_) {
      auto plan = compile(r->formula, registry_, model_, sample, sem_);
      sats.push_back(plan->graph().value(plan->root())[0]);
      rule_grads.push_back(gradients_by_parameter(plan->graph(), plan->graph().backward(plan->root())));
    }
    // dA/ds_i through the KB aggregator.
    auto s = std::make_shared<Parameter>("sats", Tensor(Shape{sats.size()}, sats));
    Graph agg;
    const NodeId sn = agg.parameter(s);
    const NodeId a = aggregate_kb(agg, sem_, sn);
    const double aggregate = agg.value(a)[0];
    const Tensor da = agg.backward(a).at(sn);

    std::map<const Parameter*, Tensor> total;
    for (const auto& p : params_) total.emplace(p.get(), Tensor(p->value.shape()));
    auto accumulate = [&](const std::vector<std::pair<ParameterPtr, Tensor>>& grads, double w) {
      for (const auto& [p, g] : grads) {
        auto it = total.find(p.get());
        if (it == total.end()) continue;
        auto&& dst = it->second.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * g[i];
      }
    };
    for (std::size_t i = 0; i < rule_grads.size(); ++i) accumulate(rule_grads[i], (1 - cfg_.lambda) * da[i]);

    double objective = (1 - cfg_.lambda) * aggregate;
    if (task_) {
      const auto idx = draw(task_->size());
      Graph g;
      const auto nodes = model_.build(g, g.constant(task_->batch(idx)));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(task_->examples[i].label);
      const NodeId ce = cross_entropy(g, nodes.probabilities, g.constant(one_hot(labels, model_.arch().classes)));
      objective -= cfg_.lambda * g.value(ce)[0];
      accumulate(gradients_by_parameter(g, g.backward(ce)), -cfg_.lambda);
    }
    if (cfg_.inject_nan_at && *cfg_.inject_nan_at == index) objective = std::nan("");

    std::vector<Tensor> grads;
    bool ok = std::isfinite(objective);
    for (const auto& p : params_) {
      grads.push_back(total.at(p.get()));
      ok = ok && finite(grads.back());
    }
    if (!ok) throw NumericError("non-finite objective or gradient at step " + std::to_string(index));
    opt_.step(params_, grads);
    return {objective, aggregate};
  }

 private:
  std::vector<std::size_t> draw(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    rng_.shuffle(idx);
    idx.resize(std::min(n, cfg_.batch_size));
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  Model& model_;
  const KnowledgeBase& kb_;
  const PredicateRegistry& registry_;
  const DatasetTable& datasets_;
  const SemanticsConfig& sem_;
  const TrainConfig& cfg_;
  Rng rng_;
  Optimizer opt_;
  std::vector<ParameterPtr> params_;
  std::vector<const Rule*> rules_;
  std::set<std::string> quantified_;
  Dataset refs_;
  std::shared_ptr<const Dataset> task_;
};

}  // namespace

TrainResult train_to_satisfy(Model& model, const KnowledgeBase& kb, const PredicateRegistry& registry,
                             const DatasetTable& datasets, const SemanticsConfig& semantics,
                             const TrainConfig& cfg, const TrainProgress& progress) {
  cfg.validate();
  semantics.validate();
  std::vector<bool> trainable;
  for (const auto& p : model.parameters()) trainable.push_back(p->trainable);
  struct Unfreeze {
    Model& m;
    const std::vector<bool>& flags;
    ~Unfreeze() {
      for (std::size_t i = 0; i < flags.size(); ++i) m.parameters()[i]->trainable = flags[i];
    }
  } unfreeze{model, trainable};
  if (cfg.freeze_conv) model.set_conv_frozen(true);
  Trainer trainer(model, kb, registry, datasets, semantics, cfg);

  const ParamSnapshot pre = model.snapshot();
  std::vector<std::pair<ParameterPtr, Tensor>> probe_values;
  for (const auto& [id, h] : registry.heads())
    probe_values.emplace_back(h.weights, h.weights->value), probe_values.emplace_back(h.bias, h.bias->value);
  auto restore = [&] {
    model.restore(pre);
    for (auto& [p, v] : probe_values) p->value = v;
  };

  TrainResult result;
  result.before = sat_report(kb, registry, model, datasets, semantics);
  auto emit = [&](const StepRecord& r) {
    result.history.push_back(r);
    if (progress.on_step) progress.on_step(r);
  };
  try {
    std::size_t step = 0;
    for (;; ++step) {
      StepRecord rec;
      rec.step = step;
      if (step % cfg.report_every == 0 || step == cfg.max_steps) {
        rec = trainer.full_record(step);
        if (rec.aggregate >= cfg.tau) {
          result.reached_tau = true;
          emit(rec);
          break;
        }
      }
      if (step == cfg.max_steps) {
        emit(rec);
        break;
      }
      if (progress.cancel && progress.cancel->load()) {
        result.cancelled = true;
        if (!rec.full) rec = trainer.full_record(step);
        emit(rec);
        break;
      }
      std::tie(rec.objective, rec.batch_aggregate) = trainer.step(step);
      emit(rec);
    }
  } catch (...) {
    restore();
    throw;
  }
  result.after = sat_report(kb, registry, model, datasets, semantics);
  return result;
}

// ---- checkpoints -----------------------------------------------------------------

CheckpointStore::CheckpointStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path CheckpointStore::dir(std::uint64_t cycle) const { return root_ / ("cycle-" + std::to_string(cycle)); }

void CheckpointStore::save(const CycleCheckpoint& c) {
  const fs::path d = dir(c.cycle);
  fs::create_directories(d);
  CheckpointMeta meta;
  meta.cycle = c.cycle;
  meta.fingerprint = c.params.fingerprint;
  meta.created = c.created;
  ParamSnapshot snap = c.params;
  snap.cycle = c.cycle;
  save_checkpoint(d / "params.bin", snap, meta);
  write_file(d / "kb.txt", c.kb_text);
  nlohmann::json report{{"cycle", c.cycle}, {"created", c.created}, {"report", to_json(c.report)}};
  if (c.before) report["before"] = to_json(*c.before);
  write_file(d / "report.json", report.dump(2) + "\n");
}

CycleCheckpoint CheckpointStore::load(std::uint64_t cycle) const {
  if (!contains(cycle)) throw NotFound("no checkpoint for cycle " + std::to_string(cycle));
  const fs::path d = dir(cycle);
  CycleCheckpoint c;
  c.cycle = cycle;
  auto [snap, meta] = load_checkpoint(d / "params.bin");
  c.params = std::move(snap);
  c.kb_text = read_file(d / "kb.txt");
  const std::string text = read_file(d / "report.json");
  try {
    const auto j = nlohmann::json::parse(text);
    c.created = j.at("created").get<std::string>();
    c.report = sat_report_from_json(j.at("report"));
    if (j.contains("before")) c.before = sat_report_from_json(j.at("before"));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("report.json: " + std::string(e.what()), e.byte);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("report.json: " + std::string(e.what()), 0);
  }
  return c;
}

bool CheckpointStore::contains(std::uint64_t cycle) const {
  const fs::path d = dir(cycle);
  return fs::exists(d / "params.bin") && fs::exists(d / "kb.txt") && fs::exists(d / "report.json");
}

std::vector<std::uint64_t> CheckpointStore::cycles() const {
  std::vector<std::uint64_t> out;
  if (!fs::exists(root_)) return out;
  for (const auto& entry : fs::directory_iterator(root_)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("cycle-", 0) != 0) continue;
    const std::string digits = name.substr(6);
    if (digits.empty() || !std::all_of(digits.begin(), digits.end(), ::isdigit)) continue;
    const std::uint64_t c = std::stoull(digits);
    if (contains(c)) out.push_back(c);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<std::uint64_t> CheckpointStore::latest() const {
  const auto c = cycles();
  if (c.empty()) return std::nullopt;
  return c.back();
}

}  // namespace nesy
