#include "nesy/session.hpp"

#include <fstream>
#include <sstream>

#include "nesy/error.hpp"
#include "nesy/scenario.hpp"
#include "nesy/synth.hpp"

namespace nesy {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSessionFormat = "nesy-session/1";
constexpr const char* kReportFormat = "nesy-report/1";
constexpr std::size_t kStatusTail = 50;

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw NotFound("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.filename().string() + ": " + e.what(), e.byte);
  }
}

ConceptExampleSet resolve(const ConceptManifest& m, const DatasetTable& datasets) {
  ConceptExampleSet s;
  s.name = m.concept_name;
  auto fetch = [&](const std::vector<std::string>& ids, std::vector<ExampleImage>& out) {
    for (const auto& id : ids) {
      const ExampleImage* e = datasets.find_example(id);
      if (!e) throw NotFound("unknown example '" + id + "'");
      out.push_back(*e);
    }
  };
  fetch(m.positives, s.positives);
  fetch(m.negatives, s.negatives);
  return s;
}

nlohmann::json merge(nlohmann::json base, const nlohmann::json& overrides) {
  if (!overrides.is_object()) throw DomainError("train config must be an object");
  for (const auto& [k, v] : overrides.items()) base[k] = v;
  return base;
}

}  // namespace

nlohmann::json to_json(const QueryResult& q) {
  return {{"formula", q.formula}, {"sat", q.result.truth}, {"trace", to_json(q.result.trace)}};
}

Session::Session(fs::path dir) : dir_(std::move(dir)) { status_ = {{"job", nullptr}, {"state", "idle"}}; }

Session::~Session() {
  cancel_ = true;
  std::lock_guard g(worker_mutex_);
  if (worker_.joinable()) worker_.join();
}

bool Session::exists(const fs::path& dir) { return fs::exists(dir / "session.json"); }

std::unique_ptr<Session> Session::init(const fs::path& dir, const SessionOptions& options) {
  if (exists(dir)) throw Conflict("session_exists", "a session already exists in " + dir.string());
  fs::create_directories(dir);
  std::unique_ptr<Session> s(new Session(dir));
  auto log = [&](const std::string& line) {
    if (options.log) *options.log << line << std::endl;
  };
  s->seed_ = options.seed;
  if (options.semantics) {
    options.semantics->validate();
    s->semantics_ = *options.semantics;
  }
  s->train_defaults_ = scenario::retrain_config();

  log("generating datasets (seed " + std::to_string(options.seed) + ")");
  scenario::add_datasets(s->datasets_, options.seed);
  for (const auto& p : options.datasets) s->datasets_.put(nesy::load_dataset(p));
  for (const auto& name : s->datasets_.names()) save_dataset(*s->datasets_.get(name), dir / "datasets" / name);

  s->model_ = std::make_unique<Model>(ArchConfig{}, task_class_names());
  log("training the classifier");
  const auto history = train_task(*s->model_, *s->datasets_.get("train"), scenario::task_config());
  log("  final epoch accuracy " + std::to_string(history.back().accuracy));
  log("fitting concept probes");
  for (const auto& [name, r] : scenario::register_predicates(s->registry_, *s->model_, s->datasets_, options.seed))
    log("  " + name + " held-out accuracy " + std::to_string(r.held_out_accuracy));

  s->store_ = std::make_unique<CheckpointStore>(dir / "checkpoints");
  s->store_->save({0, s->model_->snapshot(0), s->kb_.to_text(), s->sat_locked(), std::nullopt, utc_timestamp()});
  s->persist_registry();
  s->persist_kb();
  s->persist_semantics();
  s->persist_state();
  return s;
}

std::unique_ptr<Session> Session::open(const fs::path& dir) {
  if (!exists(dir)) throw NotFound("no session in " + dir.string());
  std::unique_ptr<Session> s(new Session(dir));
  try {
    const auto state = read_json(dir / "session.json");
    if (state.at("format") != kSessionFormat) throw FormatError("session.json: unknown format", 0);
    s->seed_ = state.at("seed").get<std::uint64_t>();
    s->cycle_ = state.at("cycle").get<std::uint64_t>();
    s->next_job_ = state.at("next_job").get<std::uint64_t>();
    s->epoch_ = state.at("epoch").get<std::uint64_t>();
    s->train_defaults_ = train_config_from_json(state.at("train_defaults"));
    s->model_ = std::make_unique<Model>(arch_from_json(state.at("arch")),
                                        state.at("class_names").get<std::vector<std::string>>());
    s->semantics_ = semantics_from_json(read_json(dir / "semantics.json"));
    s->registry_ = PredicateRegistry::from_json(read_json(dir / "registry.json"));
    if (fs::exists(dir / "datasets"))
      for (const auto& entry : fs::directory_iterator(dir / "datasets"))
        if (entry.is_directory()) s->datasets_.put(nesy::load_dataset(entry.path()));
    s->store_ = std::make_unique<CheckpointStore>(dir / "checkpoints");
    s->model_->restore(s->store_->load(s->cycle_).params);
    s->kb_ = KnowledgeBase::from_text(read_text(dir / "kb.txt"), make_vocabulary(s->registry_, s->datasets_));
    s->kb_.reserve_ids(state.at("next_rule").get<std::uint64_t>());
  } catch (const CorruptSession&) {
    throw;
  } catch (const Error& e) {
    throw CorruptSession(dir.string() + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw CorruptSession(dir.string() + ": session.json: " + e.what());
  } catch (const fs::filesystem_error& e) {
    throw CorruptSession(dir.string() + ": " + e.what());
  }
  return s;
}

// ---- persistence ---------------------------------------------------------------

void Session::persist_state() const {
  const nlohmann::json state{{"format", kSessionFormat},
                             {"seed", seed_},
                             {"arch", to_json(model_->arch())},
                             {"class_names", model_->class_names()},
                             {"cycle", cycle_},
                             {"next_job", next_job_},
                             {"next_rule", kb_.next_id()},
                             {"epoch", epoch_.load()},
                             {"train_defaults", to_json(train_defaults_)}};
  write_text(dir_ / "session.json", state.dump(2) + "\n");
}

void Session::persist_registry() const { write_text(dir_ / "registry.json", registry_.to_json().dump() + "\n"); }
void Session::persist_kb() const { write_text(dir_ / "kb.txt", kb_.to_text()); }
void Session::persist_semantics() const { write_text(dir_ / "semantics.json", to_json(semantics_).dump(2) + "\n"); }

void Session::bump() {
  ++epoch_;
  persist_state();
}

void Session::ensure_idle() const {
  if (training_) throw Conflict("training_in_progress", "training in progress");
}

// ---- reads ---------------------------------------------------------------------

std::uint64_t Session::cycle() const {
  std::shared_lock lock(mutex_);
  return cycle_;
}

nlohmann::json Session::summary() const {
  std::shared_lock lock(mutex_);
  ensure_idle();
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& id : model_->layer_ids()) layers.push_back({{"id", id}, {"width", model_->layer_width(id)}});
  nlohmann::json predicates = nlohmann::json::array();
  for (const auto& name : registry_.names()) {
    const auto& b = registry_.binding(name);
    nlohmann::json p{{"name", name}};
    if (b.kind == PredicateBinding::Kind::class_output) {
      p["kind"] = "class";
      p["class"] = model_->class_names().at(b.index);
    } else {
      const auto& h = registry_.head(b.head);
      p["kind"] = h.squash == Squash::sigmoid ? "probe" : "group";
      p["layer"] = h.layer;
      if (h.squash == Squash::softmax) p["group"] = h.id;
    }
    predicates.push_back(p);
  }
  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& name : datasets_.names()) datasets.push_back({{"name", name}, {"size", datasets_.get(name)->size()}});
  return {{"arch", to_json(model_->arch())},
          {"class_names", model_->class_names()},
          {"layers", layers},
          {"probe_layer", Model::probe_layer()},
          {"predicates", predicates},
          {"datasets", datasets},
          {"cycle", cycle_},
          {"parameter_hash", std::to_string(model_->parameter_hash())}};
}

QueryResult Session::query(const std::string& text) const {
  std::shared_lock lock(mutex_);
  ensure_idle();
  const ValidatedFormula vf = validate_text(text, registry_, datasets_);
  return {vf.text, evaluate(*compile(vf, registry_, *model_, datasets_, semantics_), *model_)};
}

QueryResult Session::explain(const std::string& text, const std::string& example_id) const {
  std::shared_lock lock(mutex_);
  ensure_idle();
  const FormulaPtr f = parse_formula(text);
  EvalResult r = explain_local(f, example_id, registry_, *model_, datasets_, semantics_);
  return {r.trace.text, std::move(r)};
}

nlohmann::json Session::kb_json() const {
  std::shared_lock lock(mutex_);
  ensure_idle();
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : kb_.rules())
    rules.push_back(
        {{"id", r.id}, {"formula", r.formula.text}, {"enabled", r.enabled}, {"origin", to_string(r.origin)}});
  return {{"rules", rules}, {"text", kb_.to_text()}};
}

SatReport Session::sat_locked() const { return sat_report(kb_, registry_, *model_, datasets_, semantics_, cycle_); }

SatReport Session::sat() const {
  std::shared_lock lock(mutex_);
  ensure_idle();
  return sat_locked();
}

SemanticsConfig Session::semantics() const {
  std::shared_lock lock(mutex_);
  return semantics_;
}

TrainConfig Session::train_defaults() const {
  std::shared_lock lock(mutex_);
  return train_defaults_;
}

nlohmann::json Session::checkpoints() const {
  std::shared_lock lock(mutex_);
  ensure_idle();
  nlohmann::json out = nlohmann::json::array();
  for (auto c : store_->cycles()) {
    const auto cp = store_->load(c);
    nlohmann::json j{{"cycle", c}, {"created", cp.created}, {"current", c == cycle_}, {"report", to_json(cp.report)}};
    if (cp.before) j["before"] = to_json(*cp.before);
    out.push_back(j);
  }
  return out;
}

// ---- mutations -----------------------------------------------------------------

nlohmann::json Session::load_dataset(const fs::path& path) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  Dataset d = nesy::load_dataset(path);
  if (datasets_.contains(d.name)) throw Conflict("duplicate_dataset", "dataset '" + d.name + "' is already loaded");
  for (const auto& e : d.examples)
    if (datasets_.find_example(e.id)) throw Conflict("duplicate_example", "example id '" + e.id + "' already exists");
  save_dataset(d, dir_ / "datasets" / d.name);
  const nlohmann::json out{{"name", d.name}, {"size", d.size()}};
  datasets_.put(std::move(d));
  bump();
  return out;
}

ProbeReport Session::add_concept(const nlohmann::json& manifest) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  const ConceptManifest m = parse_concept_manifest(manifest);
  const ProbeReport r = train_probe(registry_, *model_, m.concept_name, m.layer, resolve(m, datasets_));
  persist_registry();
  bump();
  return r;
}

std::map<std::string, ProbeReport> Session::add_group(const nlohmann::json& manifest) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  const GroupManifest m = parse_group_manifest(manifest);
  std::vector<std::string> names;
  std::vector<ConceptExampleSet> sets;
  for (const auto& member : m.members) {
    names.push_back(member.concept_name);
    sets.push_back(resolve(member, datasets_));
  }
  auto reports = register_exclusive_group(registry_, *model_, names, m.layer, sets);
  persist_registry();
  bump();
  return reports;
}

std::string Session::add_rule(const std::string& text) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  const std::string id = kb_.add_rule(validate_text(text, registry_, datasets_));
  persist_kb();
  bump();
  return id;
}

void Session::remove_rule(const std::string& id) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  kb_.remove_rule(id);
  persist_kb();
  bump();
}

void Session::set_rule_enabled(const std::string& id, bool enabled) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  kb_.set_enabled(id, enabled);
  persist_kb();
  bump();
}

void Session::set_semantics(const SemanticsConfig& cfg) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  cfg.validate();
  semantics_ = cfg;
  persist_semantics();
  bump();
}

SatReport Session::revert(std::uint64_t cycle) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  const CycleCheckpoint c = store_->load(cycle);
  KnowledgeBase kb = KnowledgeBase::from_text(c.kb_text, make_vocabulary(registry_, datasets_));
  kb.reserve_ids(kb_.next_id());
  model_->restore(c.params);
  kb_ = std::move(kb);
  cycle_ = cycle;
  persist_kb();
  bump();
  return sat_locked();
}

// ---- training ------------------------------------------------------------------

std::string Session::start_training(const nlohmann::json& overrides) {
  std::unique_lock lock(mutex_);
  ensure_idle();
  const TrainConfig cfg = train_config_from_json(merge(to_json(train_defaults_), overrides));
  if (kb_.enabled_count() == 0) throw DomainError("knowledge base has no enabled rules");
  if (cfg.lambda > 0 && !datasets_.contains(cfg.task_dataset))
    throw NotFound("unknown task dataset '" + cfg.task_dataset + "'");

  // The state training starts from is the current cycle with the current KB.
  const SatReport before = sat_locked();
  const CycleCheckpoint current = store_->load(cycle_);
  store_->save({cycle_, model_->snapshot(cycle_), kb_.to_text(), before, current.before, current.created});

  const std::string job = "job-" + std::to_string(next_job_++);
  const auto cycles = store_->cycles();
  const std::uint64_t to_cycle = cycles.empty() ? 1 : cycles.back() + 1;
  std::lock_guard worker_guard(worker_mutex_);
  if (worker_.joinable()) worker_.join();
  cancel_ = false;
  training_ = true;
  {
    std::lock_guard g(status_mutex_);
    status_ = {{"job", job},          {"state", "running"},      {"step", 0},
               {"history", nlohmann::json::array()},             {"config", to_json(cfg)},
               {"from_cycle", cycle_}, {"to_cycle", to_cycle}};
  }
  bump();
  worker_ = std::thread(&Session::run_job, this, job, cfg, cycle_, to_cycle);
  return job;
}

void Session::run_job(std::string job, TrainConfig cfg, std::uint64_t from_cycle, std::uint64_t to_cycle) {
  fs::create_directories(dir_ / "history");
  std::ofstream log(dir_ / "history" / (job + ".jsonl"), std::ios::trunc);
  TrainProgress progress;
  progress.cancel = &cancel_;
  progress.on_step = [&](const StepRecord& r) {
    const auto j = to_json(r);
    log << j.dump() << "\n" << std::flush;
    std::lock_guard g(status_mutex_);
    status_["step"] = r.step;
    auto& h = status_["history"];
    h.push_back(j);
    if (h.size() > kStatusTail) h.erase(h.begin());
  };

  nlohmann::json final_status;
  try {
    TrainResult res = train_to_satisfy(*model_, kb_, registry_, datasets_, semantics_, cfg, progress);
    std::unique_lock lock(mutex_);
    res.before.cycle = from_cycle;
    res.after.cycle = to_cycle;
    store_->save({to_cycle, model_->snapshot(to_cycle), kb_.to_text(), res.after, res.before, utc_timestamp()});
    cycle_ = to_cycle;
    if (registry_.probes_trainable()) persist_registry();
    final_status = {{"state", res.cancelled ? "cancelled" : "done"},
                    {"reached_tau", res.reached_tau},
                    {"steps", res.history.empty() ? 0 : res.history.back().step},
                    {"before", to_json(res.before)},
                    {"after", to_json(res.after)},
                    {"cycle", to_cycle}};
    finish_job(final_status);
  } catch (const Error& e) {
    std::unique_lock lock(mutex_);
    finish_job({{"state", "failed"}, {"error", {{"code", e.code()}, {"message", e.what()}}}});
  } catch (const std::exception& e) {
    std::unique_lock lock(mutex_);
    finish_job({{"state", "failed"}, {"error", {{"code", "internal"}, {"message", e.what()}}}});
  }
}

// Called with the session lock held.
void Session::finish_job(const nlohmann::json& result) {
  {
    std::lock_guard g(status_mutex_);
    for (const auto& [k, v] : result.items()) status_[k] = v;
  }
  ++epoch_;
  persist_state();
  training_ = false;
}

nlohmann::json Session::training_status() const {
  std::lock_guard g(status_mutex_);
  return status_;
}

void Session::wait_for_training() {
  // Must not hold the session lock: the job takes it to finish.
  std::lock_guard g(worker_mutex_);
  if (worker_.joinable()) worker_.join();
}

void Session::cancel_training() { cancel_ = true; }

// ---- report --------------------------------------------------------------------

nlohmann::json Session::report() const {
  std::shared_lock lock(mutex_);
  ensure_idle();
  std::vector<CycleCheckpoint> cps;
  for (auto c : store_->cycles()) cps.push_back(store_->load(c));

  const SatReport now = sat_locked();
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& r : kb_.rules()) {
    nlohmann::json history = nlohmann::json::array();
    for (const auto& cp : cps)
      for (const auto& s : cp.report.rules)
        if (s.id == r.id) history.push_back({{"cycle", cp.cycle}, {"sat", s.sat}});
    nlohmann::json j{{"id", r.id},
                     {"formula", r.formula.text},
                     {"enabled", r.enabled},
                     {"origin", to_string(r.origin)},
                     {"sat_history", history}};
    for (const auto& s : now.rules)
      if (s.id == r.id) j["sat"] = s.sat;
    rules.push_back(j);
  }

  nlohmann::json probes = nlohmann::json::object();
  for (const auto& [name, r] : registry_.reports()) probes[name] = to_json(r);

  nlohmann::json index = nlohmann::json::array(), cycles = nlohmann::json::array();
  for (const auto& cp : cps) {
    nlohmann::json j{{"cycle", cp.cycle}, {"kb", cp.kb_text}, {"report", to_json(cp.report, false)}};
    if (cp.before) {
      j["before"] = to_json(*cp.before, false);
      cycles.push_back({{"cycle", cp.cycle},
                        {"from", cp.before->cycle},
                        {"before", cp.before->aggregate},
                        {"after", cp.report.aggregate}});
    }
    index.push_back(j);
  }

  nlohmann::json datasets = nlohmann::json::array();
  for (const auto& name : datasets_.names()) {
    const auto d = datasets_.get(name);
    datasets.push_back({{"name", name}, {"size", d->size()}, {"hash", std::to_string(hash_dataset(*d))}});
  }

  return {{"format", kReportFormat},
          {"timestamp", utc_timestamp()},
          {"semantics", to_json(semantics_)},
          {"cycle", cycle_},
          {"parameter_hash", std::to_string(model_->parameter_hash())},
          {"kb", {{"rules", rules}, {"aggregate", now.aggregate}, {"empty", now.empty}}},
          {"probes", probes},
          {"predicates", registry_.names()},
          {"datasets", datasets},
          {"cycles", cycles},
          {"checkpoints", index}};
}

void Session::export_report(const fs::path& path) const {
  const auto j = report();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, j.dump(2) + "\n");
}

std::vector<std::string> check_report_schema(const nlohmann::json& r) {
  std::vector<std::string> problems;
  auto need = [&](const nlohmann::json& obj, const std::string& where, const std::string& key,
                  nlohmann::json::value_t type) {
    if (!obj.is_object() || !obj.contains(key)) {
      problems.push_back(where + "." + key + " missing");
      return false;
    }
    const auto t = obj.at(key).type();
    const bool number = type == nlohmann::json::value_t::number_float &&
                        (t == nlohmann::json::value_t::number_integer || t == nlohmann::json::value_t::number_unsigned);
    const bool unsigned_ok = type == nlohmann::json::value_t::number_unsigned && t == nlohmann::json::value_t::number_integer &&
                             obj.at(key).get<std::int64_t>() >= 0;
    if (t != type && !number && !unsigned_ok) {
      problems.push_back(where + "." + key + " has the wrong type");
      return false;
    }
    return true;
  };
  using V = nlohmann::json::value_t;
  auto sat_ok = [&](const nlohmann::json& v, const std::string& where) {
    if (!v.is_number() || v.get<double>() < 0 || v.get<double>() > 1) problems.push_back(where + " not in [0,1]");
  };
  auto check_sat_report = [&](const nlohmann::json& s, const std::string& where) {
    if (need(s, where, "aggregate", V::number_float)) sat_ok(s["aggregate"], where + ".aggregate");
    need(s, where, "empty", V::boolean);
    need(s, where, "cycle", V::number_unsigned);
    if (need(s, where, "rules", V::array))
      for (const auto& x : s["rules"]) {
        need(x, where + ".rules[]", "id", V::string);
        need(x, where + ".rules[]", "formula", V::string);
        if (need(x, where + ".rules[]", "sat", V::number_float)) sat_ok(x["sat"], where + ".rules[].sat");
      }
  };

  if (need(r, "report", "format", V::string) && r["format"] != kReportFormat) problems.push_back("unknown format");
  need(r, "report", "timestamp", V::string);
  need(r, "report", "cycle", V::number_unsigned);
  need(r, "report", "parameter_hash", V::string);
  if (need(r, "report", "semantics", V::object)) {
    try {
      semantics_from_json(r["semantics"]);
    } catch (const Error& e) {
      problems.push_back(std::string("semantics: ") + e.what());
    }
  }
  if (need(r, "report", "kb", V::object)) {
    const auto& kb = r["kb"];
    need(kb, "kb", "empty", V::boolean);
    if (need(kb, "kb", "aggregate", V::number_float)) sat_ok(kb["aggregate"], "kb.aggregate");
    if (need(kb, "kb", "rules", V::array))
      for (const auto& x : kb["rules"]) {
        need(x, "kb.rules[]", "id", V::string);
        need(x, "kb.rules[]", "formula", V::string);
        need(x, "kb.rules[]", "enabled", V::boolean);
        if (need(x, "kb.rules[]", "origin", V::string) && x["origin"] != "user" && x["origin"] != "initial")
          problems.push_back("kb.rules[].origin unknown");
        if (x.contains("sat")) sat_ok(x["sat"], "kb.rules[].sat");
        if (need(x, "kb.rules[]", "sat_history", V::array))
          for (const auto& h : x["sat_history"]) {
            need(h, "sat_history[]", "cycle", V::number_unsigned);
            if (need(h, "sat_history[]", "sat", V::number_float)) sat_ok(h["sat"], "sat_history[].sat");
          }
      }
  }
  if (need(r, "report", "probes", V::object))
    for (const auto& [name, p] : r["probes"].items()) {
      for (const char* k : {"train_accuracy", "held_out_accuracy"})
        if (need(p, "probes." + name, k, V::number_float)) sat_ok(p[k], "probes." + name + "." + k);
      need(p, "probes." + name, "positives", V::number_unsigned);
      need(p, "probes." + name, "negatives", V::number_unsigned);
    }
  if (need(r, "report", "predicates", V::array))
    for (const auto& p : r["predicates"])
      if (!p.is_string()) problems.push_back("predicates[] not a string");
  if (need(r, "report", "datasets", V::array))
    for (const auto& d : r["datasets"]) {
      need(d, "datasets[]", "name", V::string);
      need(d, "datasets[]", "size", V::number_unsigned);
      need(d, "datasets[]", "hash", V::string);
    }
  if (need(r, "report", "cycles", V::array))
    for (const auto& c : r["cycles"]) {
      need(c, "cycles[]", "cycle", V::number_unsigned);
      need(c, "cycles[]", "from", V::number_unsigned);
      if (need(c, "cycles[]", "before", V::number_float)) sat_ok(c["before"], "cycles[].before");
      if (need(c, "cycles[]", "after", V::number_float)) sat_ok(c["after"], "cycles[].after");
    }
  if (need(r, "report", "checkpoints", V::array)) {
    std::int64_t last = -1;
    for (const auto& c : r["checkpoints"]) {
      if (need(c, "checkpoints[]", "cycle", V::number_unsigned)) {
        const auto cycle = c["cycle"].get<std::int64_t>();
        if (cycle <= last) problems.push_back("checkpoint cycles not increasing");
        last = cycle;
      }
      need(c, "checkpoints[]", "kb", V::string);
      if (need(c, "checkpoints[]", "report", V::object)) check_sat_report(c["report"], "checkpoints[].report");
      if (c.contains("before")) check_sat_report(c["before"], "checkpoints[].before");
    }
  }
  return problems;
}

}  // namespace nesy
