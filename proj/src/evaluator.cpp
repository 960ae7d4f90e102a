#include "nesy/evaluator.hpp"

#include <algorithm>
#include <deque>
#include <numeric>

#include "nesy/error.hpp"

namespace nesy {

// ---- datasets ------------------------------------------------------------------

void DatasetTable::put(std::shared_ptr<const Dataset> d) {
  if (!d || d->name.empty()) throw DomainError("dataset needs a name");
  sets_[d->name] = std::move(d);
  ++epoch_;
}

bool DatasetTable::remove(const std::string& name) {
  if (!sets_.erase(name)) return false;
  ++epoch_;
  return true;
}

std::shared_ptr<const Dataset> DatasetTable::get(const std::string& name) const {
  auto it = sets_.find(name);
  if (it == sets_.end()) throw NotFound("dataset '" + name + "' is not loaded");
  return it->second;
}

const ExampleImage* DatasetTable::find_example(const std::string& id) const {
  for (const auto& [name, d] : sets_)
    if (const ExampleImage* e = d->find(id)) return e;
  return nullptr;
}

std::vector<std::string> DatasetTable::names() const {
  std::vector<std::string> out;
  for (const auto& [name, d] : sets_) out.push_back(name);
  return out;
}

Vocabulary make_vocabulary(const PredicateRegistry& registry, const DatasetTable& datasets) {
  return {[&registry](const std::string& p) { return registry.contains(p); },
          [&datasets](const std::string& d) { return datasets.contains(d); },
          [&datasets](const std::string& e) { return datasets.find_example(e) != nullptr; }};
}

ValidatedFormula validate_text(const std::string& text, const PredicateRegistry& registry,
                               const DatasetTable& datasets) {
  return validate(parse_formula(text), make_vocabulary(registry, datasets));
}

// ---- traces --------------------------------------------------------------------

std::size_t TruthTrace::node_count() const {
  std::size_t n = 1;
  for (const auto& c : children) n += c.node_count();
  return n;
}

nlohmann::json to_json(const TruthTrace& t) {
  nlohmann::json j{{"op", t.op}, {"text", t.text}, {"truth", t.truth}, {"span", {t.span.begin, t.span.end}}};
  if (t.open) j["open"] = true;
  nlohmann::json children = nlohmann::json::array();
  for (const auto& c : t.children) children.push_back(to_json(c));
  j["children"] = std::move(children);
  auto list = [](const std::vector<ExampleTruth>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"id", e.id}, {"truth", e.truth}});
    return a;
  };
  if (t.op == "forall" || t.op == "exists") {
    j["examples"] = list(t.examples);
    if (t.examples_truncated) j["examples_truncated"] = true;
    j["worst_examples"] = list(t.worst_examples);
  }
  return j;
}

namespace {

const char* op_name(FormulaKind k) {
  switch (k) {
    case FormulaKind::predicate: return "predicate";
    case FormulaKind::negation: return "not";
    case FormulaKind::conjunction: return "and";
    case FormulaKind::disjunction: return "or";
    case FormulaKind::implication: return "implies";
    case FormulaKind::forall: return "forall";
    case FormulaKind::exists: return "exists";
  }
  return "?";
}

// Replaces variable terms named `name` by an example reference, stopping at
// quantifiers that rebind the name.
FormulaPtr bind_variable(const FormulaPtr& f, const std::string& name, const std::string& example_id) {
  if (f->kind == FormulaKind::predicate) {
    if (f->term.kind != Term::Kind::variable || f->term.name != name) return f;
    Term t = f->term;
    t.kind = Term::Kind::example;
    t.name = example_id;
    return make_predicate(f->name, t, f->span);
  }
  if (f->is_quantifier() && f->name == name) return f;
  auto copy = std::make_shared<Formula>(*f);
  if (f->lhs) copy->lhs = bind_variable(f->lhs, name, example_id);
  if (f->rhs) copy->rhs = bind_variable(f->rhs, name, example_id);
  return copy;
}

}  // namespace

// ---- compilation ---------------------------------------------------------------

class PlanBuilder {
 public:
  PlanBuilder(EvalPlan& plan, const PredicateRegistry& registry, const Model& model, const DatasetTable& datasets)
      : plan_(plan), g_(*plan.graph_), registry_(registry), model_(model), datasets_(datasets) {}

  std::size_t build(const Formula& f, const std::vector<EvalPlan::Var>& ctx, int depth) {
    const std::size_t slot = plan_.slots_.size();
    plan_.slots_.push_back({&f, 0, ctx, {}});
    NodeId node = 0;
    const SemanticsConfig& sem = plan_.semantics_;
    switch (f.kind) {
      case FormulaKind::predicate:
        node = predicate(f, ctx);
        break;
      case FormulaKind::negation: {
        const std::size_t a = build(*f.lhs, ctx, depth);
        plan_.slots_[slot].children = {a};
        node = negate(g_, sem, plan_.slots_[a].node);
        break;
      }
      case FormulaKind::conjunction:
      case FormulaKind::disjunction:
      case FormulaKind::implication: {
        const std::size_t a = build(*f.lhs, ctx, depth);
        const std::size_t b = build(*f.rhs, ctx, depth);
        plan_.slots_[slot].children = {a, b};
        const NodeId x = plan_.slots_[a].node, y = plan_.slots_[b].node;
        node = f.kind == FormulaKind::conjunction   ? conjoin(g_, sem, x, y)
               : f.kind == FormulaKind::disjunction ? disjoin(g_, sem, x, y)
                                                    : imply(g_, sem, x, y);
        break;
      }
      case FormulaKind::forall:
      case FormulaKind::exists: {
        if (depth + 1 > kMaxQuantifierNesting)
          throw DomainError("quantifiers nest deeper than " + std::to_string(kMaxQuantifierNesting) + " levels");
        auto dataset = datasets_.get(f.dataset);
        if (dataset->size() == 0) throw DomainError("dataset '" + f.dataset + "' is empty");
        std::vector<EvalPlan::Var> inner = ctx;
        inner.push_back({f.name, dataset});
        std::size_t grid = 1;
        for (const auto& v : inner) grid *= v.dataset->size();
        if (grid > kMaxQuantifierGrid)
          throw DomainError("quantifier grid of " + std::to_string(grid) + " bindings exceeds " +
                            std::to_string(kMaxQuantifierGrid));
        plan_.bindings_.emplace_back(f.name, f.dataset);
        const std::size_t body = build(*f.lhs, inner, depth + 1);
        plan_.slots_[slot].children = {body};
        node = f.kind == FormulaKind::forall ? aggregate_forall(g_, sem, plan_.slots_[body].node)
                                             : aggregate_exists(g_, sem, plan_.slots_[body].node);
        break;
      }
    }
    plan_.slots_[slot].node = node;
    return slot;
  }

  static std::unique_ptr<EvalPlan> make(const ValidatedFormula& formula, const PredicateRegistry& registry,
                                         const Model& model, const DatasetTable& datasets,
                                         const SemanticsConfig& semantics, const EvalOptions& options) {
    if (!formula.formula) throw DomainError("empty formula");
    semantics.validate();
    auto plan = std::make_unique<EvalPlan>();
    plan->formula_ = formula;
    plan->semantics_ = semantics;
    plan->options_ = options;
    plan->graph_ = std::make_unique<Graph>();
    plan->registry_ = &registry;
    plan->datasets_ = &datasets;
    plan->model_ = &model;
    plan->registry_epoch_ = registry.epoch();
    plan->dataset_epoch_ = datasets.epoch();
    plan->fingerprint_ = model.fingerprint();
    PlanBuilder(*plan, registry, model, datasets).build(*formula.formula, {}, 0);
    if (!plan->graph_->shape(plan->root()).empty()) throw DomainError("formula is not closed");
    plan->evaluated_hash_ = model.parameter_hash();
    return plan;
  }

 private:
  struct Source {
    std::deque<Model::Nodes> chunks;
    std::deque<Grounder> grounders;
    std::map<std::string, NodeId> truths;  // predicate -> [n] (or scalar for examples)
  };

  static Shape shape_of(const std::vector<EvalPlan::Var>& ctx) {
    Shape s;
    for (const auto& v : ctx) s.push_back(v.dataset->size());
    return s;
  }

  Source& source_for_dataset(const std::shared_ptr<const Dataset>& d) {
    auto it = sources_.find("d:" + d->name);
    if (it != sources_.end()) return it->second;
    Source& s = sources_["d:" + d->name];
    const std::size_t n = d->size();
    const std::size_t chunk = plan_.options_.chunk_size == 0 ? n : plan_.options_.chunk_size;
    for (std::size_t start = 0; start < n; start += chunk) {
      std::vector<std::size_t> idx(std::min(chunk, n - start));
      std::iota(idx.begin(), idx.end(), start);
      s.chunks.push_back(model_.build(g_, g_.constant(d->batch(idx))));
      s.grounders.emplace_back(registry_, g_, s.chunks.back());
    }
    return s;
  }

  Source& source_for_example(const std::string& id) {
    auto it = sources_.find("e:" + id);
    if (it != sources_.end()) return it->second;
    const ExampleImage* e = datasets_.find_example(id);
    if (!e) throw NotFound("unknown example '" + id + "'");
    Source& s = sources_["e:" + id];
    s.chunks.push_back(model_.build(g_, g_.constant(batch_of({e}))));
    s.grounders.emplace_back(registry_, g_, s.chunks.back());
    return s;
  }

  NodeId truth_vector(Source& s, const std::string& predicate) {
    auto it = s.truths.find(predicate);
    if (it != s.truths.end()) return it->second;
    std::vector<NodeId> parts;
    for (auto& gr : s.grounders) parts.push_back(gr.truth(predicate));
    const NodeId v = parts.size() == 1 ? parts.front() : g_.concat(parts);
    return s.truths[predicate] = v;
  }

  NodeId predicate(const Formula& f, const std::vector<EvalPlan::Var>& ctx) {
    const Shape out = shape_of(ctx);
    if (f.term.kind == Term::Kind::example) {
      Source& s = source_for_example(f.term.name);
      auto key = "#scalar:" + f.name;
      NodeId scalar;
      if (auto it = s.truths.find(key); it != s.truths.end()) {
        scalar = it->second;
      } else {
        scalar = g_.reshape(truth_vector(s, f.name), {});
        s.truths[key] = scalar;
      }
      return out.empty() ? scalar : g_.expand(scalar, out, {});
    }
    std::size_t pos = ctx.size();
    for (std::size_t i = ctx.size(); i-- > 0;)
      if (ctx[i].name == f.term.name) {
        pos = i;
        break;
      }
    if (pos == ctx.size()) throw DomainError("unbound variable " + f.term.name);
    const NodeId v = truth_vector(source_for_dataset(ctx[pos].dataset), f.name);
    return out.size() == 1 ? v : g_.expand(v, out, {pos});
  }

  EvalPlan& plan_;
  Graph& g_;
  const PredicateRegistry& registry_;
  const Model& model_;
  const DatasetTable& datasets_;
  std::map<std::string, Source> sources_;
};

std::unique_ptr<EvalPlan> compile(const ValidatedFormula& formula, const PredicateRegistry& registry,
                                  const Model& model, const DatasetTable& datasets,
                                  const SemanticsConfig& semantics, const EvalOptions& options) {
  return PlanBuilder::make(formula, registry, model, datasets, semantics, options);
}

// ---- evaluation ----------------------------------------------------------------

TruthTrace EvalPlan::trace(std::size_t index) const {
  const Slot& s = slots_[index];
  const Formula& f = *s.formula;
  const Tensor& v = graph_->value(s.node);
  TruthTrace t;
  t.op = op_name(f.kind);
  t.text = print_formula(f);
  t.span = f.span;
  t.open = !s.context.empty();
  const auto values = v.values();
  t.truth = values.empty() ? 0.0 : std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  if (!t.open) t.truth = values.front();
  for (std::size_t c : s.children) t.children.push_back(trace(c));

  if (f.is_quantifier()) {
    const Slot& body = slots_[s.children.front()];
    const Tensor& bv = graph_->value(body.node);
    const auto& ctx = body.context;
    auto id_of = [&](std::size_t flat) {
      std::vector<std::size_t> idx(ctx.size());
      for (std::size_t i = ctx.size(); i-- > 0;) {
        idx[i] = flat % ctx[i].dataset->size();
        flat /= ctx[i].dataset->size();
      }
      std::string id;
      for (std::size_t i = 0; i < ctx.size(); ++i) {
        if (i) id += ",";
        id += ctx[i].dataset->examples[idx[i]].id;
      }
      return id;
    };
    const std::size_t n = bv.size();
    if (n <= options_.max_trace_examples) {
      for (std::size_t i = 0; i < n; ++i) t.examples.push_back({id_of(i), bv[i]});
    } else {
      t.examples_truncated = true;
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min(options_.worst_k, n);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return bv[a] < bv[b] || (bv[a] == bv[b] && a < b); });
    for (std::size_t i = 0; i < k; ++i) t.worst_examples.push_back({id_of(order[i]), bv[order[i]]});
  }
  return t;
}

EvalResult evaluate(const EvalPlan& plan, const Model& model) {
  if (&model != plan.model_ || model.fingerprint() != plan.fingerprint_)
    throw Conflict("stale_plan", "plan was compiled for a different model; recompile");
  if (plan.registry_->epoch() != plan.registry_epoch_)
    throw Conflict("stale_plan", "predicate registry changed since compilation; recompile");
  if (plan.datasets_->epoch() != plan.dataset_epoch_)
    throw Conflict("stale_plan", "datasets changed since compilation; recompile");
  std::lock_guard lock(plan.mutex_);
  const std::uint64_t hash = model.parameter_hash();
  if (hash != plan.evaluated_hash_) {
    plan.graph_->forward();
    plan.evaluated_hash_ = hash;
  }
  EvalResult r;
  r.truth = plan.graph_->value(plan.root())[0];
  r.trace = plan.trace(0);
  return r;
}

EvalResult explain_local(const FormulaPtr& formula, const std::string& example_id,
                         const PredicateRegistry& registry, const Model& model, const DatasetTable& datasets,
                         const SemanticsConfig& semantics) {
  if (!datasets.find_example(example_id)) throw NotFound("unknown example '" + example_id + "'");
  FormulaPtr local;
  if (formula->is_quantifier()) {
    local = bind_variable(formula->lhs, formula->name, example_id);
  } else {
    std::vector<std::string> free;
    for (const auto& ref : example_refs(*formula))
      if (!datasets.find_example(ref)) free.push_back(ref);
    if (free.size() > 1) throw DomainError("local explanation needs at most one free example slot");
    local = free.empty() ? formula : substitute(formula, free.front(), example_id);
  }
  const ValidatedFormula vf = validate(local, make_vocabulary(registry, datasets));
  return evaluate(*compile(vf, registry, model, datasets, semantics), model);
}

}  // namespace nesy
