#include "nesy/fuzzy.hpp"

#include <algorithm>
#include <cmath>

#include "nesy/error.hpp"

namespace nesy {

namespace {

double unit(double v) { return std::clamp(v, 0.0, 1.0); }

struct NegateKernel final : UnaryKernel {
  const char* name() const override { return "not"; }
  double value(double x) const override { return 1.0 - x; }
  double derivative(double, double) const override { return -1.0; }
};

struct ConjunctionKernel final : BinaryKernel {
  explicit ConjunctionKernel(Conjunction k) : kind(k) {}
  Conjunction kind;

  const char* name() const override { return "and"; }
  double value(double a, double b) const override {
    switch (kind) {
      case Conjunction::product: return a * b;
      case Conjunction::minimum: return std::min(a, b);
      case Conjunction::lukasiewicz: return std::max(0.0, a + b - 1.0);
    }
    return 0.0;
  }
  void partials(double a, double b, double, double& da, double& db) const override {
    switch (kind) {
      case Conjunction::product:
        da = b;
        db = a;
        return;
      case Conjunction::minimum:
        da = a <= b ? 1.0 : 0.0;
        db = a <= b ? 0.0 : 1.0;
        return;
      case Conjunction::lukasiewicz:
        da = db = a + b - 1.0 > 0.0 ? 1.0 : 0.0;
        return;
    }
  }
  int branch(double a, double b) const override {
    if (kind == Conjunction::minimum) return a <= b;
    if (kind == Conjunction::lukasiewicz) return a + b - 1.0 > 0.0;
    return 0;
  }
};

struct DisjunctionKernel final : BinaryKernel {
  explicit DisjunctionKernel(Disjunction k) : kind(k) {}
  Disjunction kind;

  const char* name() const override { return "or"; }
  double value(double a, double b) const override {
    switch (kind) {
      case Disjunction::probabilistic_sum: return unit(a + b - a * b);
      case Disjunction::maximum: return std::max(a, b);
      case Disjunction::bounded_sum: return std::min(1.0, a + b);
    }
    return 0.0;
  }
  void partials(double a, double b, double, double& da, double& db) const override {
    switch (kind) {
      case Disjunction::probabilistic_sum:
        da = 1.0 - b;
        db = 1.0 - a;
        return;
      case Disjunction::maximum:
        da = a >= b ? 1.0 : 0.0;
        db = a >= b ? 0.0 : 1.0;
        return;
      case Disjunction::bounded_sum:
        da = db = a + b < 1.0 ? 1.0 : 0.0;
        return;
    }
  }
  int branch(double a, double b) const override {
    if (kind == Disjunction::maximum) return a >= b;
    if (kind == Disjunction::bounded_sum) return a + b < 1.0;
    return 0;
  }
};

struct ImplicationKernel final : BinaryKernel {
  explicit ImplicationKernel(Implication k) : kind(k) {}
  Implication kind;

  const char* name() const override { return "implies"; }
  double value(double a, double b) const override {
    switch (kind) {
      case Implication::reichenbach: return unit(1.0 - a + a * b);
      case Implication::goedel: return a <= b ? 1.0 : b;
      case Implication::lukasiewicz: return std::min(1.0, 1.0 - a + b);
    }
    return 0.0;
  }
  void partials(double a, double b, double, double& da, double& db) const override {
    switch (kind) {
      case Implication::reichenbach:
        da = b - 1.0;
        db = a;
        return;
      case Implication::goedel:
        // At a == b the value comes from the a <= b piece, whose gradient is 0.
        da = 0.0;
        db = a <= b ? 0.0 : 1.0;
        return;
      case Implication::lukasiewicz:
        da = b < a ? -1.0 : 0.0;
        db = b < a ? 1.0 : 0.0;
        return;
    }
  }
  int branch(double a, double b) const override {
    if (kind == Implication::reichenbach) return 0;
    return a <= b;
  }
};

// Generalized mean (error form when `error` is set). Values are computed on
// the raw inputs; gradients on inputs clamped to [eps, 1-eps], zero where the
// clamp is active.
struct PMeanKernel final : ReduceKernel {
  PMeanKernel(double p, double eps, bool error) : p(p), eps(eps), error(error) {}
  double p;
  double eps;
  bool error;

  const char* name() const override { return error ? "forall" : "exists"; }

  double value(std::span<const double> row) const override {
    if (row.size() == 1) return row[0];
    double total = 0.0;
    for (double a : row) total += std::pow(error ? 1.0 - a : a, p);
    const double m = std::pow(total / static_cast<double>(row.size()), 1.0 / p);
    return error ? unit(1.0 - m) : unit(m);
  }

  void gradient(std::span<const double> row, double, std::span<double> d_row) const override {
    const std::size_t n = row.size();
    if (n == 1) {
      d_row[0] = 1.0;
      return;
    }
    double total = 0.0;
    for (double a : row) {
      const double c = std::clamp(a, eps, 1.0 - eps);
      total += std::pow(error ? 1.0 - c : c, p);
    }
    const double m = total / static_cast<double>(n);
    const double outer = std::pow(m, 1.0 / p - 1.0) / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = row[i];
      if (a < eps || a > 1.0 - eps) {
        d_row[i] = 0.0;
        continue;
      }
      d_row[i] = outer * std::pow(error ? 1.0 - a : a, p - 1.0);
    }
  }
};

std::shared_ptr<const UnaryKernel> negate_kernel() {
  static const auto k = std::make_shared<const NegateKernel>();
  return k;
}

std::shared_ptr<const BinaryKernel> conjunction_kernel(Conjunction c) {
  static const std::shared_ptr<const BinaryKernel> ks[] = {
      std::make_shared<const ConjunctionKernel>(Conjunction::product),
      std::make_shared<const ConjunctionKernel>(Conjunction::minimum),
      std::make_shared<const ConjunctionKernel>(Conjunction::lukasiewicz)};
  return ks[static_cast<int>(c)];
}

std::shared_ptr<const BinaryKernel> disjunction_kernel(Disjunction d) {
  static const std::shared_ptr<const BinaryKernel> ks[] = {
      std::make_shared<const DisjunctionKernel>(Disjunction::probabilistic_sum),
      std::make_shared<const DisjunctionKernel>(Disjunction::maximum),
      std::make_shared<const DisjunctionKernel>(Disjunction::bounded_sum)};
  return ks[static_cast<int>(d)];
}

std::shared_ptr<const BinaryKernel> implication_kernel(Implication i) {
  static const std::shared_ptr<const BinaryKernel> ks[] = {
      std::make_shared<const ImplicationKernel>(Implication::reichenbach),
      std::make_shared<const ImplicationKernel>(Implication::goedel),
      std::make_shared<const ImplicationKernel>(Implication::lukasiewicz)};
  return ks[static_cast<int>(i)];
}

void check_truth(double a, const char* op) {
  if (!(a >= 0.0 && a <= 1.0))
    throw DomainError(std::string(op) + ": truth value " + std::to_string(a) + " outside [0,1]");
}

void check_domain(std::span<const double> values, const char* op) {
  if (values.empty()) throw DomainError(std::string(op) + ": quantifier over an empty domain");
  for (double a : values) check_truth(a, op);
}

template <typename E>
E parse_enum(const nlohmann::json& j, const char* key, std::initializer_list<std::pair<const char*, E>> names) {
  const std::string s = j.at(key).get<std::string>();
  for (const auto& [n, e] : names)
    if (s == n) return e;
  throw DomainError(std::string("unknown ") + key + " '" + s + "'");
}

}  // namespace

// ---- config ------------------------------------------------------------------

void SemanticsConfig::validate() const {
  for (double p : {p_forall, p_exists, p_kb})
    if (!(p >= 1.0) || !std::isfinite(p)) throw DomainError("generalized-mean exponents must be >= 1");
  if (!(epsilon > 0.0 && epsilon <= 1e-3)) throw DomainError("epsilon must be in (0, 1e-3]");
}

SemanticsConfig SemanticsConfig::goedel_logic() {
  SemanticsConfig c;
  c.conjunction = Conjunction::minimum;
  c.disjunction = Disjunction::maximum;
  c.implication = Implication::goedel;
  return c;
}

SemanticsConfig SemanticsConfig::lukasiewicz_logic() {
  SemanticsConfig c;
  c.conjunction = Conjunction::lukasiewicz;
  c.disjunction = Disjunction::bounded_sum;
  c.implication = Implication::lukasiewicz;
  return c;
}

std::string to_string(Conjunction c) {
  switch (c) {
    case Conjunction::product: return "product";
    case Conjunction::minimum: return "minimum";
    case Conjunction::lukasiewicz: return "lukasiewicz";
  }
  return "?";
}

std::string to_string(Disjunction d) {
  switch (d) {
    case Disjunction::probabilistic_sum: return "probabilistic-sum";
    case Disjunction::maximum: return "maximum";
    case Disjunction::bounded_sum: return "bounded-sum";
  }
  return "?";
}

std::string to_string(Implication i) {
  switch (i) {
    case Implication::reichenbach: return "reichenbach";
    case Implication::goedel: return "goedel";
    case Implication::lukasiewicz: return "lukasiewicz";
  }
  return "?";
}

nlohmann::json to_json(const SemanticsConfig& cfg) {
  return {{"conjunction", to_string(cfg.conjunction)},
          {"disjunction", to_string(cfg.disjunction)},
          {"implication", to_string(cfg.implication)},
          {"p_forall", cfg.p_forall},
          {"p_exists", cfg.p_exists},
          {"p_kb", cfg.p_kb},
          {"epsilon", cfg.epsilon}};
}

SemanticsConfig semantics_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw DomainError("semantics config must be a JSON object");
  SemanticsConfig c;
  if (j.contains("conjunction"))
    c.conjunction = parse_enum<Conjunction>(j, "conjunction",
                                            {{"product", Conjunction::product},
                                             {"minimum", Conjunction::minimum},
                                             {"lukasiewicz", Conjunction::lukasiewicz}});
  if (j.contains("disjunction"))
    c.disjunction = parse_enum<Disjunction>(j, "disjunction",
                                            {{"probabilistic-sum", Disjunction::probabilistic_sum},
                                             {"maximum", Disjunction::maximum},
                                             {"bounded-sum", Disjunction::bounded_sum}});
  if (j.contains("implication"))
    c.implication = parse_enum<Implication>(j, "implication",
                                            {{"reichenbach", Implication::reichenbach},
                                             {"goedel", Implication::goedel},
                                             {"lukasiewicz", Implication::lukasiewicz}});
  try {
    if (j.contains("p_forall")) c.p_forall = j.at("p_forall").get<double>();
    if (j.contains("p_exists")) c.p_exists = j.at("p_exists").get<double>();
    if (j.contains("p_kb")) c.p_kb = j.at("p_kb").get<double>();
    if (j.contains("epsilon")) c.epsilon = j.at("epsilon").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("semantics config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- plain forms -------------------------------------------------------------

double negate(const SemanticsConfig&, double a) {
  check_truth(a, "not");
  return negate_kernel()->value(a);
}

double conjoin(const SemanticsConfig& cfg, double a, double b) {
  check_truth(a, "and");
  check_truth(b, "and");
  return conjunction_kernel(cfg.conjunction)->value(a, b);
}

double disjoin(const SemanticsConfig& cfg, double a, double b) {
  check_truth(a, "or");
  check_truth(b, "or");
  return disjunction_kernel(cfg.disjunction)->value(a, b);
}

double imply(const SemanticsConfig& cfg, double a, double b) {
  check_truth(a, "implies");
  check_truth(b, "implies");
  return implication_kernel(cfg.implication)->value(a, b);
}

double aggregate_forall(const SemanticsConfig& cfg, std::span<const double> values) {
  check_domain(values, "forall");
  return PMeanKernel(cfg.p_forall, cfg.epsilon, true).value(values);
}

double aggregate_exists(const SemanticsConfig& cfg, std::span<const double> values) {
  check_domain(values, "exists");
  return PMeanKernel(cfg.p_exists, cfg.epsilon, false).value(values);
}

KbAggregate aggregate_kb(const SemanticsConfig& cfg, std::span<const double> rule_truths) {
  if (rule_truths.empty()) return {1.0, true};
  for (double a : rule_truths) check_truth(a, "kb");
  return {PMeanKernel(cfg.p_kb, cfg.epsilon, true).value(rule_truths), false};
}

// ---- graph forms -------------------------------------------------------------

NodeId negate(Graph& g, const SemanticsConfig&, NodeId a) { return g.unary(a, negate_kernel()); }

NodeId conjoin(Graph& g, const SemanticsConfig& cfg, NodeId a, NodeId b) {
  return g.binary(a, b, conjunction_kernel(cfg.conjunction));
}

NodeId disjoin(Graph& g, const SemanticsConfig& cfg, NodeId a, NodeId b) {
  return g.binary(a, b, disjunction_kernel(cfg.disjunction));
}

NodeId imply(Graph& g, const SemanticsConfig& cfg, NodeId a, NodeId b) {
  return g.binary(a, b, implication_kernel(cfg.implication));
}

NodeId aggregate_forall(Graph& g, const SemanticsConfig& cfg, NodeId values) {
  return g.reduce_last(values, std::make_shared<const PMeanKernel>(cfg.p_forall, cfg.epsilon, true));
}

NodeId aggregate_exists(Graph& g, const SemanticsConfig& cfg, NodeId values) {
  return g.reduce_last(values, std::make_shared<const PMeanKernel>(cfg.p_exists, cfg.epsilon, false));
}

NodeId aggregate_kb(Graph& g, const SemanticsConfig& cfg, NodeId rule_truths) {
  return g.reduce_last(rule_truths, std::make_shared<const PMeanKernel>(cfg.p_kb, cfg.epsilon, true));
}

}  // namespace nesy
