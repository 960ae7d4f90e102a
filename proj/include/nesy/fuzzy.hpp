#pragma once

#include <memory>
#include <span>
#include <string>

#include <json.hpp>

#include "nesy/graph.hpp"

namespace nesy {

enum class Conjunction { product, minimum, lukasiewicz };
enum class Disjunction { probabilistic_sum, maximum, bounded_sum };
enum class Implication { reichenbach, goedel, lukasiewicz };

// Real-valued semantics of the connectives and quantifiers. Defaults give
// product real logic with p = 2 generalized means.
struct SemanticsConfig {
  Conjunction conjunction = Conjunction::product;
  Disjunction disjunction = Disjunction::probabilistic_sum;
  Implication implication = Implication::reichenbach;
  double p_forall = 2.0;
  double p_exists = 2.0;
  double p_kb = 2.0;
  // Aggregator gradients are taken at inputs clamped to [epsilon, 1 - epsilon].
  double epsilon = 1e-7;

  void validate() const;

  static SemanticsConfig product_logic() { return {}; }
  static SemanticsConfig goedel_logic();
  static SemanticsConfig lukasiewicz_logic();

  bool operator==(const SemanticsConfig&) const = default;
};

nlohmann::json to_json(const SemanticsConfig& cfg);
// Missing keys keep their defaults; unknown operator names are rejected.
SemanticsConfig semantics_from_json(const nlohmann::json& j);

std::string to_string(Conjunction c);
std::string to_string(Disjunction d);
std::string to_string(Implication i);

// ---- plain-value forms: inputs must lie in [0,1] -----------------------------

double negate(const SemanticsConfig& cfg, double a);
double conjoin(const SemanticsConfig& cfg, double a, double b);
double disjoin(const SemanticsConfig& cfg, double a, double b);
double imply(const SemanticsConfig& cfg, double a, double b);
// 1 - ((1/n) sum (1 - a_i)^p)^(1/p), p = p_forall. Throws on an empty domain.
double aggregate_forall(const SemanticsConfig& cfg, std::span<const double> values);
// ((1/n) sum a_i^p)^(1/p), p = p_exists. Throws on an empty domain.
double aggregate_exists(const SemanticsConfig& cfg, std::span<const double> values);

struct KbAggregate {
  double value = 1.0;
  bool empty = true;
};
// p-mean-error over rule truths with p = p_kb; an empty KB is satisfied (1.0).
KbAggregate aggregate_kb(const SemanticsConfig& cfg, std::span<const double> rule_truths);

// ---- graph forms: identical arithmetic, differentiable -----------------------

NodeId negate(Graph& g, const SemanticsConfig& cfg, NodeId a);
NodeId conjoin(Graph& g, const SemanticsConfig& cfg, NodeId a, NodeId b);
NodeId disjoin(Graph& g, const SemanticsConfig& cfg, NodeId a, NodeId b);
NodeId imply(Graph& g, const SemanticsConfig& cfg, NodeId a, NodeId b);
// Quantifiers reduce the last axis.
NodeId aggregate_forall(Graph& g, const SemanticsConfig& cfg, NodeId values);
NodeId aggregate_exists(Graph& g, const SemanticsConfig& cfg, NodeId values);
// Input: vector of rule truths (non-empty).
NodeId aggregate_kb(Graph& g, const SemanticsConfig& cfg, NodeId rule_truths);

}  // namespace nesy
