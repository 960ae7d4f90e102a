#pragma once

#include <random>
#include <string>
#include <vector>

#include "nesy/query.hpp"

namespace nesy::testing {

// Random closed-or-open formula trees. Variables are only emitted where a
// quantifier binds them, and example names never collide with variables, so
// print/parse round-trips are well defined.
class FormulaGenerator {
 public:
  FormulaGenerator(std::uint64_t seed, std::vector<std::string> predicates, std::vector<std::string> datasets,
                   std::vector<std::string> examples, int max_quantifier_depth = 2)
      : rng_(seed),
        predicates_(std::move(predicates)),
        datasets_(std::move(datasets)),
        examples_(std::move(examples)),
        max_qdepth_(max_quantifier_depth) {}

  FormulaPtr generate(int max_depth) {
    std::vector<std::string> scope;
    return node(max_depth, scope, 0);
  }

 private:
  template <class T>
  const T& pick(const std::vector<T>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng_)];
  }

  FormulaPtr leaf(const std::vector<std::string>& scope) {
    const std::string& p = pick(predicates_);
    const bool use_var = !scope.empty() && (examples_.empty() || coin(0.75));
    if (use_var) return make_predicate(p, var(pick(scope)));
    return make_predicate(p, example(pick(examples_)));
  }

  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }

  FormulaPtr node(int depth, std::vector<std::string>& scope, int qdepth) {
    if (depth <= 1 || ((!scope.empty() || !examples_.empty()) && coin(0.2))) {
      if (scope.empty() && examples_.empty()) return quantified(depth, scope, qdepth);
      return leaf(scope);
    }
    const int choice = std::uniform_int_distribution<int>(0, 5)(rng_);
    if (choice == 5 || (scope.empty() && examples_.empty())) {
      if (qdepth < max_qdepth_ && !datasets_.empty()) return quantified(depth, scope, qdepth);
    }
    switch (choice) {
      case 0: return make_not(node(depth - 1, scope, qdepth));
      case 1: return make_and(node(depth - 1, scope, qdepth), node(depth - 1, scope, qdepth));
      case 2: return make_or(node(depth - 1, scope, qdepth), node(depth - 1, scope, qdepth));
      case 3:
      case 4: return make_implies(node(depth - 1, scope, qdepth), node(depth - 1, scope, qdepth));
      default: return make_not(node(depth - 1, scope, qdepth));
    }
  }

  FormulaPtr quantified(int depth, std::vector<std::string>& scope, int qdepth) {
    static const char* kVars[] = {"x", "y", "z"};
    const std::string v = kVars[std::min<std::size_t>(scope.size(), 2)];
    const std::string d = pick(datasets_);
    scope.push_back(v);
    FormulaPtr body = node(std::max(depth - 1, 1), scope, qdepth + 1);
    scope.pop_back();
    return coin(0.5) ? make_forall(v, d, body) : make_exists(v, d, body);
  }

  std::mt19937_64 rng_;
  std::vector<std::string> predicates_;
  std::vector<std::string> datasets_;
  std::vector<std::string> examples_;
  int max_qdepth_;
};

}  // namespace nesy::testing
