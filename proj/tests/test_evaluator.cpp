#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "nesy/error.hpp"
#include "nesy/evaluator.hpp"
#include "nesy/grad_check.hpp"
#include "nesy/rng.hpp"
#include "support/eval_oracle.hpp"
#include "support/random_formula.hpp"

using namespace nesy;
using namespace nesy::testing;

TEST_CASE("compiled evaluation matches the reference interpreter") {
  Rng rng(99);
  std::size_t quantified = 0;
  for (int i = 0; i < 200; ++i) {
    World w(static_cast<std::uint64_t>(i));
    const auto a = w.datasets.get("da"), b = w.datasets.get("db");
    testing::FormulaGenerator gen(static_cast<std::uint64_t>(1000 + i), w.predicates, {"da", "db"},
                                  {a->examples.front().id, b->examples.back().id});
    const FormulaPtr f = gen.generate(5);
    const ValidatedFormula vf = validate(f, make_vocabulary(w.registry, w.datasets));
    const SemanticsConfig sem = random_semantics(rng);
    const double compiled = evaluate(*compile(vf, w.registry, w.model, w.datasets, sem), w.model).truth;
    std::map<std::string, const ExampleImage*> env;
    const double reference = Interpreter(w, sem).eval(*f, env);
    INFO(vf.text);
    CHECK(std::abs(compiled - reference) <= 1e-9);
    CHECK(compiled >= 0.0);
    CHECK(compiled <= 1.0);
    quantified += quantifier_depth(*f) > 0;
  }
  CHECK(quantified >= 50);
}

TEST_CASE("passthrough and involution") {
  World w(1);
  const auto e = w.datasets.get("da")->examples.front();
  const double direct = ground_values(w.registry, w.model, "p0", batch_of({&e}))[0];
  CHECK(std::abs(w.eval("p0(" + e.id + ")") - direct) <= 1e-12);
  CHECK(std::abs(w.eval("~~p0(" + e.id + ")") - direct) <= 1e-12);
}

TEST_CASE("forall over a constant-true predicate is 1") {
  World w(2);
  w.registry.install_head(constant_head("always", 40.0, w.model.layer_width("flat")), {});
  CHECK(w.eval("forall x in da: always(x)") == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.eval("exists x in da: always(x)") == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("chunked evaluation equals one batch") {
  World w(3);
  Rng rng(5);
  w.datasets.put(random_dataset("big", 13, rng));
  for (const char* text : {"forall x in big: p0(x) & c1(x) -> g0(x)", "exists x in big: ~p1(x) | c2(x)",
                           "forall x in big: exists y in da: g1(x) -> p0(y)"}) {
    EvalOptions chunked;
    chunked.chunk_size = 4;
    CHECK(std::abs(w.eval(text) - w.eval(text, {}, chunked)) <= 1e-12);
  }
}

TEST_CASE("sat gradients pass grad_check") {
  for (const char* text : {"forall x in da: p0(x) & c1(x) -> c0(x)", "exists x in db: forall y in da: c2(x) | ~g0(y)"}) {
    World w(4, 6);
    w.registry.set_probes_trainable(true);
    auto plan = compile(w.parse(text), w.registry, w.model, w.datasets, SemanticsConfig{});
    const auto r = grad_check(plan->graph(), plan->root());
    INFO(text);
    CHECK(r.max_relative_error <= 1e-4);
  }
}

TEST_CASE("raising the consequent class does not lower an implication") {
  World w(5);
  auto plan = compile(w.parse("forall x in da: p0(x) & p1(x) -> c1(x)"), w.registry, w.model, w.datasets,
                      SemanticsConfig{});
  double previous = evaluate(*plan, w.model).truth;
  ParameterPtr bias = w.model.parameters().back();  // logits bias
  for (int step = 0; step < 5; ++step) {
    bias->value.data()[1] += 0.5;
    const double now = evaluate(*plan, w.model).truth;
    CHECK(now >= previous);
    // The plan re-runs after a parameter change and matches a fresh compile.
    CHECK(now == w.eval("forall x in da: p0(x) & p1(x) -> c1(x)"));
    previous = now;
  }
}

TEST_CASE("plans go stale when their inputs change") {
  World w(6);
  auto plan = compile(w.parse("forall x in da: c0(x)"), w.registry, w.model, w.datasets, SemanticsConfig{});
  CHECK_NOTHROW(evaluate(*plan, w.model));
  Model other(tiny_arch(6));
  CHECK_THROWS_AS(evaluate(*plan, other), Conflict);
  w.registry.install_head(constant_head("extra", 1.0, w.model.layer_width("flat")), {});
  CHECK_THROWS_AS(evaluate(*plan, w.model), Conflict);

  auto plan2 = compile(w.parse("forall x in da: c0(x)"), w.registry, w.model, w.datasets, SemanticsConfig{});
  Rng rng(1);
  w.datasets.put(random_dataset("dc", 2, rng));
  CHECK_THROWS_AS(evaluate(*plan2, w.model), Conflict);
}

TEST_CASE("quantifier limits") {
  World w(7, 4);
  CHECK_THROWS_AS(w.eval("forall x in da: forall y in db: forall z in da: c0(x) & c0(y) & c0(z)"), DomainError);
  Rng rng(2);
  w.datasets.put(random_dataset("wide", 300, rng));
  CHECK_THROWS_AS(w.eval("forall x in wide: exists y in wide: c0(x) -> c1(y)"), DomainError);
  CHECK_NOTHROW(w.eval("forall x in da: exists y in db: c0(x) -> c1(y)"));
}

TEST_CASE("traces mirror the formula") {
  World w(8);
  EvalOptions opt;
  opt.worst_k = 3;
  auto plan = compile(w.parse("forall x in da: p0(x) -> ~c1(x)"), w.registry, w.model, w.datasets,
                      SemanticsConfig{}, opt);
  const EvalResult r = evaluate(*plan, w.model);
  const TruthTrace& t = r.trace;
  CHECK(t.truth == r.truth);
  CHECK(t.op == "forall");
  CHECK(t.node_count() == 5);
  CHECK_FALSE(t.open);
  CHECK(t.children[0].open);
  const auto d = w.datasets.get("da");
  REQUIRE(t.examples.size() == d->size());
  CHECK(t.worst_examples.size() == std::min<std::size_t>(3, d->size()));
  for (std::size_t i = 1; i < t.worst_examples.size(); ++i)
    CHECK(t.worst_examples[i - 1].truth <= t.worst_examples[i].truth);
  double lowest = 1.0;
  for (const auto& e : t.examples) lowest = std::min(lowest, e.truth);
  CHECK(t.worst_examples.front().truth == lowest);

  const auto j = to_json(t);
  CHECK(j.at("op") == "forall");
  CHECK(j.at("children").size() == 1);
  CHECK(j.at("span") == nlohmann::json::array({0, 31}));
  CHECK(j.contains("worst_examples"));

  EvalOptions capped;
  capped.max_trace_examples = 1;
  World big(9);
  Rng rng(3);
  big.datasets.put(random_dataset("many", 5, rng));
  const auto tr = evaluate(*compile(big.parse("forall x in many: c0(x)"), big.registry, big.model, big.datasets,
                                    SemanticsConfig{}, capped),
                           big.model)
                      .trace;
  CHECK(tr.examples.empty());
  CHECK(tr.examples_truncated);
  CHECK(tr.worst_examples.size() == 5);
}

TEST_CASE("nested quantifier traces name both examples") {
  World w(10, 3);
  const auto t = evaluate(*compile(w.parse("forall x in da: exists y in db: c0(x) | c1(y)"), w.registry, w.model,
                                   w.datasets, SemanticsConfig{}),
                          w.model)
                     .trace;
  const auto& inner = t.children[0];
  CHECK(inner.op == "exists");
  CHECK(inner.examples.size() == w.datasets.get("da")->size() * w.datasets.get("db")->size());
  CHECK(inner.examples.front().id == w.datasets.get("da")->examples[0].id + "," + w.datasets.get("db")->examples[0].id);
}

TEST_CASE("local explanations") {
  World w(11);
  const std::size_t width = w.model.layer_width("flat");
  w.registry.install_head(constant_head("always", 6.0, width), {});
  w.registry.install_head(constant_head("never", -6.0, width), {});
  const std::string id = w.datasets.get("db")->examples.front().id;
  const SemanticsConfig sem;

  const EvalResult r = explain_local(parse_formula("always(e) & never(e) -> c0(e)"), id, w.registry, w.model,
                                     w.datasets, sem);
  const TruthTrace& t = r.trace;
  CHECK(t.node_count() == 5);
  const double a = t.children[0].children[0].truth, b = t.children[0].children[1].truth, c = t.children[1].truth;
  CHECK(t.children[0].truth == conjoin(sem, a, b));
  CHECK(t.truth == imply(sem, conjoin(sem, a, b), c));
  CHECK(r.truth == w.eval("always(" + id + ") & never(" + id + ") -> c0(" + id + ")"));
  // The lowest leaf is the forced-false conjunct.
  CHECK(b < a);
  CHECK(b < c);
  CHECK(t.children[0].children[1].text == "never(" + id + ")");

  // A leading quantifier is replaced by the example.
  const EvalResult q =
      explain_local(parse_formula("forall x in da: p0(x) -> c2(x)"), id, w.registry, w.model, w.datasets, sem);
  CHECK(q.trace.op == "implies");
  CHECK(q.truth == w.eval("p0(" + id + ") -> c2(" + id + ")"));

  CHECK_THROWS_AS(explain_local(parse_formula("p0(u) & p1(v)"), id, w.registry, w.model, w.datasets, sem),
                  DomainError);
  CHECK_THROWS_AS(explain_local(parse_formula("p0(u)"), "nope", w.registry, w.model, w.datasets, sem), NotFound);
}
