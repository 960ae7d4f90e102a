#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <filesystem>

#include "nesy/error.hpp"
#include "nesy/knowledge.hpp"
#include "nesy/rng.hpp"
#include "nesy/scenario.hpp"

using namespace nesy;
namespace fs = std::filesystem;

namespace {

ArchConfig tiny_arch() {
  ArchConfig a;
  a.conv_channels = {2};
  a.hidden = 4;
  a.classes = 3;
  a.seed = 5;
  return a;
}

Dataset random_dataset(const std::string& name, std::size_t n, Rng& rng) {
  Dataset d;
  d.name = name;
  for (std::size_t i = 0; i < n; ++i) {
    ExampleImage e;
    e.id = name + "_" + std::to_string(i);
    e.pixels.resize(kImageSize);
    for (float& p : e.pixels) p = static_cast<float>(rng.uniform());
    e.label = static_cast<int>(rng.index(3));
    d.examples.push_back(std::move(e));
  }
  return d;
}

ProbeHead probe(const std::string& id, std::size_t width, Rng& rng) {
  Tensor w(Shape{width, 1}), b(Shape{1});
  for (double& v : w.data()) v = rng.uniform(-0.3, 0.3);
  b.data()[0] = rng.uniform(-0.5, 0.5);
  return {id, "flat", Squash::sigmoid, std::make_shared<Parameter>(id + ".w", w, false),
          std::make_shared<Parameter>(id + ".b", b, false), {id}};
}

struct World {
  Model model{tiny_arch()};
  PredicateRegistry registry;
  DatasetTable datasets;

  World() {
    Rng rng(11);
    for (std::size_t k = 0; k < 3; ++k) registry.register_class_predicate("c" + std::to_string(k), k, 3);
    registry.install_head(probe("p0", model.layer_width("flat"), rng), {});
    datasets.put(random_dataset("da", 24, rng));
    datasets.put(random_dataset("train", 32, rng));
  }

  ValidatedFormula parse(const std::string& text) const { return validate_text(text, registry, datasets); }
  double eval(const std::string& text, const SemanticsConfig& sem = {}) const {
    return evaluate(*compile(parse(text), registry, model, datasets, sem), model).truth;
  }
  SatReport report(const KnowledgeBase& kb, const SemanticsConfig& sem = {}) const {
    return sat_report(kb, registry, model, datasets, sem);
  }
};

TrainConfig short_config() {
  TrainConfig c;
  c.max_steps = 20;
  c.batch_size = 8;
  c.report_every = 5;
  c.learning_rate = 1e-2;
  return c;
}

double p_mean_error(const std::vector<double>& v, double p) {
  double s = 0;
  for (double x : v) s += std::pow(1 - x, p);
  return 1 - std::pow(s / static_cast<double>(v.size()), 1 / p);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("nesy_kb_" + std::to_string(Rng(std::random_device{}()).next()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("rules get fresh ids and every edit bumps the epoch") {
  World w;
  KnowledgeBase kb;
  const auto a = kb.add_rule(w.parse("forall x in da: p0(x)"));
  const auto b = kb.add_rule(w.parse("c0(da_1) -> c1(da_2)"), RuleOrigin::initial);
  CHECK(a == "r1");
  CHECK(b == "r2");
  CHECK(kb.epoch() == 2);
  kb.set_enabled(a, false);
  CHECK(kb.enabled_count() == 1);
  CHECK(kb.epoch() == 3);
  kb.remove_rule(a);
  CHECK(kb.add_rule(w.parse("p0(da_0)")) == "r3");
  CHECK_THROWS_AS(kb.remove_rule("r1"), NotFound);
  CHECK_THROWS_AS(kb.set_enabled("r9", true), NotFound);
  CHECK_THROWS_AS(kb.rule("nope"), NotFound);
}

TEST_CASE("kb text round trip keeps ids, flags and canonical formulas") {
  World w;
  KnowledgeBase kb;
  kb.add_rule(w.parse("forall x in da: (p0(x) & c0(x)) -> c1(x)"));
  kb.add_rule(w.parse("~~c2(da_3)"), RuleOrigin::initial);
  kb.add_rule(w.parse("exists y in train: c0(y)"));
  kb.set_enabled("r2", false);
  kb.remove_rule("r1");

  const std::string text = kb.to_text();
  const auto back = KnowledgeBase::from_text(text, make_vocabulary(w.registry, w.datasets));
  CHECK(back.to_text() == text);
  REQUIRE(back.rules().size() == 2);
  CHECK(back.rules()[0].id == "r2");
  CHECK_FALSE(back.rules()[0].enabled);
  CHECK(back.rules()[0].origin == RuleOrigin::initial);
  CHECK(back.rules()[0].formula.text == "~~c2(da_3)");

  auto more = back;
  CHECK(more.add_rule(w.parse("p0(da_1)")) == "r4");

  const auto plain =
      KnowledgeBase::from_text("# hand written\nc0(da_0)\n\n#@ id=r7\np0(da_1)\nc1(da_2) # trailing\n",
                               make_vocabulary(w.registry, w.datasets));
  REQUIRE(plain.rules().size() == 3);
  CHECK(plain.rules()[0].id == "r8");
  CHECK(plain.rules()[1].id == "r7");
  CHECK(plain.rules()[2].id == "r9");

  CHECK_THROWS_AS(KnowledgeBase::from_text("p0(da_0)\nnosuch(da_0)\n", make_vocabulary(w.registry, w.datasets)),
                  DomainError);
  CHECK_THROWS_AS(KnowledgeBase::from_text("#@ id=r1\np0(da_0)\n#@ id=r1\nc0(da_0)\n",
                                           make_vocabulary(w.registry, w.datasets)),
                  DomainError);
}

TEST_CASE("sat reports: empty kb, single rule, disabled rules, aggregate") {
  World w;
  KnowledgeBase kb;
  const auto empty = w.report(kb);
  CHECK(empty.empty);
  CHECK(empty.aggregate == 1.0);
  CHECK(empty.rules.empty());

  const std::string t1 = "forall x in da: p0(x) -> c1(x)";
  kb.add_rule(w.parse(t1));
  const auto one = w.report(kb);
  CHECK_FALSE(one.empty);
  REQUIRE(one.rules.size() == 1);
  CHECK(one.aggregate == one.rules[0].sat);
  CHECK(one.rules[0].sat == w.eval(t1));

  kb.add_rule(w.parse("exists x in da: c0(x)"));
  kb.add_rule(w.parse("c2(da_5) | p0(train_1)"));
  kb.add_rule(w.parse("forall x in train: ~c2(x)"));
  kb.set_enabled("r2", false);
  for (const SemanticsConfig& sem : {SemanticsConfig{}, SemanticsConfig{.p_kb = 3.5}}) {
    const auto r = w.report(kb, sem);
    REQUIRE(r.rules.size() == 3);
    CHECK(r.rules[1].id == "r3");
    std::vector<double> sats;
    for (const auto& s : r.rules) sats.push_back(s.sat);
    CHECK(r.aggregate == aggregate_kb(sem, sats).value);
    CHECK(r.aggregate == doctest::Approx(p_mean_error(sats, sem.p_kb)).epsilon(1e-14));
  }
  // The disabled rule is still evaluable on its own.
  CHECK(w.eval(kb.rule("r2").formula.text) > 0.0);

  const auto j = to_json(w.report(kb));
  CHECK(j.contains("timestamp"));
  const auto back = sat_report_from_json(j);
  CHECK(back.aggregate == w.report(kb).aggregate);
  CHECK_FALSE(to_json(back, false).contains("timestamp"));
}

TEST_CASE("a rule naming an unknown dataset fails with its id") {
  World w;
  KnowledgeBase kb;
  kb.add_rule(w.parse("forall x in da: p0(x)"));
  kb.add_rule(w.parse("forall x in train: c0(x)"));
  w.datasets.remove("train");
  try {
    w.report(kb);
    FAIL("expected an error");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("rule r2") != std::string::npos);
  }
}

TEST_CASE("goedel tautology has zero gradient and leaves parameters alone") {
  World w;
  SemanticsConfig sem;
  sem.implication = Implication::goedel;
  const auto f = w.parse("forall x in da: p0(x) -> p0(x)");
  auto plan = compile(f, w.registry, w.model, w.datasets, sem);
  CHECK(plan->graph().value(plan->root())[0] == 1.0);
  for (const auto& [p, g] : gradients_by_parameter(plan->graph(), plan->graph().backward(plan->root())))
    for (double v : g.values()) CHECK(v == 0.0);

  KnowledgeBase kb;
  kb.add_rule(f);
  auto cfg = short_config();
  cfg.lambda = 0;
  cfg.tau = 1.0;
  const auto before = w.model.snapshot();
  const auto result = train_to_satisfy(w.model, kb, w.registry, w.datasets, sem, cfg);
  CHECK(result.reached_tau);
  const auto after = w.model.snapshot();
  for (std::size_t i = 0; i < before.values.size(); ++i)
    for (std::size_t k = 0; k < before.values[i].size(); ++k)
      CHECK(std::abs(after.values[i][k] - before.values[i][k]) <= 1e-12);
}

TEST_CASE("lambda 1 trains only the task term") {
  // Two opposite rules over the same dataset draw the same batches, so with
  // the rule weight at zero both runs must end in the same parameters.
  auto run = [](const std::string& rule) {
    World w;
    KnowledgeBase kb;
    kb.add_rule(w.parse(rule));
    auto cfg = short_config();
    cfg.lambda = 1.0;
    cfg.tau = 1.0;
    const auto res = train_to_satisfy(w.model, kb, w.registry, w.datasets, {}, cfg);
    return std::pair{w.model.parameter_hash(), res};
  };
  const auto [h1, r1] = run("forall x in da: c0(x)");
  const auto [h2, r2] = run("forall x in da: ~c0(x)");
  CHECK(h1 == h2);
  CHECK(h1 != World().model.parameter_hash());
  REQUIRE(r1.history.size() == r2.history.size());
  CHECK(r1.history.size() == 21);
  // Task accuracy and the batch objective depend on the task term only.
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].objective == r2.history[i].objective);
    if (r1.history[i].full) CHECK(r1.history[i].task_accuracy == r2.history[i].task_accuracy);
  }
}

TEST_CASE("non-finite objective restores the pre-cycle parameters") {
  World w;
  w.registry.set_probes_trainable(true);
  KnowledgeBase kb;
  kb.add_rule(w.parse("forall x in da: p0(x) -> c1(x)"));
  auto cfg = short_config();
  cfg.inject_nan_at = 7;
  cfg.tau = 1.0;
  const auto hash = w.model.parameter_hash();
  const auto probe_w = w.registry.heads().at("p0").weights->value;
  std::size_t steps = 0;
  TrainProgress progress;
  progress.on_step = [&](const StepRecord&) { ++steps; };
  CHECK_THROWS_AS(train_to_satisfy(w.model, kb, w.registry, w.datasets, {}, cfg, progress), NumericError);
  CHECK(steps == 7);
  CHECK(w.model.parameter_hash() == hash);
  CHECK(w.registry.heads().at("p0").weights->value.values() == probe_w.values());
}

TEST_CASE("probes stay fixed unless flagged trainable; freeze_conv keeps conv weights") {
  World w;
  KnowledgeBase kb;
  kb.add_rule(w.parse("forall x in da: p0(x) & c2(x)"));
  auto cfg = short_config();
  cfg.tau = 1.0;
  cfg.freeze_conv = true;
  const auto pw = w.registry.heads().at("p0").weights->value;
  const auto conv = w.model.parameters().front()->value;
  const auto dense = w.model.parameters().back()->value;
  train_to_satisfy(w.model, kb, w.registry, w.datasets, {}, cfg);
  CHECK(w.registry.heads().at("p0").weights->value.values() == pw.values());
  CHECK(w.model.parameters().front()->value.values() == conv.values());
  CHECK(w.model.parameters().back()->value.values() != dense.values());
  for (const auto& p : w.model.parameters()) CHECK(p->trainable);

  w.registry.set_probes_trainable(true);
  cfg.freeze_conv = false;
  train_to_satisfy(w.model, kb, w.registry, w.datasets, {}, cfg);
  CHECK(w.registry.heads().at("p0").weights->value.values() != pw.values());
  CHECK(w.model.parameters().front()->value.values() != conv.values());
}

TEST_CASE("training stops at tau, at max steps, or on cancel") {
  World w;
  KnowledgeBase kb;
  kb.add_rule(w.parse("forall x in da: c1(x)"));
  auto cfg = short_config();
  cfg.lambda = 0;
  cfg.learning_rate = 0.05;
  cfg.max_steps = 400;
  cfg.tau = 0.9;
  const auto res = train_to_satisfy(w.model, kb, w.registry, w.datasets, {}, cfg);
  CHECK(res.before.aggregate < 0.9);
  CHECK(res.reached_tau);
  CHECK(res.after.aggregate >= 0.9);
  CHECK(res.history.back().full);
  CHECK(res.history.back().aggregate == res.after.aggregate);
  CHECK(res.history.size() < 401);
  for (std::size_t i = 0; i < res.history.size(); ++i) CHECK(res.history[i].step == i);

  World w2;
  std::atomic<bool> cancel{false};
  TrainProgress progress;
  progress.cancel = &cancel;
  progress.on_step = [&](const StepRecord& r) {
    if (r.step == 3) cancel = true;
  };
  cfg.max_steps = 100;
  const auto cancelled = train_to_satisfy(w2.model, kb, w2.registry, w2.datasets, {}, cfg, progress);
  CHECK(cancelled.cancelled);
  CHECK_FALSE(cancelled.reached_tau);
  CHECK(cancelled.history.size() == 5);
  CHECK(cancelled.history.back().full);

  KnowledgeBase none;
  CHECK_THROWS_AS(train_to_satisfy(w.model, none, w.registry, w.datasets, {}, cfg), DomainError);
}

TEST_CASE("train config json") {
  const auto c = train_config_from_json({{"learning_rate", 0.01}, {"lambda", 0.5}, {"freeze_conv", true}});
  CHECK(c.learning_rate == 0.01);
  CHECK(c.lambda == 0.5);
  CHECK(c.freeze_conv);
  CHECK(c.max_steps == TrainConfig{}.max_steps);
  CHECK(train_config_from_json(to_json(c)).lambda == 0.5);
  CHECK_THROWS_AS(train_config_from_json({{"steps", 3}}), DomainError);
  CHECK_THROWS_AS(train_config_from_json({{"lambda", 1.5}}), DomainError);
  CHECK_THROWS_AS(train_config_from_json({{"tau", 0}}), DomainError);
  CHECK_THROWS_AS(train_config_from_json({{"learning_rate", "fast"}}), DomainError);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json::array()), DomainError);
}

TEST_CASE("checkpoint, train, revert is exact and survives a restart") {
  TempDir tmp;
  World w;
  KnowledgeBase kb;
  kb.add_rule(w.parse("forall x in da: p0(x) -> c1(x)"));
  kb.add_rule(w.parse("exists x in train: c2(x)"));
  const auto report0 = w.report(kb);
  {
    CheckpointStore store(tmp.path / "checkpoints");
    store.save({0, w.model.snapshot(0), kb.to_text(), report0, std::nullopt, utc_timestamp()});
  }
  const auto bytes0 = w.model.snapshot();

  auto cfg = short_config();
  cfg.tau = 1.0;
  const auto res = train_to_satisfy(w.model, kb, w.registry, w.datasets, {}, cfg);
  CHECK(res.after.aggregate != report0.aggregate);
  kb.remove_rule("r2");

  CheckpointStore store(tmp.path / "checkpoints");
  store.save({1, w.model.snapshot(1), kb.to_text(), res.after, res.before, utc_timestamp()});
  CHECK(store.cycles() == std::vector<std::uint64_t>{0, 1});
  CHECK(store.latest() == 1u);

  const auto c0 = store.load(0);
  w.model.restore(c0.params);
  const auto restored = KnowledgeBase::from_text(c0.kb_text, make_vocabulary(w.registry, w.datasets));
  CHECK(restored.to_text() == c0.kb_text);
  const auto now = w.model.snapshot();
  REQUIRE(now.values.size() == bytes0.values.size());
  for (std::size_t i = 0; i < now.values.size(); ++i) CHECK(now.values[i].values() == bytes0.values[i].values());
  const auto report = w.report(restored);
  REQUIRE(report.rules.size() == report0.rules.size());
  for (std::size_t i = 0; i < report.rules.size(); ++i)
    CHECK(std::abs(report.rules[i].sat - c0.report.rules[i].sat) <= 1e-12);
  CHECK(std::abs(report.aggregate - c0.report.aggregate) <= 1e-12);

  const auto c1 = store.load(1);
  REQUIRE(c1.before);
  CHECK(c1.before->aggregate == res.before.aggregate);
  CHECK(c1.report.aggregate == res.after.aggregate);
  CHECK_THROWS_AS(store.load(7), NotFound);
  CHECK_FALSE(store.contains(2));
}

TEST_CASE("scenario: the correction rule rises without large drops (lambda 0)") {
  DatasetTable datasets;
  scenario::add_datasets(datasets, 0);
  Model model(ArchConfig{}, task_class_names());
  train_task(model, *datasets.get("train"), scenario::task_config());
  PredicateRegistry registry;
  scenario::register_predicates(registry, model, datasets, 0);

  KnowledgeBase kb;
  kb.add_rule(validate_text(scenario::kCorrectionRule, registry, datasets));
  auto cfg = scenario::retrain_config();
  cfg.lambda = 0;
  const auto res = train_to_satisfy(model, kb, registry, datasets, {}, cfg);
  CHECK(res.before.aggregate < 0.3);
  CHECK(res.after.aggregate >= 0.9);
  double last = -1;
  for (const auto& r : res.history) {
    if (!r.full) continue;
    if (last >= 0) CHECK(r.rules.at("r1") >= last - 0.05);
    last = r.rules.at("r1");
  }
}
