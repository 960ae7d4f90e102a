#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "nesy/error.hpp"
#include "nesy/grad_check.hpp"
#include "nesy/model.hpp"
#include "nesy/rng.hpp"
#include "nesy/synth.hpp"

using namespace nesy;
namespace fs = std::filesystem;

namespace {

Tensor random_batch(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(Shape{n, 16, 16, 3});
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

// Straight-line reference implementation of the default architecture.
struct Reference {
  const Model& m;

  const Tensor& p(std::size_t i) const { return m.parameters()[i]->value; }

  static std::vector<double> conv(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t c,
                                  const Tensor& k, const Tensor& b) {
    const std::size_t out = k.dim(3);
    std::vector<double> y(h * w * out);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t o = 0; o < out; ++o) {
          double s = b[o];
          for (int di = -1; di <= 1; ++di)
            for (int dj = -1; dj <= 1; ++dj) {
              const long ii = static_cast<long>(i) + di, jj = static_cast<long>(j) + dj;
              if (ii < 0 || jj < 0 || ii >= static_cast<long>(h) || jj >= static_cast<long>(w)) continue;
              for (std::size_t q = 0; q < c; ++q)
                s += x[(ii * w + jj) * c + q] * k[((static_cast<std::size_t>(di + 1) * 3 + (dj + 1)) * c + q) * out + o];
            }
          y[(i * w + j) * out + o] = std::max(0.0, s);
        }
    return y;
  }

  static std::vector<double> pool(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t c) {
    std::vector<double> y((h / 2) * (w / 2) * c);
    for (std::size_t i = 0; i < h / 2; ++i)
      for (std::size_t j = 0; j < w / 2; ++j)
        for (std::size_t q = 0; q < c; ++q) {
          double best = -1e300;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) best = std::max(best, x[((2 * i + a) * w + 2 * j + b) * c + q]);
          y[(i * (w / 2) + j) * c + q] = best;
        }
    return y;
  }

  static std::vector<double> dense(const std::vector<double>& x, const Tensor& wt, const Tensor& b, bool relu) {
    std::vector<double> y(wt.dim(1));
    for (std::size_t o = 0; o < y.size(); ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * wt.at(i, o);
      y[o] = relu ? std::max(0.0, s) : s;
    }
    return y;
  }

  std::map<std::string, std::vector<double>> run(const Tensor& batch, std::size_t row) const {
    std::vector<double> x(batch.data().begin() + static_cast<long>(row * 768),
                          batch.data().begin() + static_cast<long>((row + 1) * 768));
    std::map<std::string, std::vector<double>> t;
    t["conv1"] = conv(x, 16, 16, 3, p(0), p(1));
    t["pool1"] = pool(t["conv1"], 16, 16, 8);
    t["conv2"] = conv(t["pool1"], 8, 8, 8, p(2), p(3));
    t["pool2"] = pool(t["conv2"], 8, 8, 16);
    t["flat"] = t["pool2"];
    t["hidden"] = dense(t["flat"], p(4), p(5), true);
    t["logits"] = dense(t["hidden"], p(6), p(7), false);
    double mx = *std::max_element(t["logits"].begin(), t["logits"].end()), z = 0;
    for (double v : t["logits"]) z += std::exp(v - mx);
    for (double v : t["logits"]) t["probs"].push_back(std::exp(v - mx) / z);
    return t;
  }
};

}  // namespace

TEST_CASE("architecture validation") {
  ArchConfig a;
  a.conv_channels.clear();
  CHECK_THROWS_AS(Model{a}, DomainError);
  a = ArchConfig{};
  a.classes = 1;
  CHECK_THROWS_AS(Model{a}, DomainError);
  a = ArchConfig{};
  a.conv_channels = {4, 4, 4, 4, 4};
  CHECK_THROWS_AS(Model{a}, DomainError);
  a.conv_channels = {4, 4, 4, 4};
  CHECK_NOTHROW(Model{a});
  CHECK(arch_from_json(to_json(ArchConfig{})) == ArchConfig{});
}

TEST_CASE("deterministic initialization") {
  ArchConfig a;
  Model m1(a), m2(a);
  CHECK(m1.parameter_hash() == m2.parameter_hash());
  a.seed = 43;
  Model m3(a);
  CHECK(m3.parameter_hash() != m1.parameter_hash());
  CHECK(m3.fingerprint() == m1.fingerprint());
}

TEST_CASE("tap widths") {
  Model m(ArchConfig{});
  CHECK(m.layer_width("flat") == 4 * 4 * 16);
  CHECK(m.layer_width("hidden") == 64);
  CHECK(std::string(Model::probe_layer()) == "flat");
  const auto r = m.forward_with_taps(random_batch(3, 1));
  CHECK(r.taps.at("flat").shape() == Shape{3, 256});
  CHECK(r.probabilities.shape() == Shape{3, 4});
  CHECK_THROWS_AS(m.layer_width("nope"), NotFound);
}

TEST_CASE("zero image follows the bias path") {
  Model m(ArchConfig{});
  Rng rng(5);
  for (const auto& p : m.parameters())
    if (p->name.find(".b") != std::string::npos)
      for (double& v : p->value.data()) v = rng.uniform(-0.5, 0.5);
  const auto r = m.forward_with_taps(Tensor(Shape{1, 16, 16, 3}));
  // Oracle: with zero input every conv site sees only its bias.
  const auto& P = m.parameters();
  std::vector<double> c1(8), c2(16);
  for (std::size_t k = 0; k < 8; ++k) c1[k] = std::max(0.0, P[1]->value[k]);
  for (std::size_t k = 0; k < 16; ++k) c2[k] = P[3]->value[k];
  // Interior sites of conv2 see all 9 neighbours; pooled maxima include an
  // interior site, so each flat feature equals the interior response.
  std::vector<double> interior(16);
  for (std::size_t o = 0; o < 16; ++o) {
    double s = c2[o];
    for (std::size_t tap = 0; tap < 9; ++tap)
      for (std::size_t q = 0; q < 8; ++q) s += c1[q] * P[2]->value[(tap * 8 + q) * 16 + o];
    interior[o] = std::max(0.0, s);
  }
  const auto& flat = r.taps.at("flat");
  // Pool cell (1,1) covers conv2 sites (2..3, 2..3), all interior.
  for (std::size_t o = 0; o < 16; ++o) CHECK(flat.at(0, (1 * 4 + 1) * 16 + o) == doctest::Approx(interior[o]).epsilon(1e-12));
}

TEST_CASE("forward matches a layer-by-layer recomputation") {
  Model m(ArchConfig{});
  Rng rng(6);
  for (const auto& p : m.parameters())
    if (p->name.find(".b") != std::string::npos)
      for (double& v : p->value.data()) v = rng.uniform(-0.1, 0.1);
  const Tensor batch = random_batch(4, 2);
  const auto r = m.forward_with_taps(batch);
  const Reference ref{m};
  for (std::size_t row = 0; row < 4; ++row) {
    const auto expected = ref.run(batch, row);
    for (const auto& [layer, values] : expected) {
      INFO(layer);
      const auto& t = r.taps.at(layer);
      REQUIRE(t.dim(1) == values.size());
      double err = 0;
      for (std::size_t i = 0; i < values.size(); ++i) err = std::max(err, std::abs(t.at(row, i) - values[i]));
      CHECK(err <= 1e-12);
    }
    double s = 0;
    for (std::size_t k = 0; k < 4; ++k) s += r.probabilities.at(row, k);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(m.forward_with_taps(Tensor(Shape{2, 8, 8, 3})), ShapeError);
}

TEST_CASE("model gradients pass grad_check") {
  ArchConfig a;
  a.conv_channels = {2, 2};
  a.hidden = 5;
  a.height = a.width = 8;
  Model m(a);
  Rng rng(3);
  Tensor in(Shape{2, 8, 8, 3});
  for (double& v : in.data()) v = rng.uniform();
  Graph h;
  const auto nodes = m.build(h, h.constant(in));
  const NodeId loss = cross_entropy(h, nodes.probabilities, h.constant(one_hot({0, 2}, 4)));
  const auto r = grad_check(h, loss);
  CHECK(r.max_relative_error <= 1e-4);
}

TEST_CASE("task training") {
  SUBCASE("zero epochs leave the model unchanged") {
    Model m(ArchConfig{});
    const auto before = m.parameter_hash();
    TaskTrainConfig cfg;
    cfg.epochs = 0;
    CHECK(train_task(m, generate(Scenario::val(1)), cfg).empty());
    CHECK(m.parameter_hash() == before);
  }
  SUBCASE("empty dataset") {
    Model m(ArchConfig{});
    CHECK_THROWS_AS(train_task(m, Dataset{}, TaskTrainConfig{}), DomainError);
  }
  SUBCASE("separable toy set and determinism") {
    ScenarioConfig sc{"toy", "toy", {{{Texture::plain, false, Palette::bw}, 40}, {{Texture::stripes, false, Palette::bw}, 40}}, 3};
    const auto d = generate(sc);
    ArchConfig a;
    a.classes = 4;
    TaskTrainConfig cfg;
    cfg.epochs = 20;
    Model m1(a), m2(a);
    const auto h1 = train_task(m1, d, cfg);
    const auto h2 = train_task(m2, d, cfg);
    REQUIRE(h1.size() == 20);
    for (std::size_t i = 0; i < h1.size(); ++i) {
      CHECK(h1[i].loss == h2[i].loss);
      CHECK(h1[i].accuracy == h2[i].accuracy);
    }
    CHECK(task_accuracy(m1, d) >= 0.99);
    CHECK(h1.back().loss < h1.front().loss);
  }
}

TEST_CASE("scenario is learnable") {
  Model m(ArchConfig{}, task_class_names());
  TaskTrainConfig cfg;
  const auto h = train_task(m, generate(Scenario::train(1)), cfg);
  CHECK(h.size() <= 50);
  CHECK(h.back().loss < h.front().loss);
  CHECK(task_accuracy(m, generate(Scenario::test(1))) >= 0.95);
}

TEST_CASE("snapshot and restore") {
  Model m(ArchConfig{});
  const Tensor batch = random_batch(5, 9);
  const Tensor before = m.predict(batch);
  const auto snap = m.snapshot(3);
  CHECK(snap.cycle == 3);
  for (const auto& p : m.parameters())
    for (double& v : p->value.data()) v += 0.01;
  CHECK_FALSE(m.predict(batch) == before);
  m.restore(snap);
  CHECK(m.predict(batch) == before);

  ArchConfig other;
  other.hidden = 32;
  Model n(other);
  const auto h = n.parameter_hash();
  CHECK_THROWS_AS(n.restore(snap), Conflict);
  CHECK(n.parameter_hash() == h);
}

TEST_CASE("checkpoint file round-trip") {
  const auto dir = fs::temp_directory_path() / "nesy_test_model_ckpt";
  fs::remove_all(dir);
  Model m(ArchConfig{}, task_class_names());
  const auto snap = m.snapshot(2);
  CheckpointMeta meta{2, m.fingerprint(), m.class_names(), utc_timestamp()};
  save_checkpoint(dir / "params.bin", snap, meta);
  const auto [loaded, lmeta] = load_checkpoint(dir / "params.bin");
  CHECK(loaded.cycle == 2);
  CHECK(loaded.fingerprint == m.fingerprint());
  CHECK(lmeta.class_names == task_class_names());
  CHECK(lmeta.created == meta.created);
  REQUIRE(loaded.values.size() == snap.values.size());
  for (std::size_t i = 0; i < snap.values.size(); ++i) CHECK(loaded.values[i] == snap.values[i]);
  Model fresh(ArchConfig{.seed = 99});
  fresh.restore(loaded);
  CHECK(fresh.parameter_hash() == m.parameter_hash());

  const auto size = fs::file_size(dir / "params.bin");
  fs::resize_file(dir / "params.bin", size - 3);
  CHECK_THROWS_AS(load_checkpoint(dir / "params.bin"), FormatError);
  {
    std::ofstream(dir / "junk.bin") << "hello world, not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.bin"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.bin"), NotFound);
  fs::remove_all(dir);
}

TEST_CASE("conv freezing") {
  Model m(ArchConfig{});
  m.set_conv_frozen(true);
  CHECK_FALSE(m.parameters()[0]->trainable);
  CHECK_FALSE(m.parameters()[3]->trainable);
  CHECK(m.parameters()[4]->trainable);
  m.set_conv_frozen(false);
  for (const auto& p : m.parameters()) CHECK(p->trainable);
}
