#include "nesy/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "nesy/error.hpp"
#include "nesy/rng.hpp"

namespace nesy {

namespace {

// Quadruped facing right: tail, body, four legs, neck and head.
constexpr std::array<const char*, kImageSide> kSilhouette = {
    "................",
    "................",
    "............##..",
    "...........####.",
    "...........#####",
    "..........####..",
    ".#.#########....",
    "#..#########....",
    "...#########....",
    "...#########....",
    "....#######.....",
    "....##...##.....",
    "....##...##.....",
    "....#.#..#.#....",
    "....#.#..#.#....",
    "................",
};

using Rgb = std::array<double, 3>;

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 360.0) / 60.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

std::pair<Rgb, Rgb> palette_pair(Palette palette, Texture texture, Rng& rng) {
  Rgb dark, light;
  if (palette == Palette::bw) {
    const double d = rng.uniform(0.0, 0.25), l = rng.uniform(0.75, 1.0);
    dark = {d, d, d};
    light = {l, l, l};
  } else {
    // Warm pairs, quagga-like: a brown/red dark tone and a tan/yellow light one.
    const double h1 = rng.uniform(0.0, 35.0);
    const double h2 = rng.uniform(40.0, 65.0);
    dark = hsv(h1, rng.uniform(0.6, 1.0), rng.uniform(0.2, 0.4));
    light = hsv(h2, rng.uniform(0.3, 0.6), rng.uniform(0.85, 1.0));
  }
  // Dots and zigzags are always dark marks on a light ground.
  const bool swap = rng.uniform() < 0.5;
  if (swap && (texture == Texture::stripes || texture == Texture::plain)) std::swap(dark, light);
  return {light, dark};
}

// Which of the two palette colors each pixel takes.
std::array<std::array<bool, kImageSide>, kImageSide> texture_field(Texture texture, Rng& rng) {
  std::array<std::array<bool, kImageSide>, kImageSide> f{};
  const int n = static_cast<int>(kImageSide);
  switch (texture) {
    case Texture::plain:
      break;
    case Texture::stripes: {
      const int period = rng.integer(3, 4);
      const int orientation = rng.integer(0, 3);
      const double phase = rng.uniform(0.0, period);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const int u = orientation == 0 ? y : orientation == 1 ? x : orientation == 2 ? x + y : x - y + n;
          f[y][x] = std::fmod(u + phase, static_cast<double>(period)) < period / 2.0;
        }
      break;
    }
    case Texture::dots: {
      const int cell = 4;
      const int ox = rng.integer(0, cell - 1), oy = rng.integer(0, cell - 1);
      for (int cy = -1; cy <= n / cell; ++cy)
        for (int cx = -1; cx <= n / cell; ++cx) {
          const int px = cx * cell + ox;
          const int py = cy * cell + oy;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (dx != 0 && dy != 0) continue;
              const int x = px + dx, y = py + dy;
              if (x >= 0 && x < n && y >= 0 && y < n) f[y][x] = true;
            }
        }
      break;
    }
    case Texture::zigzag: {
      const int period = 6;
      const int wavelength = 8;
      const double amplitude = 4.0;
      const double phase = rng.uniform(0.0, period);
      const bool transpose = rng.uniform() < 0.5;
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const int a = transpose ? y : x, b = transpose ? x : y;
          const double t = std::fmod(static_cast<double>(a), wavelength) / wavelength;
          const double tri = t < 0.5 ? 2 * t : 2 - 2 * t;
          f[y][x] = std::fmod(b + amplitude * tri + phase, static_cast<double>(period)) < period / 2.0;
        }
      break;
    }
  }
  return f;
}

}  // namespace

std::vector<float> render_image(const Attributes& a, std::uint64_t seed) {
  Rng rng(seed);
  const auto [c0, c1] = palette_pair(a.palette, a.texture, rng);
  const auto field = texture_field(a.texture, rng);
  const int shift_x = rng.integer(-1, 1), shift_y = rng.integer(-1, 1);
  std::vector<float> px(kImageSize);
  const int n = static_cast<int>(kImageSide);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      bool inside = true;
      if (a.equid) {
        const int sx = x - shift_x, sy = y - shift_y;
        inside = sx >= 0 && sx < n && sy >= 0 && sy < n && kSilhouette[sy][sx] == '#';
      }
      const double noise = rng.uniform(-0.03, 0.03);
      const Rgb& c = field[y][x] ? c1 : c0;
      for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        const double v = inside ? c[ch] + noise : 0.5;
        px[(y * kImageSide + x) * kImageChannels + ch] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return px;
}

Dataset generate(const ScenarioConfig& cfg) {
  std::size_t total = 0;
  for (const auto& [attrs, count] : cfg.counts) total += count;
  if (total == 0) throw DomainError("scenario config generates no examples");
  Dataset d;
  d.name = cfg.name;
  d.examples.reserve(total);
  std::uint64_t index = 0;
  for (const auto& [attrs, count] : cfg.counts) {
    for (std::size_t i = 0; i < count; ++i, ++index) {
      ExampleImage e;
      e.attributes = attrs;
      e.label = label_for(attrs);
      e.pixels = render_image(attrs, splitmix(cfg.seed ^ splitmix(index)));
      d.examples.push_back(std::move(e));
    }
  }
  Rng rng(splitmix(cfg.seed + 0x5eed));
  rng.shuffle(d.examples);
  char buf[32];
  for (std::size_t i = 0; i < d.examples.size(); ++i) {
    std::snprintf(buf, sizeof buf, "_%04zu", i);
    d.examples[i].id = total == 1 ? cfg.id_prefix : cfg.id_prefix + buf;
  }
  return d;
}

bool is_known_concept(const std::string& c) {
  return c == "stripes" || c == "dots" || c == "zigzag" || c == "plain" || c == "equid" || c == "bw" ||
         c == "colorful";
}

bool has_concept(const Attributes& a, const std::string& c) {
  if (c == "equid") return a.equid;
  if (c == "bw") return a.palette == Palette::bw;
  if (c == "colorful") return a.palette == Palette::colorful;
  if (c == "stripes" || c == "dots" || c == "zigzag" || c == "plain") return to_string(a.texture) == c;
  throw DomainError("unknown concept '" + c + "'");
}

ConceptExampleSet make_concept_sets(const Dataset& d, const std::string& name, std::size_t n_pos,
                                    std::size_t n_neg, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < d.examples.size(); ++i)
    (has_concept(d.examples[i].attributes, name) ? pos : neg).push_back(i);
  if (pos.size() < n_pos || neg.size() < n_neg || n_pos == 0 || n_neg == 0)
    throw DomainError("insufficient examples for concept '" + name + "': have " + std::to_string(pos.size()) +
                      " positives, " + std::to_string(neg.size()) + " negatives");
  Rng rng(splitmix(seed));
  auto sample = [&](std::vector<std::size_t>& v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) std::swap(v[i], v[i + rng.next() % (v.size() - i)]);
    v.resize(n);
    std::sort(v.begin(), v.end());
  };
  sample(pos, n_pos);
  sample(neg, n_neg);
  ConceptExampleSet s;
  s.name = name;
  for (std::size_t i : pos) s.positives.push_back(d.examples[i]);
  for (std::size_t i : neg) s.negatives.push_back(d.examples[i]);
  s.note = "sampled from dataset " + d.name + " with seed " + std::to_string(seed);
  return s;
}

namespace {

std::vector<std::pair<Attributes, std::size_t>> balanced_counts(std::size_t per_class) {
  std::vector<std::pair<Attributes, std::size_t>> out;
  for (bool equid : {true, false})
    for (Texture t : {Texture::stripes, Texture::dots, Texture::zigzag, Texture::plain})
      for (Palette p : {Palette::bw, Palette::colorful}) {
        std::size_t n = 0;
        if (equid) n = p == Palette::bw ? (t == Texture::stripes ? per_class : per_class / 3) : 0;
        else n = t == Texture::stripes ? per_class / 2 : per_class / 6;
        if (n > 0) out.push_back({{t, equid, p}, n});
      }
  return out;
}

}  // namespace

ScenarioConfig Scenario::train(std::uint64_t seed) { return {"train", "train", balanced_counts(240), seed * 16 + 1}; }
ScenarioConfig Scenario::test(std::uint64_t seed) { return {"test", "test", balanced_counts(96), seed * 16 + 2}; }

ScenarioConfig Scenario::concepts(std::uint64_t seed) {
  ScenarioConfig cfg{"concepts", "concept", {}, seed * 16 + 3};
  for (bool equid : {true, false})
    for (Texture t : {Texture::stripes, Texture::dots, Texture::zigzag, Texture::plain})
      for (Palette p : {Palette::bw, Palette::colorful}) cfg.counts.push_back({{t, equid, p}, 40});
  return cfg;
}

ScenarioConfig Scenario::val(std::uint64_t seed) {
  return {"val", "val", {{{Texture::stripes, true, Palette::colorful}, 64}}, seed * 16 + 4};
}

ScenarioConfig Scenario::quagga(std::uint64_t seed) {
  return {"quagga", "img_qua", {{{Texture::stripes, true, Palette::colorful}, 1}}, seed * 16 + 5};
}

}  // namespace nesy
