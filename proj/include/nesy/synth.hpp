#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nesy/dataset.hpp"

namespace nesy {

struct ScenarioConfig {
  std::string name = "synthetic";
  std::string id_prefix = "ex";
  std::vector<std::pair<Attributes, std::size_t>> counts;
  std::uint64_t seed = 1;
};

// Deterministic for a given config. Examples are shuffled with the seed and
// named <prefix>_<index>; a single-example dataset uses the bare prefix.
Dataset generate(const ScenarioConfig& cfg);

// Renders one image; exposed for tests.
std::vector<float> render_image(const Attributes& a, std::uint64_t seed);

// Concept names: stripes, dots, zigzag, plain, equid, bw, colorful.
bool has_concept(const Attributes& a, const std::string& name);
bool is_known_concept(const std::string& name);

// Positives carry the concept, negatives are drawn from the complement.
ConceptExampleSet make_concept_sets(const Dataset& d, const std::string& name, std::size_t n_pos = 150,
                                    std::size_t n_neg = 150, std::uint64_t seed = 1);

// Dataset configurations of the zebra/quagga scenario. Task splits hold
// black-white equids only, so the quagga analog (equid, stripes, colorful)
// and every other colorful equid are unseen during task training.
struct Scenario {
  static ScenarioConfig train(std::uint64_t seed);
  static ScenarioConfig test(std::uint64_t seed);
  // Pool for concept example sets; includes quagga analogs.
  static ScenarioConfig concepts(std::uint64_t seed);
  // Domain of the retraining rule: quagga analogs.
  static ScenarioConfig val(std::uint64_t seed);
  // A single held-out quagga analog with id img_qua.
  static ScenarioConfig quagga(std::uint64_t seed);
  static bool is_quagga(const Attributes& a) {
    return a.equid && a.texture == Texture::stripes && a.palette == Palette::colorful;
  }
};

}  // namespace nesy
