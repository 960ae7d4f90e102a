#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nesy/tensor.hpp"

namespace nesy {

enum class Texture { stripes, dots, zigzag, plain };
enum class Palette { bw, colorful };

struct Attributes {
  Texture texture = Texture::plain;
  bool equid = false;
  Palette palette = Palette::bw;

  bool operator==(const Attributes&) const = default;
};

std::string to_string(Texture t);
std::string to_string(Palette p);
Texture texture_from_string(const std::string& s);
Palette palette_from_string(const std::string& s);

constexpr std::size_t kImageSide = 16;
constexpr std::size_t kImageChannels = 3;
constexpr std::size_t kImageSize = kImageSide * kImageSide * kImageChannels;

// Task classes of the scenario.
enum TaskClass : int { kZebra = 0, kHorse = 1, kTextileStripes = 2, kOther = 3 };
std::vector<std::string> task_class_names();
// zebra iff equid and striped, regardless of palette; other equids are horses.
int label_for(const Attributes& a);

struct ExampleImage {
  std::string id;
  std::vector<float> pixels;  // HWC, row-major, values in [0,1]
  Attributes attributes;
  int label = kOther;

  bool operator==(const ExampleImage&) const = default;
};

struct Dataset {
  std::string name;
  std::vector<ExampleImage> examples;

  std::size_t size() const { return examples.size(); }
  const ExampleImage* find(const std::string& id) const;
  // Batch tensor [n,16,16,3] of the selected examples.
  Tensor batch(const std::vector<std::size_t>& indices) const;
  Tensor batch() const;
  std::vector<int> labels() const;

  bool operator==(const Dataset&) const = default;
};

std::uint64_t hash_dataset(const Dataset& d);
Tensor batch_of(const std::vector<const ExampleImage*>& images);

// Directory with meta.json and pixels.bin (little-endian float32, examples in
// stored order). Loading validates everything before returning.
void save_dataset(const Dataset& d, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

struct ConceptExampleSet {
  std::string name;
  std::vector<ExampleImage> positives;
  std::vector<ExampleImage> negatives;
  std::string note;
};

}  // namespace nesy
