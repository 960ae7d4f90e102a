#include "nesy/dataset.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "nesy/error.hpp"

namespace nesy {

namespace {

constexpr int kSchemaVersion = 1;

void put_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float get_f32(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw NotFound("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io_error", "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("io_error", "write failed: " + p.string());
}

}  // namespace

std::string to_string(Texture t) {
  switch (t) {
    case Texture::stripes: return "stripes";
    case Texture::dots: return "dots";
    case Texture::zigzag: return "zigzag";
    case Texture::plain: return "plain";
  }
  return "plain";
}

std::string to_string(Palette p) { return p == Palette::bw ? "bw" : "colorful"; }

Texture texture_from_string(const std::string& s) {
  for (Texture t : {Texture::stripes, Texture::dots, Texture::zigzag, Texture::plain})
    if (to_string(t) == s) return t;
  throw DomainError("unknown texture '" + s + "'");
}

Palette palette_from_string(const std::string& s) {
  if (s == "bw") return Palette::bw;
  if (s == "colorful") return Palette::colorful;
  throw DomainError("unknown palette '" + s + "'");
}

std::vector<std::string> task_class_names() { return {"zebra", "horse", "textile-stripes", "other"}; }

int label_for(const Attributes& a) {
  if (a.equid) return a.texture == Texture::stripes ? kZebra : kHorse;
  return a.texture == Texture::stripes ? kTextileStripes : kOther;
}

const ExampleImage* Dataset::find(const std::string& id) const {
  for (const auto& e : examples)
    if (e.id == id) return &e;
  return nullptr;
}

Tensor batch_of(const std::vector<const ExampleImage*>& images) {
  Tensor t(Shape{images.size(), kImageSide, kImageSide, kImageChannels});
  auto out = t.data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& px = images[i]->pixels;
    for (std::size_t k = 0; k < kImageSize; ++k) out[i * kImageSize + k] = px[k];
  }
  return t;
}

Tensor Dataset::batch(const std::vector<std::size_t>& indices) const {
  std::vector<const ExampleImage*> ptrs;
  ptrs.reserve(indices.size());
  for (std::size_t i : indices) ptrs.push_back(&examples.at(i));
  return batch_of(ptrs);
}

Tensor Dataset::batch() const {
  std::vector<const ExampleImage*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  return batch_of(ptrs);
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  for (const auto& e : examples) out.push_back(e.label);
  return out;
}

std::uint64_t hash_dataset(const Dataset& d) {
  auto mix = [](std::uint64_t h, const void* p, std::size_t n) {
    return fnv1a({static_cast<const unsigned char*>(p), n}, h);
  };
  std::uint64_t h = mix(1469598103934665603ULL, d.name.data(), d.name.size());
  for (const auto& e : d.examples) {
    h = mix(h, e.id.data(), e.id.size() + 1);
    const int fields[] = {static_cast<int>(e.attributes.texture), e.attributes.equid ? 1 : 0,
                          static_cast<int>(e.attributes.palette), e.label};
    h = mix(h, fields, sizeof fields);
    h = mix(h, e.pixels.data(), e.pixels.size() * sizeof(float));
  }
  return h;
}

void save_dataset(const Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["schema_version"] = kSchemaVersion;
  meta["name"] = d.name;
  meta["count"] = d.examples.size();
  meta["height"] = kImageSide;
  meta["width"] = kImageSide;
  meta["channels"] = kImageChannels;
  auto& order = meta["order"] = nlohmann::json::array();
  auto& attrs = meta["attributes"] = nlohmann::json::object();
  auto& labels = meta["labels"] = nlohmann::json::object();
  std::string pixels;
  pixels.reserve(d.examples.size() * kImageSize * 4);
  for (const auto& e : d.examples) {
    if (e.pixels.size() != kImageSize) throw DomainError("example " + e.id + " has wrong pixel count");
    order.push_back(e.id);
    attrs[e.id] = {{"texture", to_string(e.attributes.texture)},
                   {"equid", e.attributes.equid},
                   {"palette", to_string(e.attributes.palette)}};
    labels[e.id] = e.label;
    for (float v : e.pixels) put_f32(pixels, v);
  }
  write_file(dir / "meta.json", meta.dump(1) + "\n");
  write_file(dir / "pixels.bin", pixels);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string meta_text = read_file(dir / "meta.json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("meta.json: ") + e.what(), e.byte);
  }
  Dataset d;
  try {
    if (meta.at("schema_version").get<int>() != kSchemaVersion) throw FormatError("meta.json: unsupported schema version", 0);
    if (meta.at("height").get<std::size_t>() != kImageSide || meta.at("width").get<std::size_t>() != kImageSide ||
        meta.at("channels").get<std::size_t>() != kImageChannels)
      throw FormatError("meta.json: unsupported image shape", 0);
    d.name = meta.at("name").get<std::string>();
    const auto& order = meta.at("order");
    if (order.size() != meta.at("count").get<std::size_t>()) throw FormatError("meta.json: count does not match order", 0);
    std::set<std::string> seen;
    for (const auto& id_json : order) {
      ExampleImage e;
      e.id = id_json.get<std::string>();
      if (!seen.insert(e.id).second) throw FormatError("meta.json: duplicate id " + e.id, 0);
      const auto& a = meta.at("attributes").at(e.id);
      e.attributes.texture = texture_from_string(a.at("texture").get<std::string>());
      e.attributes.equid = a.at("equid").get<bool>();
      e.attributes.palette = palette_from_string(a.at("palette").get<std::string>());
      e.label = meta.at("labels").at(e.id).get<int>();
      if (e.label < 0 || e.label > kOther) throw FormatError("meta.json: bad label for " + e.id, 0);
      d.examples.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("meta.json: ") + e.what(), 0);
  } catch (const DomainError& e) {
    throw FormatError(std::string("meta.json: ") + e.what(), 0);
  }

  const std::string bytes = read_file(dir / "pixels.bin");
  const std::size_t expected = d.examples.size() * kImageSize * 4;
  if (bytes.size() != expected)
    throw FormatError("pixels.bin: expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()),
                      std::min(bytes.size(), expected));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < d.examples.size(); ++i) {
    auto& px = d.examples[i].pixels;
    px.resize(kImageSize);
    for (std::size_t k = 0; k < kImageSize; ++k) {
      const std::size_t off = (i * kImageSize + k) * 4;
      px[k] = get_f32(p + off);
      if (!(px[k] >= 0.0f && px[k] <= 1.0f)) throw FormatError("pixels.bin: value outside [0,1]", off);
    }
  }
  return d;
}

}  // namespace nesy
