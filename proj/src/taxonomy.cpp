// SPDX-License-Identifier: Apache-2.0
#include "close/taxonomy.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include <json.hpp>

#include "close/error.hpp"
#include "close/hashing.hpp"

namespace closenet {
namespace {

std::string normalize_name(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

std::string strip_plural(std::string s) {
  if (s.size() > 1 && s.back() == 's') s.pop_back();
  return s;
}

CoarseClass parse_coarse(std::string_view text) {
  const std::string n = normalize_name(text);
  if (n == "upper") return CoarseClass::Upper;
  if (n == "lower") return CoarseClass::Lower;
  if (n == "body") return CoarseClass::Body;
  throw ValidationError("unknown coarse class '" + std::string(text) + "'");
}

}  // namespace

std::string_view to_string(CoarseClass coarse) {
  switch (coarse) {
    case CoarseClass::Upper: return "upper";
    case CoarseClass::Lower: return "lower";
    case CoarseClass::Body: return "body";
  }
  return "?";
}

LabelTaxonomy::LabelTaxonomy()
    : names_{"T-shirt", "Shirt", "Vest",     "Coat",     "Jacket",       "Hoodies",
             "Short-Pants", "Pants", "Skirts", "Dress", "Jumpsuit", "Swimsuit",
             "Undergarment", "Scarf", "Hat",  "Shoes",    "Body",         "Hair"},
      palette_{{{230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},  {245, 130, 48},
                {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}, {250, 190, 212},
                {0, 128, 128},  {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
                {170, 255, 195}, {200, 200, 200}, {0, 0, 128}}} {
  using namespace classes;
  merge3_.fill(CoarseClass::Upper);
  for (ClassId id : {ShortPants, Pants, Skirts}) merge3_[id] = CoarseClass::Lower;
  for (ClassId id : {Body, Hair, Hat, Shoes, Undergarment}) merge3_[id] = CoarseClass::Body;
}

const LabelTaxonomy& LabelTaxonomy::standard() {
  static const LabelTaxonomy taxonomy;
  return taxonomy;
}

std::string_view LabelTaxonomy::name(ClassId id) const {
  if (id >= kNumClasses) throw ValidationError("class id out of range: " + std::to_string(id));
  return names_[id];
}

Rgb LabelTaxonomy::color(ClassId id) const {
  if (id >= kNumClasses) throw ValidationError("class id out of range: " + std::to_string(id));
  return palette_[id];
}

CoarseClass LabelTaxonomy::coarse(ClassId id) const {
  if (id >= kNumClasses) throw ValidationError("class id out of range: " + std::to_string(id));
  return merge3_[id];
}

std::optional<ClassId> LabelTaxonomy::find(std::string_view name) const {
  const std::string wanted = normalize_name(name);
  if (wanted.empty()) return std::nullopt;
  for (int i = 0; i < kNumClasses; ++i) {
    const std::string candidate = normalize_name(names_[i]);
    if (candidate == wanted || strip_plural(candidate) == strip_plural(wanted)) {
      return static_cast<ClassId>(i);
    }
  }
  return std::nullopt;
}

ClassId LabelTaxonomy::resolve(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw ValidationError("unknown class name '" + std::string(name) + "'");
}

LabelTaxonomy LabelTaxonomy::with_merge_map(const std::array<CoarseClass, kNumClasses>& merge) const {
  LabelTaxonomy copy = *this;
  copy.merge3_ = merge;
  return copy;
}

LabelTaxonomy LabelTaxonomy::with_merge_map(const std::filesystem::path& map_file) const {
  std::ifstream in(map_file);
  if (!in) throw ValidationError("cannot open merge map " + map_file.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("merge map: ") + e.what(), e.byte);
  }
  std::array<std::optional<CoarseClass>, kNumClasses> assigned;
  for (const auto& [key, members] : doc.items()) {
    if (key == "schema") continue;
    const CoarseClass coarse = parse_coarse(key);
    for (const auto& member : members) {
      const ClassId id = resolve(member.get<std::string>());
      if (assigned[id] && *assigned[id] != coarse) {
        throw ValidationError("merge map assigns " + names_[id] + " twice");
      }
      assigned[id] = coarse;
    }
  }
  std::array<CoarseClass, kNumClasses> merge{};
  for (int i = 0; i < kNumClasses; ++i) {
    if (!assigned[i]) throw ValidationError("merge map does not cover " + names_[i]);
    merge[i] = *assigned[i];
  }
  return with_merge_map(merge);
}

std::string LabelTaxonomy::fingerprint() const {
  Fnv1a h;
  for (const auto& n : names_) {
    h.update(n);
    h.update("\n");
  }
  return h.hex();
}

GarmentVector::GarmentVector(std::bitset<kNumClasses> bits) : bits_(bits) {}

GarmentVector GarmentVector::from_ids(std::span<const ClassId> ids) {
  GarmentVector g;
  for (ClassId id : ids) {
    if (id >= kNumClasses) throw ValidationError("class id out of range: " + std::to_string(id));
    g.set(id);
  }
  return g;
}

GarmentVector GarmentVector::parse(std::string_view text, const LabelTaxonomy& taxonomy) {
  GarmentVector g;
  if (text.starts_with("0x") || text.starts_with("0X")) {
    unsigned long long mask = 0;
    try {
      mask = std::stoull(std::string(text.substr(2)), nullptr, 16);
    } catch (const std::exception&) {
      throw ValidationError("bad garment bitmask '" + std::string(text) + "'");
    }
    if (mask >> kNumClasses) throw ValidationError("garment bitmask has bits beyond class 18");
    g = GarmentVector(std::bitset<kNumClasses>(mask));
  } else if (text.size() == kNumClasses &&
             std::all_of(text.begin(), text.end(), [](char c) { return c == '0' || c == '1'; })) {
    for (int i = 0; i < kNumClasses; ++i) g.set(static_cast<ClassId>(i), text[i] == '1');
  } else {
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t comma = text.find(',', start);
      const std::string_view token =
          text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (!token.empty()) g.set(taxonomy.resolve(token));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  g.validate();
  return g;
}

std::vector<ClassId> GarmentVector::present() const {
  std::vector<ClassId> ids;
  for (int i = 0; i < kNumClasses; ++i) {
    if (bits_.test(i)) ids.push_back(static_cast<ClassId>(i));
  }
  return ids;
}

std::array<double, kNumClasses> GarmentVector::as_doubles() const {
  std::array<double, kNumClasses> out{};
  for (int i = 0; i < kNumClasses; ++i) out[i] = bits_.test(i) ? 1.0 : 0.0;
  return out;
}

void GarmentVector::validate() const {
  if (bits_.none()) throw ValidationError("no garment classes declared");
}

std::vector<CoarseClass> merge_to_3class(std::span<const ClassId> labels,
                                         const LabelTaxonomy& taxonomy) {
  validate_labels(labels);
  std::vector<CoarseClass> out(labels.size());
  std::transform(labels.begin(), labels.end(), out.begin(),
                 [&](ClassId id) { return taxonomy.coarse(id); });
  return out;
}

void validate_labels(std::span<const ClassId> labels) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses) {
      throw ValidationError("label " + std::to_string(int(labels[i]) + 1) + " at index " +
                            std::to_string(i) + " is outside 1..18");
    }
  }
}

}  // namespace closenet
