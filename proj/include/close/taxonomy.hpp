// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace closenet {

inline constexpr int kNumClasses = 18;

/// Zero-based class index used in memory. Files carry 1-based ids.
using ClassId = std::uint8_t;

enum class CoarseClass : std::uint8_t { Upper = 0, Lower = 1, Body = 2 };

std::string_view to_string(CoarseClass coarse);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// Canonical, fixed-order clothing label set with its display palette and the
/// upper/lower/body grouping used when comparing against 3-class methods.
class LabelTaxonomy {
 public:
  /// The built-in taxonomy; order never changes between runs or releases.
  static const LabelTaxonomy& standard();

  int size() const noexcept { return kNumClasses; }
  const std::array<std::string, kNumClasses>& names() const noexcept { return names_; }
  std::string_view name(ClassId id) const;
  Rgb color(ClassId id) const;
  CoarseClass coarse(ClassId id) const;

  /// Resolves a user-facing class name ("T-shirt", "tshirt", "hoodie", ...).
  std::optional<ClassId> find(std::string_view name) const;
  /// Like find() but throws ValidationError naming the unknown class.
  ClassId resolve(std::string_view name) const;

  /// Copy with a different coarse grouping read from a JSON map file of the
  /// form {"upper": [...], "lower": [...], "body": [...]}. The map must be total.
  LabelTaxonomy with_merge_map(const std::filesystem::path& map_file) const;
  LabelTaxonomy with_merge_map(const std::array<CoarseClass, kNumClasses>& merge) const;

  /// Fingerprint of the ordered class names; checkpoints refuse to load on mismatch.
  std::string fingerprint() const;

 private:
  LabelTaxonomy();

  std::array<std::string, kNumClasses> names_;
  std::array<Rgb, kNumClasses> palette_;
  std::array<CoarseClass, kNumClasses> merge3_;
};

namespace classes {
inline constexpr ClassId TShirt = 0, Shirt = 1, Vest = 2, Coat = 3, Jacket = 4, Hoodies = 5,
                         ShortPants = 6, Pants = 7, Skirts = 8, Dress = 9, Jumpsuit = 10,
                         Swimsuit = 11, Undergarment = 12, Scarf = 13, Hat = 14, Shoes = 15,
                         Body = 16, Hair = 17;
}  // namespace classes

/// Presence vector over the taxonomy. A valid vector has at least one bit set.
class GarmentVector {
 public:
  GarmentVector() = default;
  explicit GarmentVector(std::bitset<kNumClasses> bits);
  static GarmentVector from_ids(std::span<const ClassId> ids);
  /// Accepts comma-separated class names, an 18-character 0/1 string, or a
  /// 0x-prefixed bitmask (bit i = class i in taxonomy order).
  static GarmentVector parse(std::string_view text, const LabelTaxonomy& taxonomy);

  bool has(ClassId id) const { return bits_.test(id); }
  void set(ClassId id, bool present = true) { bits_.set(id, present); }
  std::size_t count() const noexcept { return bits_.count(); }
  bool empty() const noexcept { return bits_.none(); }
  const std::bitset<kNumClasses>& bits() const noexcept { return bits_; }
  std::vector<ClassId> present() const;
  std::array<double, kNumClasses> as_doubles() const;

  /// Throws ValidationError when no class is declared.
  void validate() const;

  friend bool operator==(const GarmentVector&, const GarmentVector&) = default;

 private:
  std::bitset<kNumClasses> bits_;
};

/// Applies the coarse grouping element-wise.
std::vector<CoarseClass> merge_to_3class(std::span<const ClassId> labels,
                                         const LabelTaxonomy& taxonomy);

void validate_labels(std::span<const ClassId> labels);

}  // namespace closenet
