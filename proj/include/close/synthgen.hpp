// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "close/scan.hpp"
#include "close/taxonomy.hpp"

namespace closenet {

enum class ColorScheme { Solid, Striped, TwoTone };

std::string_view to_string(ColorScheme scheme);
ColorScheme parse_color_scheme(std::string_view text);

/// One generated scan: a recipe of garment classes worn by the toy humanoid.
struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t n_points = 1024;
  std::vector<ClassId> recipe;  // must contain Body
  ColorScheme scheme = ColorScheme::Solid;
  bool random_pose = true;
  /// Leaves a vertical gap at the chest of jackets and coats so the layer
  /// underneath shows through.
  bool open_front = false;
  std::string id;

  /// Throws ValidationError for empty or unwearable recipes.
  void validate() const;
};

/// Labeled scan with exact body parameters and a garment vector equal to the
/// recipe. Deterministic under the seed.
ScanSample generate(const SynthConfig& config);

/// Named recipe templates used by generate_suite ("casual", "layered", ...).
const std::map<std::string, std::vector<ClassId>>& recipe_templates();

struct SuiteConfig {
  std::size_t n_train = 20, n_val = 5, n_test = 5;
  std::vector<ClassId> coverage;  // every class here appears in a training recipe
  std::uint64_t master_seed = 0;
  std::size_t n_points = 1024;
  /// Puts a multi-layer scan and a two-tone scan first in the test split.
  bool probes = true;
  /// Template names to draw from, in rotation order; empty means all.
  std::vector<std::string> templates;
};

struct SynthSuite {
  std::vector<ScanSample> train, val, test;
  nlohmann::json manifest;
};

/// Throws ValidationError when the coverage cannot be met with n_train scans.
SynthSuite generate_suite(const SuiteConfig& config);

/// Writes every scan as <dir>/<id>.ply plus metadata, and <dir>/manifest.json.
void write_suite(const SynthSuite& suite, const std::filesystem::path& dir);

struct LoadedSuite {
  std::vector<ScanSample> train, val, test;
};
LoadedSuite read_suite(const std::filesystem::path& manifest_path);

}  // namespace closenet
