// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "close/body_model.hpp"
#include "close/matrix.hpp"
#include "close/taxonomy.hpp"

namespace closenet {

/// Body region (named template-vertex group) → classes that may not appear there.
struct RegionRules {
  std::map<std::string, std::set<ClassId>> forbidden;

  /// Built-in rules for feet, hands and head (same as data/cleaning_rules.json).
  static const RegionRules& defaults();
  static RegionRules from_json(const nlohmann::json& doc);
  static RegionRules load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// Throws ValidationError when a rule names a region the model lacks.
  void validate(const BodyModel& model) const;
};

struct CleanResult {
  std::vector<ClassId> labels;
  std::size_t changed = 0;
};

/// Relabels points whose class is forbidden in their body region. Each
/// offending point takes the majority label of the first breadth-first ring
/// (over the k-NN graph of `positions`) holding non-offending points whose
/// labels are allowed there; ties go to the lower class id, and Body is the
/// fallback. Idempotent.
CleanResult body_part_filter(std::span<const ClassId> labels, const BodyFeatureField& body,
                             const Matrix& positions, const BodyModel& model, const RegionRules& rules,
                             int k = 8);

/// Same neighbourhood vote for labels absent from the garment vector.
CleanResult garment_filter(std::span<const ClassId> labels, const GarmentVector& garments,
                           const Matrix& positions, int k = 8);

/// Every selected point takes the modal class of the selection (ties: lowest id).
std::vector<ClassId> majority_vote(std::span<const ClassId> labels, std::span<const std::uint32_t> selection);

/// Sets the selected points to class_id; other points are untouched.
std::vector<ClassId> relabel(std::span<const ClassId> labels, std::span<const std::uint32_t> selection,
                             ClassId class_id);

}  // namespace closenet
