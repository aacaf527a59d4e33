// SPDX-License-Identifier: Apache-2.0
#include "close/heuristics.hpp"

#include <array>
#include <fstream>
#include <functional>

#include "close/error.hpp"
#include "close/knn.hpp"

namespace closenet {

using nlohmann::json;

namespace {

constexpr const char* kDefaultRules = R"({
  "schema": 1,
  "rules": {
    "feet": ["T-shirt", "Shirt", "Vest", "Coat", "Jacket", "Hoodies", "Short-Pants", "Skirts", "Dress",
             "Swimsuit", "Undergarment", "Scarf", "Hat", "Hair"],
    "hands": ["Pants", "Short-Pants", "Skirts", "Dress", "Vest", "Swimsuit", "Undergarment", "Shoes", "Hat"],
    "head": ["Pants", "Short-Pants", "Skirts", "Swimsuit", "Undergarment", "Shoes"]
  }
})";

void check_labels(std::span<const ClassId> labels) {
  for (ClassId c : labels) {
    if (c >= kNumClasses) throw ValidationError("label id " + std::to_string(c + 1) + " is out of range");
  }
}

// Shared breadth-first vote. allowed(point, label) says whether `label` may
// stand at `point`.
CleanResult neighbourhood_vote(std::span<const ClassId> labels, const Matrix& positions, int k,
                               const std::function<bool(std::size_t, ClassId)>& allowed) {
  check_labels(labels);
  if (positions.rows() != labels.size()) throw ShapeMismatchError("labels and positions differ in length");
  CleanResult out{std::vector<ClassId>(labels.begin(), labels.end()), 0};
  const std::size_t n = labels.size();
  std::vector<char> bad(n, 0);
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    bad[i] = !allowed(i, labels[i]);
    any = any || bad[i];
  }
  if (!any || n < 2) {
    if (any) {
      for (std::size_t i = 0; i < n; ++i) {
        if (bad[i]) out.labels[i] = classes::Body, ++out.changed;
      }
    }
    return out;
  }
  const KnnGraph graph = build_knn_graph(positions, k);
  std::vector<std::uint32_t> visited(n, 0);
  std::uint32_t stamp = 0;
  std::vector<std::uint32_t> frontier, next;
  for (std::size_t i = 0; i < n; ++i) {
    if (!bad[i]) continue;
    ++stamp;
    frontier.assign(1, static_cast<std::uint32_t>(i));
    visited[i] = stamp;
    ClassId choice = classes::Body;
    while (!frontier.empty()) {
      std::array<std::size_t, kNumClasses> votes{};
      bool found = false;
      next.clear();
      for (auto p : frontier) {
        for (auto q : graph.of(p)) {
          if (visited[q] == stamp) continue;
          visited[q] = stamp;
          next.push_back(q);
          if (!bad[q] && allowed(i, labels[q])) votes[labels[q]]++, found = true;
        }
      }
      if (found) {
        choice = static_cast<ClassId>(std::max_element(votes.begin(), votes.end()) - votes.begin());
        break;
      }
      frontier.swap(next);
    }
    if (out.labels[i] != choice) out.labels[i] = choice, ++out.changed;
  }
  return out;
}

}  // namespace

const RegionRules& RegionRules::defaults() {
  static const RegionRules rules = from_json(json::parse(kDefaultRules));
  return rules;
}

RegionRules RegionRules::from_json(const json& doc) {
  RegionRules rules;
  try {
    if (doc.value("schema", 0) != 1) throw ValidationError("cleaning rules: unsupported schema");
    const auto& tax = LabelTaxonomy::standard();
    for (const auto& [region, names] : doc.at("rules").items()) {
      auto& set = rules.forbidden[region];
      for (const auto& name : names) set.insert(tax.resolve(name.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cleaning rules: ") + e.what());
  }
  return rules;
}

RegionRules RegionRules::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open rules file " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ParseError("rules file " + path.string() + ": " + e.what(), e.byte);
  }
}

json RegionRules::to_json() const {
  json rules = json::object();
  const auto& tax = LabelTaxonomy::standard();
  for (const auto& [region, set] : forbidden) {
    json names = json::array();
    for (ClassId c : set) names.push_back(std::string(tax.name(c)));
    rules[region] = names;
  }
  return {{"schema", 1}, {"rules", rules}};
}

void RegionRules::validate(const BodyModel& model) const {
  for (const auto& [region, _] : forbidden) {
    if (!model.regions.contains(region))
      throw ValidationError("cleaning rule references unknown body region '" + region + "'");
  }
}

CleanResult body_part_filter(std::span<const ClassId> labels, const BodyFeatureField& body, const Matrix& positions,
                             const BodyModel& model, const RegionRules& rules, int k) {
  rules.validate(model);
  if (body.vertex.size() != labels.size()) throw ShapeMismatchError("body features and labels differ in length");
  const auto regions = model.vertex_regions();
  std::vector<const std::set<ClassId>*> forbidden(labels.size(), nullptr);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (body.vertex[i] >= regions.size()) throw ValidationError("body feature references a missing vertex");
    auto it = rules.forbidden.find(regions[body.vertex[i]]);
    if (it != rules.forbidden.end()) forbidden[i] = &it->second;
  }
  return neighbourhood_vote(labels, positions, k, [&](std::size_t i, ClassId c) {
    return forbidden[i] == nullptr || !forbidden[i]->contains(c);
  });
}

CleanResult garment_filter(std::span<const ClassId> labels, const GarmentVector& garments, const Matrix& positions,
                           int k) {
  garments.validate();
  return neighbourhood_vote(labels, positions, k, [&](std::size_t, ClassId c) { return garments.has(c); });
}

std::vector<ClassId> majority_vote(std::span<const ClassId> labels, std::span<const std::uint32_t> selection) {
  check_labels(labels);
  if (selection.empty()) throw ValidationError("empty selection");
  std::array<std::size_t, kNumClasses> votes{};
  for (auto i : selection) {
    if (i >= labels.size()) throw ValidationError("selection index " + std::to_string(i) + " out of range");
    votes[labels[i]]++;
  }
  const auto winner = static_cast<ClassId>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  return relabel(labels, selection, winner);
}

std::vector<ClassId> relabel(std::span<const ClassId> labels, std::span<const std::uint32_t> selection,
                             ClassId class_id) {
  check_labels(labels);
  if (class_id >= kNumClasses) throw ValidationError("class id " + std::to_string(class_id + 1) + " is out of range");
  std::vector<ClassId> out(labels.begin(), labels.end());
  for (auto i : selection) {
    if (i >= labels.size()) throw ValidationError("selection index " + std::to_string(i) + " out of range");
    out[i] = class_id;
  }
  return out;
}

}  // namespace closenet
