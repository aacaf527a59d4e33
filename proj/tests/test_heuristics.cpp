// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <map>
#include <random>
#include <set>

#include "close/body_model.hpp"
#include "close/error.hpp"
#include "close/heuristics.hpp"
#include "support.hpp"

using namespace closenet;
using namespace closenet::testing;

namespace {

// Ring-by-ring vote written from the definition: grow breadth-first over the
// brute-force k-NN graph until a ring holds clean, allowed labels.
std::vector<ClassId> vote_oracle(const std::vector<ClassId>& labels, const Matrix& pos, std::size_t k,
                                 const std::function<bool(std::size_t, ClassId)>& allowed) {
  const std::size_t n = labels.size();
  std::vector<std::vector<std::uint32_t>> nbrs(n);
  for (std::size_t i = 0; i < n; ++i) nbrs[i] = brute_knn_row(pos, i, k);
  std::vector<ClassId> out = labels;
  for (std::size_t i = 0; i < n; ++i) {
    if (allowed(i, labels[i])) continue;
    std::set<std::uint32_t> seen{static_cast<std::uint32_t>(i)};
    std::vector<std::uint32_t> ring{static_cast<std::uint32_t>(i)};
    ClassId choice = classes::Body;
    while (!ring.empty()) {
      std::vector<std::uint32_t> next;
      for (auto p : ring) {
        for (auto q : nbrs[p]) {
          if (seen.insert(q).second) next.push_back(q);
        }
      }
      std::map<ClassId, int> votes;
      for (auto q : next) {
        if (allowed(q, labels[q]) && allowed(i, labels[q])) votes[labels[q]]++;
      }
      if (!votes.empty()) {
        int best = -1;
        for (const auto& [c, v] : votes) {
          if (v > best) best = v, choice = c;
        }
        break;
      }
      ring = next;
    }
    out[i] = choice;
  }
  return out;
}

GarmentVector garments_with_body(std::mt19937_64& rng) {
  GarmentVector g;
  g.set(classes::Body, true);
  for (int c = 0; c < kNumClasses; ++c) {
    if (unit(rng) < 0.3) g.set(static_cast<ClassId>(c), true);
  }
  return g;
}

}  // namespace

TEST_CASE("garment filter matches the ring-vote oracle") {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 2 + rng() % 150;
    const int k = 1 + static_cast<int>(rng() % 10);
    const Matrix pos = random_matrix(rng, n, 3);
    const auto labels = random_labels(rng, n);
    const GarmentVector g = garments_with_body(rng);
    const CleanResult r = garment_filter(labels, g, pos, k);
    const auto want = vote_oracle(labels, pos, std::min<std::size_t>(k, n - 1),
                                  [&](std::size_t, ClassId c) { return g.has(c); });
    CHECK(r.labels == want);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < n; ++i) changed += labels[i] != r.labels[i];
    CHECK(r.changed == changed);
    for (ClassId c : r.labels) CHECK(g.has(c));
    CHECK(garment_filter(r.labels, g, pos, k).changed == 0);
  }
}

TEST_CASE("body part filter removes injected violations and nothing else") {
  const BodyModel& model = toy_body_model();
  const auto regions = model.vertex_regions();
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const ScanSample scan = synthetic_scan(seed, 800);
    const BodyFeatureField body = encode_body(scan, model);
    const auto& truth = *scan.labels;
    const CleanResult clean = body_part_filter(truth, body, scan.points, model, RegionRules::defaults());
    CHECK(clean.changed == 0);

    std::vector<ClassId> noisy = truth;
    std::vector<std::size_t> injected;
    for (std::size_t i = 0; i < noisy.size() && injected.size() < 10; ++i) {
      if (regions[body.vertex[i]] == "feet" && truth[i] == classes::Shoes) {
        noisy[i] = classes::TShirt;
        injected.push_back(i);
      }
    }
    REQUIRE(!injected.empty());
    const auto rules = RegionRules::defaults();
    const CleanResult fixed = body_part_filter(noisy, body, scan.points, model, rules);
    CHECK(fixed.changed == injected.size());
    std::size_t restored = 0;
    for (auto i : injected) restored += fixed.labels[i] == truth[i];
    CHECK(restored == injected.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (std::find(injected.begin(), injected.end(), i) == injected.end()) CHECK(fixed.labels[i] == noisy[i]);
    }
    const auto oracle = vote_oracle(noisy, scan.points, 8, [&](std::size_t p, ClassId c) {
      auto it = rules.forbidden.find(regions[body.vertex[p]]);
      return it == rules.forbidden.end() || !it->second.contains(c);
    });
    CHECK(fixed.labels == oracle);
    CHECK(body_part_filter(fixed.labels, body, scan.points, model, rules).changed == 0);
  }
}

TEST_CASE("majority vote and relabel") {
  std::mt19937_64 rng(67);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const auto labels = random_labels(rng, n, 5);
    std::vector<std::uint32_t> sel;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (unit(rng) < 0.5) sel.push_back(i);
    }
    if (sel.empty()) sel.push_back(0);
    std::map<ClassId, int> counts;
    for (auto i : sel) counts[labels[i]]++;
    ClassId mode = 0;
    int best = -1;
    for (const auto& [c, v] : counts) {
      if (v > best) best = v, mode = c;
    }
    const auto voted = majority_vote(labels, sel);
    const auto set = relabel(labels, sel, classes::Hat);
    std::set<std::uint32_t> chosen(sel.begin(), sel.end());
    for (std::uint32_t i = 0; i < n; ++i) {
      CHECK(voted[i] == (chosen.contains(i) ? mode : labels[i]));
      CHECK(set[i] == (chosen.contains(i) ? classes::Hat : labels[i]));
    }
    CHECK(majority_vote(voted, sel) == voted);
  }
  const std::vector<ClassId> tie{4, 2, 4, 2};
  const std::vector<std::uint32_t> all{0, 1, 2, 3};
  CHECK(majority_vote(tie, all) == std::vector<ClassId>{2, 2, 2, 2});
  CHECK_THROWS_AS(majority_vote(tie, {}), ValidationError);
  const std::vector<std::uint32_t> far{9};
  CHECK_THROWS_AS(relabel(tie, far, 1), ValidationError);
  CHECK_THROWS_AS(relabel(tie, all, 18), ValidationError);
}

TEST_CASE("rules load from JSON and are checked against the body model") {
  TempDir dir("rules");
  const RegionRules back = RegionRules::from_json(RegionRules::defaults().to_json());
  CHECK(back.forbidden == RegionRules::defaults().forbidden);
  CHECK(back.forbidden.at("feet").contains(classes::TShirt));
  std::ofstream(dir / "r.json") << R"({"schema": 1, "rules": {"tail": ["Hat"]}})";
  const RegionRules tail = RegionRules::load(dir / "r.json");
  CHECK_THROWS_AS(tail.validate(toy_body_model()), ValidationError);
  std::ofstream(dir / "bad.json") << R"({"schema": 1, "rules": {"feet": ["Cape"]}})";
  CHECK_THROWS_AS(RegionRules::load(dir / "bad.json"), ValidationError);
  std::ofstream(dir / "broken.json") << "{";
  CHECK_THROWS_AS(RegionRules::load(dir / "broken.json"), ParseError);
}
