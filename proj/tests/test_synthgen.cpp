// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <set>

#include "close/error.hpp"
#include "close/synthgen.hpp"
#include "support.hpp"

using namespace closenet;
using namespace closenet::testing;

namespace {

SuiteConfig small_suite() {
  SuiteConfig c;
  c.n_train = 8;
  c.n_val = 2;
  c.n_test = 3;
  c.n_points = 200;
  c.master_seed = 5;
  c.coverage = {classes::TShirt, classes::Pants, classes::Jacket, classes::Dress, classes::Shoes, classes::Body};
  return c;
}

}  // namespace

TEST_CASE("generation is deterministic and labels follow the recipe") {
  SynthConfig c;
  c.seed = 12;
  c.n_points = 500;
  c.recipe = {classes::Shirt, classes::Skirts, classes::Shoes, classes::Body, classes::Hair};
  const ScanSample a = generate(c), b = generate(c);
  CHECK(squared_distance(a.points, b.points) == 0.0);
  CHECK(a.labels == b.labels);
  CHECK(a.size() == 500);
  CHECK_NOTHROW(a.validate());
  CHECK(a.garments == GarmentVector::from_ids(c.recipe));
  std::set<ClassId> seen(a.labels->begin(), a.labels->end());
  for (ClassId l : seen) CHECK(a.garments->has(l));
  c.seed = 13;
  CHECK(squared_distance(generate(c).points, a.points) > 0.0);
  c.recipe = {classes::Shirt};
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("suites cover the requested classes in training") {
  const SynthSuite s = generate_suite(small_suite());
  CHECK(s.train.size() == 8);
  CHECK(s.val.size() == 2);
  CHECK(s.test.size() == 3);
  std::set<ClassId> trained;
  for (const auto& scan : s.train) trained.insert(scan.labels->begin(), scan.labels->end());
  for (ClassId c : small_suite().coverage) CHECK(trained.contains(c));
  std::set<std::uint64_t> seeds;
  std::size_t entries = 0;
  for (const auto& split : {"train", "val", "test"}) {
    for (const auto& e : s.manifest["splits"][split]) seeds.insert(e["seed"].get<std::uint64_t>()), ++entries;
  }
  CHECK(seeds.size() == entries);
  CHECK(s.manifest["splits"]["test"][0]["template"] == "layered");
  CHECK(s.manifest["splits"]["test"][1]["scheme"] == "two-tone");
}

TEST_CASE("the template option restricts recipes") {
  SuiteConfig c = small_suite();
  c.templates = {"casual", "layered", "dress", "coat"};
  c.coverage = {classes::TShirt, classes::Pants, classes::Dress};
  c.probes = false;
  const SynthSuite s = generate_suite(c);
  const std::set<std::string> allowed(c.templates.begin(), c.templates.end());
  for (const auto& split : {"train", "val", "test"}) {
    for (const auto& e : s.manifest["splits"][split]) CHECK(allowed.contains(e["template"].get<std::string>()));
  }
  c.templates = {"nonexistent"};
  CHECK_THROWS_AS(generate_suite(c), ValidationError);
  c = small_suite();
  c.n_train = 1;
  CHECK_THROWS_AS(generate_suite(c), ValidationError);
}

TEST_CASE("suites written to disk read back identically") {
  TempDir dir("suite");
  const SynthSuite s = generate_suite(small_suite());
  write_suite(s, dir.path);
  const LoadedSuite back = read_suite(dir / "manifest.json");
  REQUIRE(back.train.size() == s.train.size());
  REQUIRE(back.test.size() == s.test.size());
  for (std::size_t i = 0; i < s.train.size(); ++i) {
    CHECK(back.train[i].id == s.train[i].id);
    CHECK(back.train[i].labels == s.train[i].labels);
    CHECK(back.train[i].garments == s.train[i].garments);
    CHECK(squared_distance(back.train[i].points, s.train[i].points) < 1e-20);
  }
  std::ofstream(dir / "broken.json") << "{";
  CHECK_THROWS_AS(read_suite(dir / "broken.json"), ParseError);
}

TEST_CASE("color schemes parse by name") {
  for (auto s : {ColorScheme::Solid, ColorScheme::Striped, ColorScheme::TwoTone})
    CHECK(parse_color_scheme(to_string(s)) == s);
  CHECK_THROWS_AS(parse_color_scheme("plaid"), ValidationError);
}
