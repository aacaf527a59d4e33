// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <fstream>
#include <random>

#include "close/error.hpp"
#include "close/knn.hpp"
#include "close/matrix.hpp"
#include "close/metrics.hpp"
#include "close/taxonomy.hpp"
#include "support.hpp"

using namespace closenet;
using namespace closenet::testing;

TEST_CASE("taxonomy order and name resolution") {
  const auto& t = LabelTaxonomy::standard();
  CHECK(t.size() == 18);
  CHECK(t.name(classes::TShirt) == "T-shirt");
  CHECK(t.name(classes::Hair) == "Hair");
  CHECK(t.resolve("tshirt") == classes::TShirt);
  CHECK(t.resolve("T-Shirt") == classes::TShirt);
  CHECK(t.resolve("hoodie") == classes::Hoodies);
  CHECK(t.resolve("short_pants") == classes::ShortPants);
  CHECK_THROWS_AS(t.resolve("cape"), ValidationError);
  CHECK(t.coarse(classes::Pants) == CoarseClass::Lower);
  CHECK(t.coarse(classes::Jacket) == CoarseClass::Upper);
  CHECK(t.coarse(classes::Shoes) == CoarseClass::Body);
  CHECK(t.fingerprint() == LabelTaxonomy::standard().fingerprint());
  CHECK(t.fingerprint().size() == 16);
}

TEST_CASE("garment vector accepts names, bit strings and masks") {
  const auto& t = LabelTaxonomy::standard();
  const auto a = GarmentVector::parse("tshirt,pants,shoes,body,hair", t);
  std::string bits(18, '0');
  for (ClassId c : {classes::TShirt, classes::Pants, classes::Shoes, classes::Body, classes::Hair}) bits[c] = '1';
  const auto b = GarmentVector::parse(bits, t);
  unsigned long long mask = 0;
  for (ClassId c : a.present()) mask |= 1ULL << c;
  char hex[32];
  std::snprintf(hex, sizeof hex, "0x%llx", mask);
  const auto c = GarmentVector::parse(hex, t);
  CHECK(a == b);
  CHECK(a == c);
  CHECK(a.count() == 5);
  CHECK_THROWS_AS(GarmentVector::parse("", t), ValidationError);
  CHECK_THROWS_AS(GarmentVector::parse("0x80000", t), ValidationError);
  CHECK_THROWS_AS(GarmentVector::parse("tshirt,cape", t), ValidationError);
}

TEST_CASE("merge map files must be total") {
  TempDir dir("merge");
  {
    std::ofstream(dir / "partial.json") << R"({"upper": ["tshirt"], "lower": ["pants"], "body": ["body"]})";
  }
  CHECK_THROWS_AS(LabelTaxonomy::standard().with_merge_map(dir / "partial.json"), ValidationError);
  nlohmann::json full{{"upper", nlohmann::json::array()}, {"lower", nlohmann::json::array()},
                      {"body", nlohmann::json::array()}};
  for (int i = 0; i < kNumClasses; ++i) {
    const std::string name(LabelTaxonomy::standard().name(static_cast<ClassId>(i)));
    full[i < 10 ? "upper" : i < 16 ? "lower" : "body"].push_back(name);
  }
  std::ofstream(dir / "full.json") << full.dump();
  const auto t = LabelTaxonomy::standard().with_merge_map(dir / "full.json");
  CHECK(t.coarse(classes::Dress) == CoarseClass::Upper);
  CHECK(t.coarse(classes::Jumpsuit) == CoarseClass::Lower);
  const std::vector<ClassId> labels{classes::Dress, classes::Jumpsuit, classes::Hair};
  const auto merged = merge_to_3class(labels, t);
  CHECK(merged == std::vector<CoarseClass>{CoarseClass::Upper, CoarseClass::Lower, CoarseClass::Body});
}

TEST_CASE("IoU matches the set-counting oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng() % 300;
    const int classes = 2 + static_cast<int>(rng() % 17);
    const auto p = random_labels(rng, n, classes), g = random_labels(rng, n, classes);
    const IouResult r = iou(p, g, kNumClasses);
    const auto oracle = brute_iou({p}, {g});
    for (int c = 0; c < kNumClasses; ++c) {
      CHECK(r.per_class[c].has_value() == !std::isnan(oracle[c]));
      if (r.per_class[c]) CHECK(*r.per_class[c] == doctest::Approx(oracle[c]).epsilon(1e-15));
    }
    CHECK(r.mean == doctest::Approx(mean_ignoring_nan(oracle)).epsilon(1e-14));
  }
}

TEST_CASE("IoU edge cases") {
  const std::vector<ClassId> a{0, 0, 1, 1};
  CHECK(iou(a, a, kNumClasses).mean == 1.0);
  // One class, half the points right: |∩| = 2, |∪| = 4.
  const std::vector<ClassId> gt{3, 3, 3, 3}, pred{3, 3, 5, 5};
  const auto r = iou(pred, gt, kNumClasses);
  CHECK(*r.per_class[3] == doctest::Approx(0.5));
  CHECK(*r.per_class[5] == 0.0);
  CHECK_FALSE(r.per_class[0].has_value());
  CHECK_THROWS_AS(iou(std::vector<ClassId>{1}, std::vector<ClassId>{1, 2}, kNumClasses), ShapeMismatchError);
  CHECK_THROWS_AS(iou(std::vector<ClassId>{18}, std::vector<ClassId>{1}, kNumClasses), ValidationError);
}

TEST_CASE("pooled confusion equals per-scan IoU for one scan") {
  std::mt19937_64 rng(3);
  const auto p = random_labels(rng, 200, 5), g = random_labels(rng, 200, 5);
  ConfusionMatrix cm(kNumClasses);
  cm.add(p, g);
  const auto pooled = cm.per_class_iou();
  const auto single = iou(p, g, kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) CHECK(pooled[c] == single.per_class[c]);
}

TEST_CASE("k-NN graph matches brute force on random clouds") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t n = 2 + rng() % 400;
    const std::size_t width = trial % 3 == 0 ? 3 : 1 + rng() % 40;
    const int k = 1 + static_cast<int>(rng() % 25);
    Matrix f = random_matrix(rng, n, width, -1.0, 1.0);
    if (trial % 4 == 1 && width == 3) {
      // Clustered cloud stresses grid cells of uneven occupancy.
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < 3; ++c) f(i, c) *= (i % 7 == 0) ? 1.0 : 0.05;
      }
    }
    const KnnGraph g = build_knn_graph(f, k);
    const KnnGraph ex = build_knn_graph_exhaustive(f, k);
    const std::size_t kk = std::min<std::size_t>(k, n - 1);
    REQUIRE(g.k == kk);
    CHECK(g.neighbors == ex.neighbors);
    for (std::size_t i = 0; i < n; ++i) {
      const auto oracle = brute_knn_row(f, i, kk);
      const auto got = g.of(i);
      CHECK(std::equal(got.begin(), got.end(), oracle.begin(), oracle.end()));
    }
  }
}

TEST_CASE("k-NN ties go to the lower index") {
  // Points on a line at equal spacing: for the middle point both sides tie.
  Matrix f(5, 3);
  for (std::size_t i = 0; i < 5; ++i) f(i, 0) = static_cast<double>(i);
  const KnnGraph g = build_knn_graph(f, 2);
  CHECK(std::vector<std::uint32_t>(g.of(2).begin(), g.of(2).end()) == std::vector<std::uint32_t>{1, 3});
  CHECK(std::vector<std::uint32_t>(g.of(0).begin(), g.of(0).end()) == std::vector<std::uint32_t>{1, 2});
}

TEST_CASE("grid nearest matches brute force") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix pts = random_matrix(rng, 1 + rng() % 500, 3, -2.0, 2.0);
    const PointGrid grid(pts);
    for (int q = 0; q < 50; ++q) {
      const double query[3] = {4 * unit(rng) - 2, 4 * unit(rng) - 2, 4 * unit(rng) - 2};
      CHECK(grid.nearest({query[0], query[1], query[2]}) == brute_nearest(pts, query));
    }
  }
}

TEST_CASE("matrix products agree with naive loops") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 1 + rng() % 13, m = 1 + rng() % 40, p = 1 + rng() % 70;
    const Matrix a = random_matrix(rng, n, m), b = random_matrix(rng, m, p), w = random_matrix(rng, p, m);
    const Matrix c = matmul(a, b), l = linear(a, w), t = matmul_tn(a, random_matrix(rng, n, 3));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < p; ++j) {
        double s = 0, sl = 0;
        for (std::size_t k = 0; k < m; ++k) s += a(i, k) * b(k, j), sl += a(i, k) * w(j, k);
        CHECK(c(i, j) == doctest::Approx(s).epsilon(1e-12));
        CHECK(l(i, j) == doctest::Approx(sl).epsilon(1e-12));
      }
    }
    CHECK(t.rows() == m);
    CHECK(t.cols() == 3);
  }
}

TEST_CASE("matmul rows do not depend on their neighbours") {
  // The same row must come out bit-identical whether it lands in a 4-row tile
  // or in the scalar tail.
  std::mt19937_64 rng(2);
  const Matrix b = random_matrix(rng, 37, 45);
  const Matrix a = random_matrix(rng, 7, 37);
  const Matrix full = matmul(a, b);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const Matrix one = matmul(slice_rows(a, i, 1), b);
    for (std::size_t j = 0; j < b.cols(); ++j) CHECK(one(0, j) == full(i, j));
  }
}
