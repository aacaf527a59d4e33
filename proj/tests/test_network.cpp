// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "close/error.hpp"
#include "close/knn.hpp"
#include "close/network.hpp"
#include "support.hpp"

using namespace closenet;
using namespace closenet::testing;

namespace {

GarmentVector random_garments(std::mt19937_64& rng) {
  GarmentVector g;
  while (g.empty()) {
    for (int c = 0; c < kNumClasses; ++c) g.set(static_cast<ClassId>(c), unit(rng) < 0.35);
  }
  return g;
}

NetworkInput random_input(std::mt19937_64& rng, std::size_t n, const NetworkConfig& config) {
  NetworkInput in;
  in.points = random_matrix(rng, n, 9);
  if (config.body_encoder != BodyEncoderMode::None) in.body = random_matrix(rng, n, 3);
  in.garments = random_garments(rng);
  return in;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig c;
  CHECK_NOTHROW(c.validate());
  c.n_heads = 3;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = NetworkConfig{};
  c.k = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = NetworkConfig{};
  c.global_width = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK(tiny_config().num_parameters() <= 200);
  const NetworkConfig back = network_config_from_json(to_json(small_config()));
  CHECK(back == small_config());
}

TEST_CASE("ablation flags change only the documented widths") {
  NetworkConfig c = small_config();
  const int base = c.decoder_input_width();
  CHECK(base == 3 * c.feature_width + c.global_width + 3 + c.feature_width);
  c.clothing_encoder = ClothingEncoderMode::Binary;
  CHECK(c.clothing_width() == kNumClasses);
  CHECK(c.decoder_input_width() == base - c.feature_width + kNumClasses);
  c.clothing_encoder = ClothingEncoderMode::None;
  CHECK(c.clothing_width() == 0);
  c.body_encoder = BodyEncoderMode::None;
  CHECK(c.body_width() == 0);
  CHECK(c.decoder_input_width() == 3 * c.feature_width + c.global_width);

  std::mt19937_64 rng(1);
  for (auto body : {BodyEncoderMode::Canonical, BodyEncoderMode::None}) {
    for (auto cloth : {ClothingEncoderMode::Attention, ClothingEncoderMode::Binary, ClothingEncoderMode::None}) {
      NetworkConfig cfg = small_config();
      cfg.body_encoder = body;
      cfg.clothing_encoder = cloth;
      const NetworkState st = NetworkState::initialize(cfg, 3);
      CHECK(st.num_parameters() == static_cast<std::size_t>(cfg.num_parameters()));
      CHECK(st.params.contains("codebook.weight") == (cloth == ClothingEncoderMode::Attention));
      const NetworkInput in = random_input(rng, 40, cfg);
      const FeatureBundle fb = encode_points(in, st);
      CHECK(fb.f_c.cols() == static_cast<std::size_t>(cfg.clothing_width()));
      CHECK(fb.f_b.cols() == static_cast<std::size_t>(cfg.body_width()));
      CHECK(fb.f_all().cols() == static_cast<std::size_t>(cfg.decoder_input_width()));
      const Matrix logits = forward(in, st);
      CHECK(logits.rows() == 40);
      CHECK(logits.cols() == static_cast<std::size_t>(kNumClasses));
    }
  }
}

TEST_CASE("binary clothing mode broadcasts the garment vector") {
  std::mt19937_64 rng(2);
  NetworkConfig cfg = small_config();
  cfg.clothing_encoder = ClothingEncoderMode::Binary;
  const NetworkState st = NetworkState::initialize(cfg, 1);
  const NetworkInput in = random_input(rng, 10, cfg);
  const FeatureBundle fb = encode_points(in, st);
  for (std::size_t i = 0; i < 10; ++i) {
    for (int c = 0; c < kNumClasses; ++c) CHECK(fb.f_c(i, c) == (in.garments.has(static_cast<ClassId>(c)) ? 1.0 : 0.0));
  }
}

TEST_CASE("initialization is deterministic per seed") {
  const auto a = NetworkState::initialize(small_config(), 42);
  const auto b = NetworkState::initialize(small_config(), 42);
  const auto c = NetworkState::initialize(small_config(), 43);
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
  for (const auto& [name, m] : a.params) {
    if (name.ends_with(".bias")) {
      for (double v : m.values()) CHECK(v == 0.0);
    }
  }
  CHECK(a.last_decoder_layer() == "decoder1");
  CHECK(layer_of("decoder1.weight") == "decoder1");
  CHECK(layer_of("attention.key_bias") == "attention");
}

TEST_CASE("edgeconv matches the per-edge oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 24; ++trial) {
    const std::size_t n = 2 + rng() % 120, in = 1 + rng() % 12, l = 1 + rng() % 16;
    const int k = 1 + static_cast<int>(rng() % 12);
    NetworkConfig cfg;
    cfg.edge_input = trial % 2 ? EdgeInput::Absolute : EdgeInput::Relative;
    const Matrix x = random_matrix(rng, n, in);
    const Matrix w = random_matrix(rng, l, 2 * in);
    const KnnGraph g = build_knn_graph(x, k);
    std::vector<std::vector<std::uint32_t>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i) nbrs[i] = brute_knn_row(x, i, g.k);
    const Matrix got = edgeconv(x, g, w, cfg);
    const Matrix want = naive_edgeconv(x, nbrs, w, cfg.edge_input == EdgeInput::Relative, cfg.leaky_slope);
    CHECK(max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("attention matches the per-head oracle in both mask modes") {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 24; ++trial) {
    NetworkConfig cfg = small_config();
    cfg.mask_mode = trial % 2 ? MaskMode::ZeroRows : MaskMode::NegativeInfinity;
    cfg.n_heads = 1 << (rng() % 3);
    const NetworkState st = NetworkState::initialize(cfg, rng());
    const std::size_t n = 1 + rng() % 60;
    const Matrix q = random_matrix(rng, n, cfg.feature_width);
    const Matrix pos = random_matrix(rng, n, 3);
    const GarmentVector g = random_garments(rng);
    AttentionCache cache;
    const Matrix got = clothing_attention(q, st.param("codebook.weight"), g, pos, AttentionParams::from(st), cfg, &cache);
    std::vector<double> weights;
    const Matrix want = naive_attention(q, st.param("codebook.weight"), g, pos, st, &weights);
    CHECK(max_abs_diff(got, want) < 1e-12);
    for (std::size_t i = 0; i < weights.size(); ++i) CHECK(std::abs(cache.weights.data()[i] - weights[i]) < 1e-13);
  }
}

TEST_CASE("absent classes get exactly zero attention") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    NetworkConfig cfg = small_config();
    const NetworkState st = NetworkState::initialize(cfg, rng());
    const std::size_t n = 1 + rng() % 40;
    const GarmentVector g = random_garments(rng);
    AttentionCache cache;
    clothing_attention(random_matrix(rng, n, cfg.feature_width), st.param("codebook.weight"), g,
                       random_matrix(rng, n, 3), AttentionParams::from(st), cfg, &cache);
    const std::size_t K = kNumClasses;
    for (std::size_t i = 0; i < n; ++i) {
      for (int h = 0; h < cfg.n_heads; ++h) {
        double sum = 0;
        for (std::size_t j = 0; j < K; ++j) {
          const double a = cache.weights(i, h * K + j);
          if (!g.has(static_cast<ClassId>(j))) CHECK(a == 0.0);
          sum += a;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
    }
    // Changing the codebook rows of absent classes leaves the output untouched.
    NetworkState other = st;
    for (std::size_t j = 0; j < K; ++j) {
      if (g.has(static_cast<ClassId>(j))) continue;
      for (double& v : other.param("codebook.weight").row(j)) v = 10 * unit(rng);
    }
    const Matrix q = random_matrix(rng, n, cfg.feature_width), pos = random_matrix(rng, n, 3);
    const Matrix a = clothing_attention(q, st.param("codebook.weight"), g, pos, AttentionParams::from(st), cfg);
    const Matrix b = clothing_attention(q, other.param("codebook.weight"), g, pos, AttentionParams::from(other), cfg);
    CHECK(max_abs_diff(a, b) == 0.0);
  }
}

TEST_CASE("positional encoding layout") {
  Matrix p(1, 3);
  p(0, 0) = 0.25, p(0, 1) = -0.5, p(0, 2) = 0.125;
  const Matrix pe = positional_encoding(p, 3);
  REQUIRE(pe.cols() == 18);
  const double pi = 3.14159265358979323846;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      CHECK(pe(0, a * 6 + 2 * b) == doctest::Approx(std::sin(std::pow(2.0, b) * pi * p(0, a))));
      CHECK(pe(0, a * 6 + 2 * b + 1) == doctest::Approx(std::cos(std::pow(2.0, b) * pi * p(0, a))));
    }
  }
}

TEST_CASE("softmax, restriction and cross-entropy") {
  Matrix logits(2, kNumClasses);
  std::mt19937_64 rng(5);
  for (double& v : logits.values()) v = unit(rng);
  const GarmentVector g = GarmentVector::parse("tshirt,body", LabelTaxonomy::standard());
  Matrix r = logits;
  restrict_logits(r, g);
  const Matrix p = softmax_rows(r);
  for (std::size_t i = 0; i < 2; ++i) {
    double s = 0;
    for (int c = 0; c < kNumClasses; ++c) {
      if (!g.has(static_cast<ClassId>(c))) CHECK(p(i, c) == 0.0);
      s += p(i, c);
    }
    CHECK(s == doctest::Approx(1.0));
  }
  // dL/dlogits against central differences.
  const std::vector<ClassId> labels{3, 7};
  const LossResult l = ce_loss(logits, labels);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    Matrix up = logits, dn = logits;
    up.data()[i] += 1e-6;
    dn.data()[i] -= 1e-6;
    const double fd = (ce_loss(up, labels).value - ce_loss(dn, labels).value) / 2e-6;
    CHECK(l.dlogits.data()[i] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("logits are permutation equivariant bit for bit") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    NetworkConfig cfg = small_config();
    cfg.static_graph = trial % 2;
    const NetworkState st = NetworkState::initialize(cfg, rng());
    const std::size_t n = 30 + rng() % 50;
    const NetworkInput in = random_input(rng, n, cfg);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix a = forward(in, st);
    const Matrix b = forward(subset(in, perm), st);
    for (std::size_t i = 0; i < n; ++i) {
      for (int c = 0; c < kNumClasses; ++c) CHECK(b(i, c) == a(perm[i], c));
    }
  }
}

TEST_CASE("chunked inference equals the single pass") {
  std::mt19937_64 rng(47);
  const NetworkConfig cfg = small_config();
  const NetworkState st = NetworkState::initialize(cfg, 9);
  const NetworkInput in = random_input(rng, 97, cfg);
  ForwardOptions whole, chunked;
  chunked.chunk_size = 13;
  const Matrix a = forward(in, st, whole);
  const Matrix b = forward(in, st, chunked);
  CHECK(max_abs_diff(a, b) == 0.0);
  ForwardCache cache;
  const Matrix c = forward(in, st, whole, &cache);
  CHECK(max_abs_diff(a, c) == 0.0);
}

TEST_CASE("backward matches finite differences on every parameter") {
  for (auto cloth : {ClothingEncoderMode::Attention, ClothingEncoderMode::Binary}) {
    NetworkConfig cfg = tiny_config();
    cfg.clothing_encoder = cloth;
    std::mt19937_64 rng(53);
    const ScanSample scan = synthetic_scan(3, 30);
    const Example ex = make_example(scan, cfg);
    NetworkState st = NetworkState::initialize(cfg, 5);
    perturb_zeros(st, rng);
    ForwardCache cache;
    const LossResult loss = ce_loss(forward(ex.input, st, {}, &cache), ex.labels);
    const ParamSet grads = backward(ex.input, st, cache, loss.dlogits);
    const auto sig = decision_signature(cache, cfg.leaky_slope);
    std::size_t checked = 0;
    double worst = 0;
    for (const auto& [name, m] : st.params) {
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double h = 1e-6;
        auto eval = [&](double delta) {
          NetworkState s = st;
          s.param(name).data()[i] += delta;
          ForwardCache c;
          const double v = ce_loss(forward(ex.input, s, {}, &c), ex.labels).value;
          return std::pair(v, decision_signature(c, cfg.leaky_slope));
        };
        const auto [lp, sp] = eval(h);
        const auto [lm, sm] = eval(-h);
        if (sp != sig || sm != sig) continue;  // a max or kNN choice flipped
        const double fd = (lp - lm) / (2 * h), an = grads.at(name).data()[i];
        const double err = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        worst = std::max(worst, err);
        ++checked;
      }
    }
    CHECK(checked >= st.num_parameters() * 9 / 10);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("input assembly checks") {
  ScanSample s = synthetic_scan(2, 20);
  s.garments.reset();
  CHECK_THROWS_AS(make_input(s, nullptr), ValidationError);
  const NetworkState st = NetworkState::initialize(small_config(), 1);
  NetworkInput bad;
  bad.points = Matrix(5, 9);
  bad.garments = GarmentVector::parse("body", LabelTaxonomy::standard());
  CHECK_THROWS_AS(forward(bad, st), ValidationError);  // body features missing
}
