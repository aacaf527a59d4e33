// SPDX-License-Identifier: Apache-2.0
// Shared fixtures and brute-force oracles for the unit and acceptance tests.
// The oracles are written from the definitions, loop by loop, and share no
// code with the library kernels they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "close/network.hpp"
#include "close/synthgen.hpp"
#include "close/training.hpp"

namespace closenet::testing {

inline double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = lo + (hi - lo) * unit(rng);
  return m;
}

inline std::vector<ClassId> random_labels(std::mt19937_64& rng, std::size_t n, int classes = kNumClasses) {
  std::vector<ClassId> out(n);
  for (auto& v : out) v = static_cast<ClassId>(rng() % static_cast<std::uint64_t>(classes));
  return out;
}

/// Temporary directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("close-test-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

/// Attention network small enough for exhaustive finite differences (180 parameters).
inline NetworkConfig tiny_config() {
  NetworkConfig c;
  c.k = 4;
  c.feature_width = 2;
  c.global_width = 1;
  c.n_heads = 2;
  c.pe_bands = 1;
  c.decoder_hidden = {1};
  return c;
}

/// Small but non-trivial network for behavioural tests.
inline NetworkConfig small_config() {
  NetworkConfig c;
  c.k = 8;
  c.feature_width = 16;
  c.global_width = 32;
  c.n_heads = 2;
  c.pe_bands = 2;
  c.decoder_hidden = {32};
  return c;
}

inline ScanSample synthetic_scan(std::uint64_t seed, std::size_t n,
                                 std::vector<ClassId> recipe = {classes::TShirt, classes::Pants, classes::Shoes,
                                                                classes::Body, classes::Hair}) {
  SynthConfig sc;
  sc.seed = seed;
  sc.n_points = n;
  sc.recipe = std::move(recipe);
  sc.id = "scan-" + std::to_string(seed);
  return generate(sc);
}

/// Replaces exact zeros (fresh biases) so every parameter influences the loss.
inline void perturb_zeros(NetworkState& state, std::mt19937_64& rng) {
  for (auto& [name, m] : state.params) {
    for (double& v : m.values()) {
      if (v == 0.0) v = 0.2 * (unit(rng) - 0.5);
    }
  }
}

// --- Oracles ----------------------------------------------------------------

/// k nearest rows of `f` to row i, by (squared distance, index), self excluded.
inline std::vector<std::uint32_t> brute_knn_row(const Matrix& f, std::size_t i, std::size_t k) {
  std::vector<std::pair<long double, std::uint32_t>> d;
  for (std::size_t j = 0; j < f.rows(); ++j) {
    if (j == i) continue;
    long double s = 0.0L;
    for (std::size_t c = 0; c < f.cols(); ++c) {
      const long double t = static_cast<long double>(f(i, c)) - static_cast<long double>(f(j, c));
      s += t * t;
    }
    d.emplace_back(s, static_cast<std::uint32_t>(j));
  }
  std::sort(d.begin(), d.end());
  std::vector<std::uint32_t> out;
  for (std::size_t a = 0; a < std::min(k, d.size()); ++a) out.push_back(d[a].second);
  return out;
}

inline std::uint32_t brute_nearest(const Matrix& pts, const double q[3]) {
  std::uint32_t best = 0;
  long double bd = std::numeric_limits<long double>::infinity();
  for (std::size_t j = 0; j < pts.rows(); ++j) {
    long double s = 0.0L;
    for (int c = 0; c < 3; ++c) {
      const long double t = static_cast<long double>(q[c]) - pts(j, c);
      s += t * t;
    }
    if (s < bd) bd = s, best = static_cast<std::uint32_t>(j);
  }
  return best;
}

/// Per-class IoU from explicit set counting; NaN marks classes absent on both sides.
inline std::vector<double> brute_iou(const std::vector<std::vector<ClassId>>& pred,
                                     const std::vector<std::vector<ClassId>>& gt, int classes = kNumClasses) {
  std::vector<double> out(classes);
  for (int c = 0; c < classes; ++c) {
    double inter = 0, uni = 0;
    for (std::size_t s = 0; s < pred.size(); ++s) {
      for (std::size_t i = 0; i < pred[s].size(); ++i) {
        const bool p = pred[s][i] == c, g = gt[s][i] == c;
        inter += p && g;
        uni += p || g;
      }
    }
    out[c] = uni > 0 ? inter / uni : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

inline double mean_ignoring_nan(const std::vector<double>& v) {
  double s = 0;
  int n = 0;
  for (double x : v) {
    if (!std::isnan(x)) s += x, ++n;
  }
  return n ? s / n : 0.0;
}

/// EdgeConv from the definition: for every neighbour j build the edge vector
/// e = [x_i | x_j - x_i] (or [x_i | x_j]), z = W·e, ŷ = z / sqrt(mean(z²) + 1e-6),
/// then LeakyReLU and a channel-wise max over neighbours.
inline Matrix naive_edgeconv(const Matrix& x, const std::vector<std::vector<std::uint32_t>>& nbrs, const Matrix& w,
                             bool relative, double slope) {
  const std::size_t n = x.rows(), in = x.cols(), l = w.rows();
  Matrix out(n, l);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> best(l, -std::numeric_limits<double>::infinity());
    for (auto j : nbrs[i]) {
      std::vector<double> e(2 * in);
      for (std::size_t c = 0; c < in; ++c) {
        e[c] = x(i, c);
        e[in + c] = relative ? x(j, c) - x(i, c) : x(j, c);
      }
      std::vector<double> z(l, 0.0);
      double ms = 0.0;
      for (std::size_t o = 0; o < l; ++o) {
        for (std::size_t c = 0; c < 2 * in; ++c) z[o] += w(o, c) * e[c];
        ms += z[o] * z[o];
      }
      ms /= static_cast<double>(l);
      for (std::size_t o = 0; o < l; ++o) {
        double y = z[o] / std::sqrt(ms + 1e-6);
        y = y > 0 ? y : slope * y;
        best[o] = std::max(best[o], y);
      }
    }
    for (std::size_t o = 0; o < l; ++o) out(i, o) = best[o];
  }
  return out;
}

/// Multi-head attention from the definition, with absent classes removed
/// from the softmax. Returns the n×l output and, through `weights`, the
/// per-head attention (n × heads × K, zeros for absent classes).
inline Matrix naive_attention(const Matrix& q_in, const Matrix& codebook, const GarmentVector& garments,
                              const Matrix& positions, const NetworkState& st, std::vector<double>* weights = nullptr) {
  const auto& c = st.config;
  const std::size_t n = q_in.rows(), l = static_cast<std::size_t>(c.feature_width);
  const std::size_t H = static_cast<std::size_t>(c.n_heads), dh = l / H, K = codebook.rows();
  const auto affine = [](const Matrix& w, const Matrix& b, const std::vector<double>& x) {
    std::vector<double> y(w.rows());
    for (std::size_t o = 0; o < w.rows(); ++o) {
      y[o] = b(0, o);
      for (std::size_t i = 0; i < w.cols(); ++i) y[o] += w(o, i) * x[i];
    }
    return y;
  };
  std::vector<std::vector<double>> keys(K), vals(K);
  for (std::size_t j = 0; j < K; ++j) {
    std::vector<double> g(l);
    for (std::size_t d = 0; d < l; ++d) {
      g[d] = c.mask_mode == MaskMode::ZeroRows && !garments.has(static_cast<ClassId>(j)) ? 0.0 : codebook(j, d);
    }
    keys[j] = affine(st.param("attention.key_weight"), st.param("attention.key_bias"), g);
    vals[j] = affine(st.param("attention.value_weight"), st.param("attention.value_bias"), g);
  }
  if (weights) weights->assign(n * H * K, 0.0);
  Matrix out(n, l);
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> x(q_in.row(i).begin(), q_in.row(i).end());
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < c.pe_bands; ++b) {
        const double f = std::pow(2.0, b) * pi * positions(i, a);
        x.push_back(std::sin(f));
        x.push_back(std::cos(f));
      }
    }
    const auto q = affine(st.param("attention.query_weight"), st.param("attention.query_bias"), x);
    std::vector<double> mixed(l, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      std::vector<double> s(K, -std::numeric_limits<double>::infinity());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < K; ++j) {
        if (c.mask_mode == MaskMode::NegativeInfinity && !garments.has(static_cast<ClassId>(j))) continue;
        double dot = 0;
        for (std::size_t d = 0; d < dh; ++d) dot += q[h * dh + d] * keys[j][h * dh + d];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < K; ++j) z += std::isinf(s[j]) ? 0.0 : std::exp(s[j] - mx);
      for (std::size_t j = 0; j < K; ++j) {
        const double a = std::isinf(s[j]) ? 0.0 : std::exp(s[j] - mx) / z;
        if (weights) (*weights)[(i * H + h) * K + j] = a;
        for (std::size_t d = 0; d < dh; ++d) mixed[h * dh + d] += a * vals[j][h * dh + d];
      }
    }
    const auto y = affine(st.param("attention.out_weight"), st.param("attention.out_bias"), mixed);
    for (std::size_t d = 0; d < l; ++d) out(i, d) = y[d];
  }
  return out;
}

}  // namespace closenet::testing
