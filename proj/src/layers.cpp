// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include "close/error.hpp"
#include "close/hashing.hpp"
#include "close/network.hpp"

namespace closenet {
namespace {

constexpr double kNormEps = 1e-6;
constexpr std::size_t kGlobalChunk = 2048;

inline double leaky(double x, double slope) { return x > 0.0 ? x : slope * x; }
inline double leaky_grad(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

std::vector<double> column_sums(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto row = m.row(i);
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += row[c];
  }
  return out;
}

void add_row_vector(Matrix& target, std::span<const double> v) {
  auto row = target.row(0);
  for (std::size_t c = 0; c < v.size(); ++c) row[c] += v[c];
}

Matrix center_weight(const Matrix& weight, std::size_t in, EdgeInput mode) {
  Matrix wa = slice_cols(weight, 0, in);
  if (mode == EdgeInput::Relative) add_inplace(wa, slice_cols(weight, in, in), -1.0);
  return wa;
}

// Normalised edge response ŷ = z / rms(z) for z = u + v.
inline double normalise_edge(const double* u, const double* v, double* z, std::size_t l) {
  double ss = 0.0;
  for (std::size_t c = 0; c < l; ++c) {
    z[c] = u[c] + v[c];
    ss += z[c] * z[c];
  }
  return 1.0 / std::sqrt(ss / static_cast<double>(l) + kNormEps);
}

struct EdgeGrads {
  Matrix weight;
  Matrix input;
};

EdgeGrads edgeconv_backward(const Matrix& features, const Matrix& weight, const NetworkConfig& config,
                            const EdgeConvCache& cache, const Matrix& output, const Matrix& doutput) {
  const std::size_t n = features.rows(), in = features.cols(), l = weight.rows();
  const std::size_t k = cache.graph.k;
  Matrix du(n, l), dv(n, l);
  std::vector<double> z(l), dy(l);
  std::vector<char> seen(k);
  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = cache.graph.of(i);
    const std::uint32_t* arg = cache.argmax.data() + i * l;
    std::fill(seen.begin(), seen.end(), 0);
    for (std::size_t c0 = 0; c0 < l; ++c0) {
      const std::uint32_t slot = arg[c0];
      if (seen[slot]) continue;
      seen[slot] = 1;
      bool any = false;
      for (std::size_t c = 0; c < l; ++c) {
        dy[c] = arg[c] == slot ? doutput(i, c) * leaky_grad(output(i, c), config.leaky_slope) : 0.0;
        any = any || dy[c] != 0.0;
      }
      if (!any) continue;
      const std::size_t j = nbrs[slot];
      const double r = normalise_edge(cache.center.row(i).data(), cache.neighbor.row(j).data(), z.data(), l);
      double dot = 0.0;
      for (std::size_t c = 0; c < l; ++c) dot += dy[c] * z[c] * r;
      dot /= static_cast<double>(l);
      for (std::size_t c = 0; c < l; ++c) {
        const double dz = r * (dy[c] - z[c] * r * dot);
        du(i, c) += dz;
        dv(j, c) += dz;
      }
    }
  }
  const Matrix wc = center_weight(weight, in, config.edge_input);
  const Matrix wb = slice_cols(weight, in, in);
  const Matrix dwc = matmul_tn(du, features);
  const Matrix dwb = matmul_tn(dv, features);
  EdgeGrads g;
  g.weight.resize(l, 2 * in);
  for (std::size_t o = 0; o < l; ++o) {
    for (std::size_t c = 0; c < in; ++c) {
      g.weight(o, c) = dwc(o, c);
      g.weight(o, in + c) = config.edge_input == EdgeInput::Relative ? dwb(o, c) - dwc(o, c) : dwb(o, c);
    }
  }
  g.input = matmul(du, wc);
  add_inplace(g.input, matmul(dv, wb));
  return g;
}

void check_input(const NetworkInput& input, const NetworkConfig& config) {
  if (input.points.cols() != NetworkConfig::kInputFeatures)
    throw ShapeMismatchError("network input must have 9 columns (position, color, normal)");
  if (input.size() < 2) throw ValidationError("network input needs at least 2 points");
  if (config.body_width() > 0 && (input.body.rows() != input.size() || input.body.cols() != 3))
    throw ShapeMismatchError("body features missing or mis-sized; run the body encoder first");
  input.garments.validate();
}

KnnGraph graph_for(const Matrix& features, int k, bool positions_only) {
  if (positions_only) return build_knn_graph(slice_cols(features, 0, 3), k);
  return build_knn_graph(features, k);
}

// Runs the point encoder, filling the encoder part of `c`.
void encode(const NetworkInput& input, const NetworkState& state, ForwardCache& c) {
  const auto& config = state.config;
  for (int s = 0; s < 3; ++s) {
    const Matrix& x = s == 0 ? input.points : c.per_layer[s - 1];
    c.layer_inputs[s] = x;
    KnnGraph graph = (s > 0 && config.static_graph) ? c.edge[0].graph : graph_for(x, config.k, s == 0);
    c.per_layer[s] = edgeconv(x, graph, state.param("edgeconv" + std::to_string(s) + ".weight"), config, &c.edge[s]);
  }
  const std::array<const Matrix*, 3> parts{&c.per_layer[0], &c.per_layer[1], &c.per_layer[2]};
  c.concat = hconcat(parts);

  const Matrix& w = state.param("global_mlp.weight");
  const auto bias = state.param("global_mlp.bias").row(0);
  const std::size_t g = w.rows(), n = input.size();
  c.global_pre.assign(g, -std::numeric_limits<double>::infinity());
  c.global_argmax.assign(g, 0);
  for (std::size_t begin = 0; begin < n; begin += kGlobalChunk) {
    const std::size_t count = std::min(kGlobalChunk, n - begin);
    const Matrix pre = linear(slice_rows(c.concat, begin, count), w, bias);
    for (std::size_t r = 0; r < count; ++r) {
      const auto row = pre.row(r);
      for (std::size_t ch = 0; ch < g; ++ch) {
        if (row[ch] > c.global_pre[ch]) {
          c.global_pre[ch] = row[ch];
          c.global_argmax[ch] = static_cast<std::uint32_t>(begin + r);
        }
      }
    }
  }
  c.global.resize(g);
  for (std::size_t ch = 0; ch < g; ++ch) c.global[ch] = leaky(c.global_pre[ch], config.leaky_slope);
}

Matrix clothing_rows(const NetworkInput& input, const NetworkState& state, const Matrix& query_features,
                     const Matrix& positions, AttentionCache* cache) {
  const auto& config = state.config;
  const std::size_t n = query_features.rows();
  switch (config.clothing_encoder) {
    case ClothingEncoderMode::Attention:
      return clothing_attention(query_features, state.param("codebook.weight"), input.garments, positions,
                                AttentionParams::from(state), config, cache);
    case ClothingEncoderMode::Binary: {
      Matrix out(n, static_cast<std::size_t>(config.num_classes));
      const auto g = input.garments.as_doubles();
      for (std::size_t i = 0; i < n; ++i) std::copy(g.begin(), g.end(), out.row(i).begin());
      return out;
    }
    case ClothingEncoderMode::None: return Matrix(n, 0);
  }
  return {};
}

// First decoder layer split into its per-point columns and the broadcast
// global block folded into an effective bias.
struct FirstLayer {
  Matrix local_weight;
  std::vector<double> bias;
};

FirstLayer first_layer(const NetworkState& state, std::span<const double> global) {
  const auto& config = state.config;
  const Matrix& w = state.param("decoder0.weight");
  const auto b = state.param("decoder0.bias").row(0);
  const std::size_t p = 3 * static_cast<std::size_t>(config.feature_width), g = global.size();
  const std::size_t rest = static_cast<std::size_t>(config.body_width() + config.clothing_width());
  const Matrix head = slice_cols(w, 0, p);
  const Matrix tail = slice_cols(w, p + g, rest);
  const std::array<const Matrix*, 2> parts{&head, &tail};
  FirstLayer out{hconcat(parts), std::vector<double>(b.begin(), b.end())};
  for (std::size_t o = 0; o < w.rows(); ++o) {
    double acc = 0.0;
    for (std::size_t c = 0; c < g; ++c) acc += w(o, p + c) * global[c];
    out.bias[o] += acc;
  }
  return out;
}

Matrix local_decoder_input(const Matrix& concat, const Matrix& body, const Matrix& clothing) {
  const std::array<const Matrix*, 3> parts{&concat, &body, &clothing};
  return hconcat(parts);
}

Matrix body_rows(const NetworkInput& input, const NetworkConfig& config, std::size_t begin, std::size_t count) {
  if (config.body_width() == 0) return Matrix(count, 0);
  return slice_rows(input.body, begin, count);
}

}  // namespace

Matrix edgeconv(const Matrix& features, const KnnGraph& graph, const Matrix& weight, const NetworkConfig& config,
                EdgeConvCache* cache) {
  const std::size_t n = features.rows(), in = features.cols(), l = weight.rows();
  if (weight.cols() != 2 * in)
    throw ShapeMismatchError("edgeconv: weight expects " + std::to_string(weight.cols() / 2) +
                             "-wide features, got " + std::to_string(in));
  if (graph.num_points != n) throw ShapeMismatchError("edgeconv: graph built over a different point set");
  const Matrix u = linear(features, center_weight(weight, in, config.edge_input));
  const Matrix v = linear(features, slice_cols(weight, in, in));
  Matrix out(n, l);
  std::vector<std::uint32_t> argmax(n * l, 0);
  std::vector<double> z(l);
  for (std::size_t i = 0; i < n; ++i) {
    auto best = out.row(i);
    std::fill(best.begin(), best.end(), -std::numeric_limits<double>::infinity());
    std::uint32_t* arg = argmax.data() + i * l;
    const auto nbrs = graph.of(i);
    for (std::size_t s = 0; s < nbrs.size(); ++s) {
      const double r = normalise_edge(u.row(i).data(), v.row(nbrs[s]).data(), z.data(), l);
      for (std::size_t c = 0; c < l; ++c) {
        const double y = z[c] * r;
        if (y > best[c]) {
          best[c] = y;
          arg[c] = static_cast<std::uint32_t>(s);
        }
      }
    }
    for (double& b : best) b = leaky(b, config.leaky_slope);
  }
  if (cache) {
    cache->graph = graph;
    cache->center = u;
    cache->neighbor = v;
    cache->argmax = std::move(argmax);
  }
  return out;
}

AttentionParams AttentionParams::from(const NetworkState& state) {
  return {&state.param("attention.query_weight"), &state.param("attention.query_bias"),
          &state.param("attention.key_weight"),   &state.param("attention.key_bias"),
          &state.param("attention.value_weight"), &state.param("attention.value_bias"),
          &state.param("attention.out_weight"),   &state.param("attention.out_bias")};
}

namespace {

Matrix masked_codebook(const Matrix& codebook, const GarmentVector& garments, MaskMode mode) {
  Matrix g = codebook;
  if (mode == MaskMode::ZeroRows) {
    for (std::size_t j = 0; j < g.rows(); ++j) {
      if (!garments.has(static_cast<ClassId>(j))) std::fill(g.row(j).begin(), g.row(j).end(), 0.0);
    }
  }
  return g;
}

bool participates(const GarmentVector& garments, std::size_t j, MaskMode mode) {
  return mode == MaskMode::ZeroRows || garments.has(static_cast<ClassId>(j));
}

}  // namespace

Matrix clothing_attention(const Matrix& query_features, const Matrix& codebook, const GarmentVector& garments,
                          const Matrix& positions, const AttentionParams& params, const NetworkConfig& config,
                          AttentionCache* cache) {
  garments.validate();
  const std::size_t n = query_features.rows(), l = static_cast<std::size_t>(config.feature_width);
  const std::size_t heads = static_cast<std::size_t>(config.n_heads), dh = l / heads, K = codebook.rows();
  if (query_features.cols() != l || codebook.cols() != l)
    throw ShapeMismatchError("clothing_attention: feature width mismatch");
  if (positions.rows() != n || positions.cols() != 3)
    throw ShapeMismatchError("clothing_attention: positions must be n×3");
  const Matrix pe = positional_encoding(positions, config.pe_bands);
  const std::array<const Matrix*, 2> parts{&query_features, &pe};
  Matrix query_input = hconcat(parts);
  Matrix query = linear(query_input, *params.query_weight, params.query_bias->row(0));
  const Matrix g = masked_codebook(codebook, garments, config.mask_mode);
  Matrix keys = linear(g, *params.key_weight, params.key_bias->row(0));
  Matrix values = linear(g, *params.value_weight, params.value_bias->row(0));

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix weights(n, heads * K);
  Matrix mixed(n, l);
  std::vector<double> s(K);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* q = query.row(i).data() + h * dh;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < K; ++j) {
        if (!participates(garments, j, config.mask_mode)) continue;
        const double* kj = keys.row(j).data() + h * dh;
        double dot = 0.0;
        for (std::size_t d = 0; d < dh; ++d) dot += q[d] * kj[d];
        s[j] = dot * scale;
        m = std::max(m, s[j]);
      }
      double sum = 0.0;
      double* a = weights.row(i).data() + h * K;
      for (std::size_t j = 0; j < K; ++j) {
        if (!participates(garments, j, config.mask_mode)) continue;
        a[j] = std::exp(s[j] - m);
        sum += a[j];
      }
      double* out = mixed.row(i).data() + h * dh;
      for (std::size_t j = 0; j < K; ++j) {
        if (!participates(garments, j, config.mask_mode)) continue;
        a[j] /= sum;
        const double* vj = values.row(j).data() + h * dh;
        for (std::size_t d = 0; d < dh; ++d) out[d] += a[j] * vj[d];
      }
    }
  }
  Matrix result = linear(mixed, *params.out_weight, params.out_bias->row(0));
  if (cache) {
    cache->query_input = std::move(query_input);
    cache->query = std::move(query);
    cache->keys = std::move(keys);
    cache->values = std::move(values);
    cache->weights = std::move(weights);
    cache->mixed = std::move(mixed);
  }
  return result;
}

Matrix FeatureBundle::f_all() const {
  const std::array<const Matrix*, 3> parts{&f_p, &f_b, &f_c};
  return hconcat(parts);
}

FeatureBundle encode_points(const NetworkInput& input, const NetworkState& state) {
  state.config.validate();
  check_input(input, state.config);
  ForwardCache c;
  encode(input, state, c);
  FeatureBundle b;
  b.per_layer = c.per_layer;
  b.global = c.global;
  const std::size_t n = input.size(), p = c.concat.cols(), g = c.global.size();
  b.f_p.resize(n, p + g);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = b.f_p.row(i);
    std::copy(c.concat.row(i).begin(), c.concat.row(i).end(), row.begin());
    std::copy(c.global.begin(), c.global.end(), row.begin() + static_cast<std::ptrdiff_t>(p));
  }
  b.f_c = clothing_rows(input, state, c.per_layer[2], input.positions(), nullptr);
  b.f_b = body_rows(input, state.config, 0, n);
  return b;
}

Matrix forward(const NetworkInput& input, const NetworkState& state, const ForwardOptions& options,
               ForwardCache* cache) {
  const auto& config = state.config;
  config.validate();
  check_input(input, config);
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  encode(input, state, c);

  const FirstLayer first = first_layer(state, c.global);
  const std::size_t n = input.size(), layers = config.decoder_hidden.size() + 1;
  const std::size_t chunk = (cache || options.chunk_size == 0) ? n : options.chunk_size;
  const Matrix positions = input.positions();
  Matrix logits(n, static_cast<std::size_t>(config.num_classes));
  if (cache) {
    c.decoder_inputs.assign(layers, Matrix());
    c.decoder_pre.assign(layers - 1, Matrix());
  }
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t count = std::min(chunk, n - begin);
    const bool whole = begin == 0 && count == n;
    const Matrix q = whole ? c.per_layer[2] : slice_rows(c.per_layer[2], begin, count);
    const Matrix pos = whole ? positions : slice_rows(positions, begin, count);
    Matrix clothing = clothing_rows(input, state, q, pos, cache ? &c.attention : nullptr);
    Matrix x = local_decoder_input(whole ? c.concat : slice_rows(c.concat, begin, count),
                                   body_rows(input, config, begin, count), clothing);
    if (cache) c.clothing = std::move(clothing);
    for (std::size_t d = 0; d < layers; ++d) {
      Matrix pre = d == 0 ? linear(x, first.local_weight, first.bias)
                          : linear(x, state.param("decoder" + std::to_string(d) + ".weight"),
                                   state.param("decoder" + std::to_string(d) + ".bias").row(0));
      if (cache) c.decoder_inputs[d] = x;
      if (d + 1 == layers) {
        for (std::size_t r = 0; r < count; ++r) {
          std::copy(pre.row(r).begin(), pre.row(r).end(), logits.row(begin + r).begin());
        }
        break;
      }
      Matrix act = pre;
      for (double& v : act.values()) v = leaky(v, config.leaky_slope);
      if (cache) c.decoder_pre[d] = std::move(pre);
      x = std::move(act);
    }
  }
  if (options.restrict_to_garments) restrict_logits(logits, input.garments);
  if (cache) c.logits = logits;
  return logits;
}

ParamSet backward(const NetworkInput& input, const NetworkState& state, const ForwardCache& c,
                  const Matrix& dlogits) {
  const auto& config = state.config;
  const std::size_t n = input.size(), l = static_cast<std::size_t>(config.feature_width);
  if (dlogits.rows() != n || dlogits.cols() != static_cast<std::size_t>(config.num_classes))
    throw ShapeMismatchError("backward: gradient does not match the logits");
  ParamSet grads = zeros_like(state.params);
  const std::size_t layers = config.decoder_hidden.size() + 1;
  const FirstLayer first = first_layer(state, c.global);

  Matrix dpre = dlogits;
  Matrix dlocal;
  for (std::size_t d = layers; d-- > 0;) {
    const std::string name = "decoder" + std::to_string(d);
    const Matrix& x = c.decoder_inputs[d];
    const auto db = column_sums(dpre);
    add_row_vector(grads.at(name + ".bias"), db);
    const Matrix dw = matmul_tn(dpre, x);
    if (d > 0) {
      add_inplace(grads.at(name + ".weight"), dw);
      Matrix dx = matmul(dpre, state.param(name + ".weight"));
      const Matrix& pre = c.decoder_pre[d - 1];
      for (std::size_t e = 0; e < dx.size(); ++e) dx.data()[e] *= leaky_grad(pre.data()[e], config.leaky_slope);
      dpre = std::move(dx);
      continue;
    }
    // First layer: scatter the local block and the broadcast global block.
    Matrix& gw = grads.at(name + ".weight");
    const std::size_t p = 3 * l, g = c.global.size();
    for (std::size_t o = 0; o < gw.rows(); ++o) {
      for (std::size_t col = 0; col < dw.cols(); ++col) {
        const std::size_t target = col < p ? col : col + g;
        gw(o, target) += dw(o, col);
      }
      for (std::size_t ch = 0; ch < g; ++ch) gw(o, p + ch) += db[o] * c.global[ch];
    }
    dlocal = matmul(dpre, first.local_weight);
  }

  const Matrix& w0 = state.param("decoder0.weight");
  std::vector<double> dglobal(c.global.size(), 0.0);
  {
    const auto db = column_sums(dpre);
    for (std::size_t o = 0; o < w0.rows(); ++o) {
      for (std::size_t ch = 0; ch < dglobal.size(); ++ch) dglobal[ch] += db[o] * w0(o, 3 * l + ch);
    }
  }
  Matrix dconcat = slice_cols(dlocal, 0, 3 * l);
  std::array<Matrix, 3> dlayer;
  for (int s = 0; s < 3; ++s) dlayer[s] = Matrix(n, l);

  if (config.clothing_encoder == ClothingEncoderMode::Attention) {
    const Matrix dfc = slice_cols(dlocal, 3 * l + static_cast<std::size_t>(config.body_width()), l);
    const auto& a = c.attention;
    const std::size_t heads = static_cast<std::size_t>(config.n_heads), dh = l / heads;
    const std::size_t K = static_cast<std::size_t>(config.num_classes);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    add_inplace(grads.at("attention.out_weight"), matmul_tn(dfc, a.mixed));
    add_row_vector(grads.at("attention.out_bias"), column_sums(dfc));
    const Matrix dmixed = matmul(dfc, state.param("attention.out_weight"));
    Matrix dq(n, l), dk(K, l), dv(K, l);
    std::vector<double> da(K);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t h = 0; h < heads; ++h) {
        const double* wts = a.weights.row(i).data() + h * K;
        const double* dm = dmixed.row(i).data() + h * dh;
        const double* q = a.query.row(i).data() + h * dh;
        double weighted = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
          if (!participates(input.garments, j, config.mask_mode)) continue;
          const double* vj = a.values.row(j).data() + h * dh;
          double dot = 0.0;
          for (std::size_t e = 0; e < dh; ++e) {
            dot += dm[e] * vj[e];
            dv(j, h * dh + e) += wts[j] * dm[e];
          }
          da[j] = dot;
          weighted += wts[j] * dot;
        }
        for (std::size_t j = 0; j < K; ++j) {
          if (!participates(input.garments, j, config.mask_mode)) continue;
          const double ds = wts[j] * (da[j] - weighted) * scale;
          const double* kj = a.keys.row(j).data() + h * dh;
          for (std::size_t e = 0; e < dh; ++e) {
            dq(i, h * dh + e) += ds * kj[e];
            dk(j, h * dh + e) += ds * q[e];
          }
        }
      }
    }
    add_inplace(grads.at("attention.query_weight"), matmul_tn(dq, a.query_input));
    add_row_vector(grads.at("attention.query_bias"), column_sums(dq));
    const Matrix g = masked_codebook(state.param("codebook.weight"), input.garments, config.mask_mode);
    add_inplace(grads.at("attention.key_weight"), matmul_tn(dk, g));
    add_row_vector(grads.at("attention.key_bias"), column_sums(dk));
    add_inplace(grads.at("attention.value_weight"), matmul_tn(dv, g));
    add_row_vector(grads.at("attention.value_bias"), column_sums(dv));
    Matrix dg = matmul(dk, state.param("attention.key_weight"));
    add_inplace(dg, matmul(dv, state.param("attention.value_weight")));
    if (config.mask_mode == MaskMode::ZeroRows) {
      for (std::size_t j = 0; j < K; ++j) {
        if (!input.garments.has(static_cast<ClassId>(j))) std::fill(dg.row(j).begin(), dg.row(j).end(), 0.0);
      }
    }
    add_inplace(grads.at("codebook.weight"), dg);
    const Matrix dqin = matmul(dq, state.param("attention.query_weight"));
    add_inplace(dlayer[2], slice_cols(dqin, 0, l));
  }

  {
    const Matrix& w = state.param("global_mlp.weight");
    Matrix& gw = grads.at("global_mlp.weight");
    auto gb = grads.at("global_mlp.bias").row(0);
    for (std::size_t ch = 0; ch < dglobal.size(); ++ch) {
      const double d = dglobal[ch] * leaky_grad(c.global_pre[ch], config.leaky_slope);
      if (d == 0.0) continue;
      const std::size_t r = c.global_argmax[ch];
      gb[ch] += d;
      auto src = c.concat.row(r);
      auto dst = dconcat.row(r);
      for (std::size_t e = 0; e < src.size(); ++e) {
        gw(ch, e) += d * src[e];
        dst[e] += d * w(ch, e);
      }
    }
  }
  for (std::size_t s = 0; s < 3; ++s) add_inplace(dlayer[s], slice_cols(dconcat, s * l, l));

  for (int s = 2; s >= 0; --s) {
    const std::string name = "edgeconv" + std::to_string(s) + ".weight";
    EdgeGrads g = edgeconv_backward(c.layer_inputs[s], state.param(name), config, c.edge[s], c.per_layer[s],
                                    dlayer[s]);
    add_inplace(grads.at(name), g.weight);
    if (s > 0) add_inplace(dlayer[s - 1], g.input);
  }
  return grads;
}

std::uint64_t decision_signature(const ForwardCache& c, double leaky_slope) {
  Fnv1a h;
  h.update_value(leaky_slope);
  for (const auto& e : c.edge) {
    h.update(e.graph.neighbors.data(), e.graph.neighbors.size() * sizeof(std::uint32_t));
    h.update(e.argmax.data(), e.argmax.size() * sizeof(std::uint32_t));
  }
  auto signs = [&h](std::span<const double> values) {
    for (double v : values) h.update_value(static_cast<char>(v > 0.0));
  };
  for (const auto& m : c.per_layer) signs(m.values());
  h.update(c.global_argmax.data(), c.global_argmax.size() * sizeof(std::uint32_t));
  signs(c.global_pre);
  for (const auto& m : c.decoder_pre) signs(m.values());
  return h.digest();
}

std::vector<double> attention_scores(const NetworkInput& input, const NetworkState& state, ClassId class_id) {
  const auto& config = state.config;
  if (config.clothing_encoder != ClothingEncoderMode::Attention)
    throw ValidationError("attention maps need a model trained with the attention clothing encoder");
  if (class_id >= config.num_classes)
    throw ValidationError("class id " + std::to_string(class_id + 1) + " is not in the taxonomy");
  check_input(input, config);
  ForwardCache c;
  encode(input, state, c);
  const std::size_t l = static_cast<std::size_t>(config.feature_width);
  const std::size_t heads = static_cast<std::size_t>(config.n_heads), dh = l / heads;
  const Matrix pe = positional_encoding(input.positions(), config.pe_bands);
  const std::array<const Matrix*, 2> parts{&c.per_layer[2], &pe};
  const Matrix query = linear(hconcat(parts), state.param("attention.query_weight"),
                              state.param("attention.query_bias").row(0));
  const Matrix g = masked_codebook(state.param("codebook.weight"), input.garments, config.mask_mode);
  const Matrix key = linear(slice_rows(g, class_id, 1), state.param("attention.key_weight"),
                            state.param("attention.key_bias").row(0));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    double total = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      double dot = 0.0;
      for (std::size_t e = 0; e < dh; ++e) dot += query(i, h * dh + e) * key(0, h * dh + e);
      total += dot * scale;
    }
    out[i] = total / static_cast<double>(heads);
  }
  return out;
}

std::vector<double> export_attention_map(const NetworkInput& input, const NetworkState& state, ClassId class_id) {
  auto scores = attention_scores(input, state, class_id);
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double min = *lo, range = *hi - *lo;
  for (double& v : scores) v = range > 0.0 ? (v - min) / range : 0.0;
  return scores;
}

}  // namespace closenet
