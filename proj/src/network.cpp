// SPDX-License-Identifier: Apache-2.0
#include "close/network.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "close/error.hpp"
#include "close/hashing.hpp"

namespace closenet {

using nlohmann::json;

std::string_view to_string(BodyEncoderMode mode) {
  switch (mode) {
    case BodyEncoderMode::Canonical: return "canonical";
    case BodyEncoderMode::None: return "none";
    case BodyEncoderMode::Hybrid: return "hybrid";
  }
  return "?";
}

std::string_view to_string(ClothingEncoderMode mode) {
  switch (mode) {
    case ClothingEncoderMode::Attention: return "attention";
    case ClothingEncoderMode::Binary: return "binary";
    case ClothingEncoderMode::None: return "none";
  }
  return "?";
}

BodyEncoderMode parse_body_encoder(std::string_view text) {
  if (text == "canonical") return BodyEncoderMode::Canonical;
  if (text == "none") return BodyEncoderMode::None;
  if (text == "hybrid") return BodyEncoderMode::Hybrid;
  throw ValidationError("unknown body encoder '" + std::string(text) + "' (canonical|none|hybrid)");
}

ClothingEncoderMode parse_clothing_encoder(std::string_view text) {
  if (text == "attention") return ClothingEncoderMode::Attention;
  if (text == "binary") return ClothingEncoderMode::Binary;
  if (text == "none") return ClothingEncoderMode::None;
  throw ValidationError("unknown clothing encoder '" + std::string(text) + "' (attention|binary|none)");
}

void NetworkConfig::validate() const {
  if (k < 1) throw ValidationError("k must be at least 1");
  if (feature_width < 1 || global_width < 1 || n_heads < 1)
    throw ValidationError("network widths must be positive");
  if (feature_width % n_heads != 0)
    throw ValidationError("feature width " + std::to_string(feature_width) + " is not divisible by " +
                          std::to_string(n_heads) + " heads");
  if (num_classes != kNumClasses) throw ValidationError("num_classes must be 18");
  if (pe_bands < 0) throw ValidationError("pe_bands must be non-negative");
  for (int h : decoder_hidden) {
    if (h < 1) throw ValidationError("decoder hidden widths must be positive");
  }
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("leaky slope must lie in [0, 1)");
}

int NetworkConfig::body_width() const { return body_encoder == BodyEncoderMode::None ? 0 : 3; }

int NetworkConfig::clothing_width() const {
  switch (clothing_encoder) {
    case ClothingEncoderMode::Attention: return feature_width;
    case ClothingEncoderMode::Binary: return num_classes;
    case ClothingEncoderMode::None: return 0;
  }
  return 0;
}

int NetworkConfig::decoder_input_width() const {
  return point_feature_width() + body_width() + clothing_width();
}

namespace {

struct ParamShape {
  std::string name;
  std::size_t rows, cols;
  bool bias;
};

std::vector<ParamShape> param_shapes(const NetworkConfig& c) {
  const auto l = static_cast<std::size_t>(c.feature_width);
  std::vector<ParamShape> out;
  out.push_back({"edgeconv0.weight", l, 2 * NetworkConfig::kInputFeatures, false});
  out.push_back({"edgeconv1.weight", l, 2 * l, false});
  out.push_back({"edgeconv2.weight", l, 2 * l, false});
  const auto g = static_cast<std::size_t>(c.global_width);
  out.push_back({"global_mlp.weight", g, 3 * l, false});
  out.push_back({"global_mlp.bias", 1, g, true});
  if (c.clothing_encoder == ClothingEncoderMode::Attention) {
    out.push_back({"codebook.weight", static_cast<std::size_t>(c.num_classes), l, false});
    out.push_back({"attention.query_weight", l, l + static_cast<std::size_t>(c.positional_width()), false});
    out.push_back({"attention.query_bias", 1, l, true});
    out.push_back({"attention.key_weight", l, l, false});
    out.push_back({"attention.key_bias", 1, l, true});
    out.push_back({"attention.value_weight", l, l, false});
    out.push_back({"attention.value_bias", 1, l, true});
    out.push_back({"attention.out_weight", l, l, false});
    out.push_back({"attention.out_bias", 1, l, true});
  }
  auto in = static_cast<std::size_t>(c.decoder_input_width());
  std::vector<int> widths = c.decoder_hidden;
  widths.push_back(c.num_classes);
  for (std::size_t d = 0; d < widths.size(); ++d) {
    const auto w = static_cast<std::size_t>(widths[d]);
    out.push_back({"decoder" + std::to_string(d) + ".weight", w, in, false});
    out.push_back({"decoder" + std::to_string(d) + ".bias", 1, w, true});
    in = w;
  }
  return out;
}

double uniform_pm1(std::mt19937_64& rng) {
  return 2.0 * (static_cast<double>(rng() >> 11) * 0x1.0p-53) - 1.0;
}

}  // namespace

int NetworkConfig::num_parameters() const {
  std::size_t total = 0;
  for (const auto& s : param_shapes(*this)) total += s.rows * s.cols;
  return static_cast<int>(total);
}

json to_json(const NetworkConfig& c) {
  return json{{"k", c.k},
              {"feature_width", c.feature_width},
              {"global_width", c.global_width},
              {"n_heads", c.n_heads},
              {"num_classes", c.num_classes},
              {"pe_bands", c.pe_bands},
              {"decoder_hidden", c.decoder_hidden},
              {"leaky_slope", c.leaky_slope},
              {"body_encoder", std::string(to_string(c.body_encoder))},
              {"clothing_encoder", std::string(to_string(c.clothing_encoder))},
              {"mask_mode", c.mask_mode == MaskMode::NegativeInfinity ? "negative_infinity" : "zero_rows"},
              {"edge_input", c.edge_input == EdgeInput::Relative ? "relative" : "absolute"},
              {"static_graph", c.static_graph}};
}

NetworkConfig network_config_from_json(const json& j) {
  NetworkConfig c;
  try {
    c.k = j.value("k", c.k);
    c.feature_width = j.value("feature_width", c.feature_width);
    c.global_width = j.value("global_width", c.global_width);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.pe_bands = j.value("pe_bands", c.pe_bands);
    c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.body_encoder = parse_body_encoder(j.value("body_encoder", std::string("canonical")));
    c.clothing_encoder = parse_clothing_encoder(j.value("clothing_encoder", std::string("attention")));
    const auto mask = j.value("mask_mode", std::string("negative_infinity"));
    if (mask == "negative_infinity") c.mask_mode = MaskMode::NegativeInfinity;
    else if (mask == "zero_rows") c.mask_mode = MaskMode::ZeroRows;
    else throw ValidationError("unknown mask mode '" + mask + "'");
    const auto edge = j.value("edge_input", std::string("relative"));
    if (edge == "relative") c.edge_input = EdgeInput::Relative;
    else if (edge == "absolute") c.edge_input = EdgeInput::Absolute;
    else throw ValidationError("unknown edge input '" + edge + "'");
    c.static_graph = j.value("static_graph", c.static_graph);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("network config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string layer_of(std::string_view param_name) {
  const auto dot = param_name.find('.');
  return std::string(param_name.substr(0, dot));
}

NetworkState NetworkState::initialize(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  NetworkState state;
  state.config = config;
  std::mt19937_64 rng(seed);
  for (const auto& shape : param_shapes(config)) {
    Matrix m(shape.rows, shape.cols);
    if (!shape.bias) {
      const bool codebook = shape.name == "codebook.weight";
      const double bound = codebook ? 1.0 : std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
      for (double& v : m.values()) v = bound * uniform_pm1(rng);
    }
    state.params.emplace(shape.name, std::move(m));
  }
  return state;
}

const Matrix& NetworkState::param(std::string_view name) const {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

Matrix& NetworkState::param(std::string_view name) {
  auto it = params.find(name);
  if (it == params.end()) throw ValidationError("unknown parameter '" + std::string(name) + "'");
  return it->second;
}

std::set<std::string> NetworkState::layers() const {
  std::set<std::string> out;
  for (const auto& [name, _] : params) out.insert(layer_of(name));
  return out;
}

std::string NetworkState::last_decoder_layer() const {
  return "decoder" + std::to_string(config.decoder_hidden.size());
}

std::size_t NetworkState::num_parameters() const {
  std::size_t total = 0;
  for (const auto& [_, m] : params) total += m.size();
  return total;
}

std::string NetworkState::hash() const {
  Fnv1a h;
  h.update(to_json(config).dump());
  for (const auto& [name, m] : params) {
    h.update(name);
    h.update_value(m.rows());
    h.update_value(m.cols());
    h.update(m.values());
  }
  return h.hex();
}

ParamSet zeros_like(const ParamSet& params) {
  ParamSet out;
  for (const auto& [name, m] : params) out.emplace(name, Matrix(m.rows(), m.cols()));
  return out;
}

NetworkInput make_input(const ScanSample& scan, const BodyFeatureField* body) {
  if (scan.size() == 0) throw ValidationError("scan '" + scan.id + "' is empty");
  if (!scan.garments) throw ValidationError("scan '" + scan.id + "' has no garment vector");
  scan.garments->validate();
  NetworkInput input;
  const std::array<const Matrix*, 3> parts{&scan.points, &scan.colors, &scan.normals};
  input.points = hconcat(parts);
  if (input.points.cols() != NetworkConfig::kInputFeatures)
    throw ShapeMismatchError("scan '" + scan.id + "' must carry positions, colors and normals");
  if (body) {
    if (body->coords.rows() != scan.size())
      throw ShapeMismatchError("body features do not match the point count of scan '" + scan.id + "'");
    input.body = body->coords;
  }
  input.garments = *scan.garments;
  return input;
}

NetworkInput subset(const NetworkInput& input, std::span<const std::size_t> rows) {
  NetworkInput out;
  out.points = gather_rows(input.points, rows);
  if (!input.body.empty()) out.body = gather_rows(input.body, rows);
  out.garments = input.garments;
  return out;
}

Matrix positional_encoding(const Matrix& positions, int bands) {
  Matrix out(positions.rows(), static_cast<std::size_t>(6 * bands));
  for (std::size_t i = 0; i < positions.rows(); ++i) {
    std::size_t c = 0;
    for (std::size_t a = 0; a < 3; ++a) {
      for (int b = 0; b < bands; ++b) {
        const double arg = std::ldexp(std::numbers::pi, b) * positions(i, a);
        out(i, c++) = std::sin(arg);
        out(i, c++) = std::cos(arg);
      }
    }
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : row) m = std::max(m, v);
    double sum = 0.0;
    auto out = p.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) {
      out[c] = row[c] == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(row[c] - m);
      sum += out[c];
    }
    for (double& v : out) v /= sum;
  }
  return p;
}

void restrict_logits(Matrix& logits, const GarmentVector& garments) {
  garments.validate();
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      if (!garments.has(static_cast<ClassId>(c))) logits(i, c) = -std::numeric_limits<double>::infinity();
    }
  }
}

LossResult ce_loss(const Matrix& logits, std::span<const ClassId> labels, std::span<const double> class_weights) {
  if (labels.size() != logits.rows())
    throw ShapeMismatchError("ce_loss: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(logits.rows()) + " points");
  if (!class_weights.empty() && class_weights.size() != logits.cols())
    throw ShapeMismatchError("ce_loss: class weight count differs from class count");
  if (labels.empty()) throw ValidationError("ce_loss: no points");
  for (ClassId y : labels) {
    if (y >= logits.cols()) throw ValidationError("ce_loss: label " + std::to_string(y + 1) + " out of range");
  }
  LossResult result;
  result.dlogits = softmax_rows(logits);
  double total_weight = 0.0, total = 0.0;
  std::vector<double> w(labels.size(), 1.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!class_weights.empty()) w[i] = class_weights[labels[i]];
    total_weight += w[i];
    // log-softmax at the label computed from the logits for accuracy.
    const auto row = logits.row(i);
    double m = -std::numeric_limits<double>::infinity();
    for (double v : row) m = std::max(m, v);
    double sum = 0.0;
    for (double v : row) sum += v == -std::numeric_limits<double>::infinity() ? 0.0 : std::exp(v - m);
    total += w[i] * (m + std::log(sum) - row[labels[i]]);
  }
  result.value = total / total_weight;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto row = result.dlogits.row(i);
    row[labels[i]] -= 1.0;
    const double scale = w[i] / total_weight;
    for (double& v : row) v *= scale;
  }
  return result;
}

}  // namespace closenet
