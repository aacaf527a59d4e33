// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "close/body_model.hpp"
#include "close/knn.hpp"
#include "close/matrix.hpp"
#include "close/scan.hpp"
#include "close/taxonomy.hpp"

namespace closenet {

enum class BodyEncoderMode { Canonical, None, Hybrid };
enum class ClothingEncoderMode { Attention, Binary, None };
/// NegativeInfinity: absent classes get exactly zero attention weight.
/// ZeroRows: absent codebook rows are zeroed before the key projection.
enum class MaskMode { NegativeInfinity, ZeroRows };
/// Edge function input: (p_i, p_j - p_i) or (p_i, p_j).
enum class EdgeInput { Relative, Absolute };

std::string_view to_string(BodyEncoderMode mode);
std::string_view to_string(ClothingEncoderMode mode);
BodyEncoderMode parse_body_encoder(std::string_view text);
ClothingEncoderMode parse_clothing_encoder(std::string_view text);

struct NetworkConfig {
  static constexpr int kInputFeatures = 9;  // xyz | rgb | normal

  int k = 20;
  int feature_width = 64;    // per-layer EdgeConv width (also codebook width)
  int global_width = 1024;
  int n_heads = 4;
  int num_classes = kNumClasses;
  int pe_bands = 6;          // sinusoid frequencies per axis on the query
  std::vector<int> decoder_hidden = {256, 128};
  double leaky_slope = 0.2;
  BodyEncoderMode body_encoder = BodyEncoderMode::Canonical;
  ClothingEncoderMode clothing_encoder = ClothingEncoderMode::Attention;
  MaskMode mask_mode = MaskMode::NegativeInfinity;
  EdgeInput edge_input = EdgeInput::Relative;
  bool static_graph = false;

  void validate() const;
  int body_width() const;
  int clothing_width() const;
  int point_feature_width() const { return 3 * feature_width + global_width; }
  int positional_width() const { return 6 * pe_bands; }
  /// 3l + global + body + clothing.
  int decoder_input_width() const;
  int num_parameters() const;

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

nlohmann::json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

/// Named parameter tensors, iterated in name order.
using ParamSet = std::map<std::string, Matrix, std::less<>>;

/// Layer ("edgeconv0", "global_mlp", "codebook", "attention", "decoder2", ...)
/// that owns a parameter name such as "decoder2.weight".
std::string layer_of(std::string_view param_name);

/// All learnable parameters of one network.
struct NetworkState {
  NetworkConfig config;
  ParamSet params;

  static NetworkState initialize(const NetworkConfig& config, std::uint64_t seed);

  const Matrix& param(std::string_view name) const;
  Matrix& param(std::string_view name);
  std::set<std::string> layers() const;
  std::string last_decoder_layer() const;
  std::size_t num_parameters() const;
  /// Hash over config and parameter bytes.
  std::string hash() const;
};

ParamSet zeros_like(const ParamSet& params);

/// Network input for one cloud.
struct NetworkInput {
  Matrix points;  // n×9: position | color | normal
  Matrix body;    // n×3 canonical body feature (empty when unused)
  GarmentVector garments;

  std::size_t size() const noexcept { return points.rows(); }
  Matrix positions() const { return slice_cols(points, 0, 3); }
};

/// Assembles the network input. `body` may be null when the config does not
/// use a body encoder.
NetworkInput make_input(const ScanSample& scan, const BodyFeatureField* body);
NetworkInput subset(const NetworkInput& input, std::span<const std::size_t> rows);

/// Sinusoidal encoding of positions: per axis and band b, sin(2^b·π·x), cos(2^b·π·x).
Matrix positional_encoding(const Matrix& positions, int bands);

// --- Building blocks -------------------------------------------------------

/// Per-edge function h(p_i, p_j) = LeakyReLU(RMSNorm(W·[p_i | p_j - p_i]))
/// followed by a channel-wise max over neighbours.
struct EdgeConvCache {
  KnnGraph graph;
  Matrix center;    // n×l: (Wa - Wb)·p_i (Relative) or Wa·p_i (Absolute)
  Matrix neighbor;  // n×l: Wb·p_j
  std::vector<std::uint32_t> argmax;  // n×l neighbour slot that won the max
};

Matrix edgeconv(const Matrix& features, const KnnGraph& graph, const Matrix& weight,
                const NetworkConfig& config, EdgeConvCache* cache = nullptr);

struct AttentionParams {
  const Matrix* query_weight;
  const Matrix* query_bias;
  const Matrix* key_weight;
  const Matrix* key_bias;
  const Matrix* value_weight;
  const Matrix* value_bias;
  const Matrix* out_weight;
  const Matrix* out_bias;

  static AttentionParams from(const NetworkState& state);
};

struct AttentionCache {
  Matrix query_input;  // n×(l + pe)
  Matrix query;        // n×l
  Matrix keys;         // K×l
  Matrix values;       // K×l
  Matrix weights;      // n×(heads·K)
  Matrix mixed;        // n×l concatenated head outputs
};

/// Masked multi-head attention from point features (queries) to the codebook
/// (keys/values). Returns f_c (n×l).
Matrix clothing_attention(const Matrix& query_features, const Matrix& codebook,
                          const GarmentVector& garments, const Matrix& positions,
                          const AttentionParams& params, const NetworkConfig& config,
                          AttentionCache* cache = nullptr);

/// Features produced by the point encoder plus, once assembled, the rest of
/// the decoder input.
struct FeatureBundle {
  std::array<Matrix, 3> per_layer;  // n×l each
  std::vector<double> global;       // global_width
  Matrix f_p;                       // n×(3l + global)
  Matrix f_c;                       // n×clothing_width
  Matrix f_b;                       // n×body_width
  /// Decoder input F_all = [f_p | f_b | f_c]; materialised on request.
  Matrix f_all() const;
};

FeatureBundle encode_points(const NetworkInput& input, const NetworkState& state);

// --- Whole network ---------------------------------------------------------

struct ForwardCache {
  std::array<Matrix, 3> layer_inputs;
  std::array<EdgeConvCache, 3> edge;
  std::array<Matrix, 3> per_layer;
  Matrix concat;                        // n×3l
  std::vector<std::uint32_t> global_argmax;
  std::vector<double> global_pre;       // pre-activation at the argmax row
  std::vector<double> global;
  AttentionCache attention;
  Matrix clothing;                      // f_c
  std::vector<Matrix> decoder_inputs;   // input of every decoder layer (layer 0: local part)
  std::vector<Matrix> decoder_pre;      // pre-activation of hidden layers
  Matrix logits;
};

struct ForwardOptions {
  /// Mask logits of classes absent from the garment vector to -inf.
  bool restrict_to_garments = false;
  /// Rows per head evaluation chunk; 0 evaluates all rows at once.
  std::size_t chunk_size = 0;
};

/// n×num_classes logits. When `cache` is given, everything needed by
/// backward() is recorded (chunking is ignored).
Matrix forward(const NetworkInput& input, const NetworkState& state,
               const ForwardOptions& options = {}, ForwardCache* cache = nullptr);

/// Gradients of a scalar loss given dL/dlogits. Covers every parameter.
ParamSet backward(const NetworkInput& input, const NetworkState& state,
                  const ForwardCache& cache, const Matrix& dlogits);

/// Digest of every discrete choice made by a forward pass (graphs, max
/// winners, activation signs). Equal digests mean the loss is smooth between
/// the two evaluations.
std::uint64_t decision_signature(const ForwardCache& cache, double leaky_slope);

struct LossResult {
  double value = 0.0;
  Matrix dlogits;
};

/// Mean cross-entropy over points with softmax probabilities. Optional
/// per-class weights (weighted mean) stay off by default.
LossResult ce_loss(const Matrix& logits, std::span<const ClassId> labels,
                   std::span<const double> class_weights = {});

/// Row-wise softmax; -inf logits get probability 0.
Matrix softmax_rows(const Matrix& logits);
void restrict_logits(Matrix& logits, const GarmentVector& garments);

/// Raw per-point similarity between the attention query and the key of
/// `class_id`, averaged over heads.
std::vector<double> attention_scores(const NetworkInput& input, const NetworkState& state,
                                     ClassId class_id);
/// attention_scores min-max normalised to [0,1] (all zeros when constant).
std::vector<double> export_attention_map(const NetworkInput& input, const NetworkState& state,
                                         ClassId class_id);

}  // namespace closenet
