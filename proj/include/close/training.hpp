// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "close/body_model.hpp"
#include "close/metrics.hpp"
#include "close/network.hpp"
#include "close/scan.hpp"

namespace closenet {

/// A scan prepared for the network: normalized, with body features attached.
struct Example {
  std::string id;
  NetworkInput input;
  std::vector<ClassId> labels;  // empty for unlabeled scans
};

/// Normalizes the scan and runs the body encoder the config asks for.
/// Throws ValidationError when body parameters are needed but missing.
Example make_example(const ScanSample& scan, const NetworkConfig& config,
                     const BodyModel& body_model = toy_body_model(), BodyFeatureCache* cache = nullptr);
std::vector<Example> make_examples(const std::vector<ScanSample>& scans, const NetworkConfig& config,
                                   const BodyModel& body_model = toy_body_model(),
                                   BodyFeatureCache* cache = nullptr);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t sample_points = 4096;
  bool class_weighting = false;
  /// Random rotation of each training scan about the vertical axis, drawn
  /// uniformly from [-augment_yaw, augment_yaw] radians. 0 disables it.
  double augment_yaw = 0.0;
  NetworkConfig network;
  std::optional<std::filesystem::path> history_csv;
  std::optional<std::filesystem::path> report_json;
  bool verbose = false;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double val_miou = 0.0;
  double learning_rate = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  NetworkState state;  // best-on-validation weights
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_miou = 0.0;
};

/// Adam with cosine decay over mini-batches of whole scans. Deterministic for
/// a fixed seed. Throws NumericError naming the batch when the loss is not finite.
TrainResult train(const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const TrainConfig& config);

struct ScanScore {
  std::string id;
  IouResult iou;
};

struct EvalReport {
  std::vector<std::optional<double>> per_class;  // pooled over the dataset
  double mean_iou = 0.0;                         // pooled, headline
  double mean_iou_per_scan = 0.0;                // average of per-scan means
  std::vector<ScanScore> per_scan;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

EvalReport evaluate(const std::vector<Example>& examples, const NetworkState& state,
                    const ForwardOptions& options = {});
/// Pooled IoU of externally produced predictions.
EvalReport evaluate_predictions(const std::vector<std::vector<ClassId>>& predictions,
                                const std::vector<std::vector<ClassId>>& labels,
                                const std::vector<std::string>& ids = {});

struct Segmentation {
  std::vector<ClassId> labels;
  std::vector<double> confidence;  // max softmax probability
};

struct SegmentOptions {
  bool restrict_to_garments = true;
  std::size_t chunk_size = 8192;
};

Segmentation segment(const NetworkInput& input, const NetworkState& state, const SegmentOptions& options = {});
Segmentation segment_logits(const Matrix& logits);

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace closenet
