// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "close/network.hpp"
#include "close/training.hpp"

namespace closenet {

struct RefineLambdas {
  double corrected = 0.1;  // λc, CE on user-corrected points
  double stable = 1.0;     // λf, CE on the remaining points against reference predictions
  double anchor = 1.0;     // λw, squared distance to the reference weights

  friend bool operator==(const RefineLambdas&, const RefineLambdas&) = default;
};

/// "naive" {1,0,0}, "weighted_ce" {0.1,1,0}, "full" {0.1,1,1}.
RefineLambdas lambda_preset(std::string_view name);

struct RefineConfig {
  RefineLambdas lambdas;
  std::set<std::string> layers;  // empty: last decoder layer + global_mlp
  int epochs = 2;
  int steps_per_epoch = 10;       // full-scan gradient steps per epoch
  double learning_rate = 1e-4;
  /// Require λc < λf. Presets that violate it switch this off.
  bool enforce_lambda_order = true;
  ForwardOptions forward;

  /// Throws ValidationError on bad settings; returns advisory warnings.
  std::vector<std::string> validate() const;
};

/// Corrected set C and its complement F over one scan.
struct CorrectionSplit {
  std::vector<std::uint32_t> corrected;
  std::vector<std::uint32_t> stable;

  static CorrectionSplit from(std::span<const std::uint32_t> corrected, std::size_t num_points);
};

struct RefineLossValue {
  double total = 0.0;
  double corrected_ce = 0.0;
  double stable_ce = 0.0;
  double anchor = 0.0;
  Matrix dlogits;
};

/// λc·CE_C(user) + λf·CE_F(reference predictions) over the logits; each CE is
/// a mean over its set. The anchor term is left to anchor_penalty().
RefineLossValue refine_loss(const Matrix& logits, std::span<const ClassId> user_labels,
                            std::span<const ClassId> reference_labels, const CorrectionSplit& split,
                            const RefineLambdas& lambdas);

/// λw·Σ‖θ'−θ‖² over the parameters of `layers`; adds its gradient to `grads`
/// when given.
double anchor_penalty(const NetworkState& working, const NetworkState& reference,
                      const std::set<std::string>& layers, double weight, ParamSet* grads = nullptr);

struct RefineReport {
  double target_iou_before = 0.0;
  double target_iou_after = 0.0;
  std::optional<double> suite_miou_before;
  std::optional<double> suite_miou_after;
  int epochs = 0;
  RefineLambdas lambdas;
  std::vector<std::string> trainable_layers;
  bool no_op = false;
  double weight_delta = 0.0;  // L2 norm of the parameter change
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

struct RefineResult {
  NetworkState state;
  RefineReport report;
};

/// Fine-tunes `current` on one scan. `user_labels` holds the corrected labels
/// on `corrected` (other entries are ignored); `eval_labels`, when given, is
/// the truth used for the target IoU in the report, otherwise user_labels.
/// The anchor pulls towards `reference`. `suite` adds regression numbers.
RefineResult refine(const NetworkState& current, const NetworkState& reference, const NetworkInput& scan,
                    std::span<const ClassId> user_labels, std::span<const std::uint32_t> corrected,
                    const RefineConfig& config, std::span<const ClassId> eval_labels = {},
                    const std::vector<Example>* suite = nullptr);

/// Labeled scans whose mIoU must not regress beyond a budget.
struct FrozenSuite {
  std::vector<Example> examples;
  double baseline_miou = 0.0;

  static FrozenSuite build(std::vector<Example> examples, const NetworkState& state);
};

struct GuardResult {
  bool pass = true;
  double before = 0.0;
  double after = 0.0;
  double delta = 0.0;  // after - before
};

/// Fails when the suite mIoU drops by more than `budget` (IoU fraction;
/// 0.015 = 1.5 points).
GuardResult regression_guard(const NetworkState& state, const FrozenSuite& suite, double budget = 0.015);

}  // namespace closenet
