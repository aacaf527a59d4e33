// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace closenet {

/// Square confusion matrix, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
  void merge(const ConfusionMatrix& other);

  int num_classes() const noexcept { return num_classes_; }
  std::uint64_t at(int gt, int pred) const { return counts_[gt * num_classes_ + pred]; }

  /// Per-class IoU; std::nullopt for classes absent from both sides.
  std::vector<std::optional<double>> per_class_iou() const;

 private:
  int num_classes_;
  std::vector<std::uint64_t> counts_;
};

struct IouResult {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;  // over classes present in gt ∪ pred
};

/// IoU_k = |pred=k ∧ gt=k| / |pred=k ∨ gt=k|, mean over classes present in
/// either vector. Throws ShapeMismatchError on length mismatch and
/// ValidationError for ids ≥ num_classes.
IouResult iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
              int num_classes);

double mean_of_present(const std::vector<std::optional<double>>& per_class);

}  // namespace closenet
