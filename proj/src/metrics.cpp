// SPDX-License-Identifier: Apache-2.0
#include "close/metrics.hpp"

#include <string>

#include "close/error.hpp"

namespace closenet {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes <= 0) throw ValidationError("confusion matrix needs a positive class count");
}

void ConfusionMatrix::add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw ShapeMismatchError("prediction length " + std::to_string(pred.size()) +
                             " != ground-truth length " + std::to_string(gt.size()));
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_classes_ || gt[i] >= num_classes_) {
      throw ValidationError("class id out of range at index " + std::to_string(i));
    }
  }
  for (std::size_t i = 0; i < pred.size(); ++i) ++counts_[gt[i] * num_classes_ + pred[i]];
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.num_classes_ != num_classes_) throw ShapeMismatchError("class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::vector<std::optional<double>> ConfusionMatrix::per_class_iou() const {
  std::vector<std::optional<double>> out(num_classes_);
  for (int k = 0; k < num_classes_; ++k) {
    std::uint64_t gt_total = 0, pred_total = 0;
    for (int j = 0; j < num_classes_; ++j) {
      gt_total += at(k, j);
      pred_total += at(j, k);
    }
    const std::uint64_t inter = at(k, k);
    const std::uint64_t uni = gt_total + pred_total - inter;
    if (uni > 0) out[k] = static_cast<double>(inter) / static_cast<double>(uni);
  }
  return out;
}

double mean_of_present(const std::vector<std::optional<double>>& per_class) {
  double sum = 0.0;
  int count = 0;
  for (const auto& v : per_class) {
    if (v) {
      sum += *v;
      ++count;
    }
  }
  return count > 0 ? sum / count : 0.0;
}

IouResult iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
              int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  IouResult result;
  result.per_class = cm.per_class_iou();
  result.mean = mean_of_present(result.per_class);
  return result;
}

}  // namespace closenet
