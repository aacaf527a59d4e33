// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <string>

#include "close/network.hpp"

namespace closenet {

/// Adam with bias correction. Moments exist for every parameter; a step may
/// be limited to a set of layers, leaving the others untouched bit for bit.
class Adam {
 public:
  explicit Adam(const ParamSet& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void step(ParamSet& params, const ParamSet& grads, double lr, const std::set<std::string>* layers = nullptr);
  long steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  ParamSet m_, v_;
};

/// Cosine decay from base_lr at step 0 towards 0 at `total` steps.
double cosine_lr(double base_lr, long step, long total);

}  // namespace closenet
