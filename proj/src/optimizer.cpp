// SPDX-License-Identifier: Apache-2.0
#include "close/optimizer.hpp"

#include <cmath>
#include <numbers>

namespace closenet {

Adam::Adam(const ParamSet& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(zeros_like(params)), v_(zeros_like(params)) {}

void Adam::step(ParamSet& params, const ParamSet& grads, double lr, const std::set<std::string>* layers) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    if (layers && !layers->contains(layer_of(name))) continue;
    const auto g = grads.at(name).values();
    auto m = m_.at(name).values();
    auto v = v_.at(name).values();
    auto w = p.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

double cosine_lr(double base_lr, long step, long total) {
  if (total <= 1) return base_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace closenet
