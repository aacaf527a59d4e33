// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

namespace closenet {

/// Fitted body parameters for one scan: axis-angle rotation per joint (radians,
/// 3 values per joint, root first), shape coefficients and a root translation
/// placing the posed body in the scan's frame.
struct BodyParams {
  std::vector<double> pose;
  std::vector<double> shape;
  std::vector<double> translation = {0.0, 0.0, 0.0};

  /// Throws ValidationError on non-finite values or a translation not of size 3.
  void validate() const;
  /// Stable hash of all three vectors; part of body-feature cache keys.
  std::uint64_t hash() const;

  friend bool operator==(const BodyParams&, const BodyParams&) = default;
};

nlohmann::json to_json(const BodyParams& params);
BodyParams body_params_from_json(const nlohmann::json& j);

}  // namespace closenet
