// SPDX-License-Identifier: Apache-2.0
#include "close/body_params.hpp"

#include <cmath>

#include "close/error.hpp"
#include "close/hashing.hpp"

namespace closenet {

void BodyParams::validate() const {
  if (translation.size() != 3) throw ValidationError("body translation must have 3 entries");
  for (const auto* v : {&pose, &shape, &translation}) {
    for (double x : *v) {
      if (!std::isfinite(x)) throw ValidationError("body parameters must be finite");
    }
  }
  if (pose.size() % 3 != 0) throw ValidationError("pose must hold 3 axis-angle values per joint");
}

std::uint64_t BodyParams::hash() const {
  Fnv1a h;
  for (const auto* v : {&pose, &shape, &translation}) {
    h.update_value(v->size());
    h.update(std::span<const double>(*v));
  }
  return h.digest();
}

nlohmann::json to_json(const BodyParams& params) {
  return {{"pose", params.pose}, {"shape", params.shape}, {"translation", params.translation}};
}

BodyParams body_params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("body parameters must be a JSON object");
  BodyParams p;
  try {
    if (j.contains("pose")) p.pose = j.at("pose").get<std::vector<double>>();
    if (j.contains("shape")) p.shape = j.at("shape").get<std::vector<double>>();
    if (j.contains("translation")) p.translation = j.at("translation").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("body parameters: ") + e.what());
  }
  p.validate();
  return p;
}

}  // namespace closenet
