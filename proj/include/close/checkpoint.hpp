// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include <json.hpp>

#include "close/network.hpp"
#include "close/taxonomy.hpp"

namespace closenet {

/// Checkpoint container:
///   "CLOSECKP" | u32 version | u64 header bytes | JSON header | float64 LE tensors
/// The header stores the network config (including ablation flags), the
/// taxonomy fingerprint, a tensor directory and free-form metadata.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const NetworkState& state, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

/// Throws ValidationError when the file was written for another taxonomy or
/// when tensor shapes disagree with the stored config.
NetworkState load_checkpoint(const std::filesystem::path& path,
                             const LabelTaxonomy& taxonomy = LabelTaxonomy::standard(),
                             nlohmann::json* metadata = nullptr);

/// Refuses a state whose ablation flags differ from the requested ones.
void require_encoders(const NetworkState& state, BodyEncoderMode body, ClothingEncoderMode clothing);

}  // namespace closenet
