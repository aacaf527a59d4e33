// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "close/body_params.hpp"
#include "close/matrix.hpp"
#include "close/scan.hpp"

namespace closenet {

/// Skinned template body: enough structure to pose by linear blend skinning.
///
/// Shape deformation is linear: shaped = template + Σ_b shape[b]·shape_dirs[b],
/// with joints offset by the matching joint_shape_dirs.
struct BodyModel {
  Matrix template_vertices;             // V×3, rest pose
  Matrix joints;                        // J×3, rest pose
  std::vector<int> parents;             // J, parents[0] == -1
  Matrix skin_weights;                  // V×J, rows sum to 1
  std::vector<Matrix> shape_dirs;       // B × (V×3)
  std::vector<Matrix> joint_shape_dirs; // B × (J×3)
  std::map<std::string, std::vector<std::uint32_t>> regions;  // named vertex groups

  std::size_t num_vertices() const noexcept { return template_vertices.rows(); }
  std::size_t num_joints() const noexcept { return joints.rows(); }
  std::size_t num_shape() const noexcept { return shape_dirs.size(); }

  /// Region name of every vertex ("" when a vertex belongs to no group).
  std::vector<std::string> vertex_regions() const;

  void validate() const;
  /// Hash of all model arrays; distinguishes cache entries across models.
  std::uint64_t hash() const;
};

/// Neutral container (JSON, schema 1). A converted SMPL export in this layout
/// loads the same way as the bundled toy model.
BodyModel load_body_model(const std::filesystem::path& path);
void save_body_model(const BodyModel& model, const std::filesystem::path& path);

/// Bundled 64-vertex, 16-joint toy humanoid (T-pose, y up, metres).
const BodyModel& toy_body_model();

/// Posed vertices (V×3) including the root translation.
Matrix pose_body(const BodyModel& model, const BodyParams& params);

/// Per-joint 3×4 skinning transforms [R | t] (row-major, 12 values each)
/// mapping shaped rest-pose coordinates to posed coordinates, translation included.
std::vector<std::array<double, 12>> joint_transforms(const BodyModel& model,
                                                     const BodyParams& params);
/// Shaped rest-pose vertices and joints (no pose applied).
std::pair<Matrix, Matrix> shaped_rest(const BodyModel& model, const BodyParams& params);

/// Canonical body feature: row i is the template position of the posed vertex
/// nearest to scan point i. `vertex` keeps the selected indices.
struct BodyFeatureField {
  Matrix coords;                       // n×3
  std::vector<std::uint32_t> vertex;   // n
};

/// Nearest posed vertex per point (exact, ties to the lower index).
/// The scan must live in the body's frame (see BodyParams::translation).
BodyFeatureField encode_body(const ScanSample& scan, const BodyModel& model);
BodyFeatureField encode_body(const Matrix& points, const BodyModel& model,
                             const BodyParams& params);

/// Part-feature ("hybrid") body encoding. Not provided; always throws.
BodyFeatureField encode_body_hybrid(const ScanSample& scan, const BodyModel& model);

/// Memoizes encode_body results keyed by scan id and body-parameter hash,
/// optionally persisting them as <scan-id>.<params-hash>.bodyfeat files.
class BodyFeatureCache {
 public:
  explicit BodyFeatureCache(std::optional<std::filesystem::path> directory = std::nullopt);

  std::shared_ptr<const BodyFeatureField> get(const ScanSample& scan, const BodyModel& model);
  std::size_t size() const;

  static std::string file_name(const std::string& scan_id, std::uint64_t key_hash);

 private:
  std::optional<std::filesystem::path> directory_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const BodyFeatureField>> entries_;
};

}  // namespace closenet
