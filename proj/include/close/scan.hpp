// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "close/body_params.hpp"
#include "close/matrix.hpp"
#include "close/taxonomy.hpp"

namespace closenet {

/// One colored point cloud with optional annotations.
///
/// points, colors and normals are n×3. Colors live in [0,1] in memory and are
/// stored as bytes on disk. Labels are zero-based in memory.
struct ScanSample {
  std::string id;
  Matrix points;
  Matrix colors;
  Matrix normals;
  std::optional<std::vector<ClassId>> labels;
  std::optional<BodyParams> body;
  std::optional<GarmentVector> garments;

  std::size_t size() const noexcept { return points.rows(); }

  /// Checks finiteness, unit normals (1e-4), color range, label ids and that
  /// every label is declared in the garment vector.
  void validate() const;
};

struct NormalizationRecord {
  std::array<double, 3> translation{};  // subtracted from positions

  /// Maps a normalized position back to the original frame.
  std::array<double, 3> restore(std::array<double, 3> p) const {
    return {p[0] + translation[0], p[1] + translation[1], p[2] + translation[2]};
  }
};

/// Centers positions on their centroid. The body translation moves with the
/// points so the fitted body stays aligned; colors and normals are untouched.
std::pair<ScanSample, NormalizationRecord> normalize(const ScanSample& scan);

/// Loads a PLY point cloud and, optionally, its metadata document
/// ({"schema":1,"id","labels","garments","body"}). Missing colors default to
/// 0.5 gray; missing normals are estimated from 12-NN planes and oriented away
/// from the centroid.
ScanSample load_scan(const std::filesystem::path& ply_path,
                     const std::optional<std::filesystem::path>& meta_path = std::nullopt);

/// Writes <stem>.ply (binary little endian) and, when any annotation is set,
/// the metadata JSON next to it. Returns the metadata path if one was written.
std::optional<std::filesystem::path> save_scan(const ScanSample& scan,
                                               const std::filesystem::path& ply_path,
                                               bool ascii = false);

/// Metadata document I/O (schema 1). Labels are written 1-based.
void read_scan_metadata(const std::filesystem::path& path, ScanSample& scan);
void write_scan_metadata(const ScanSample& scan, const std::filesystem::path& path);
std::vector<ClassId> read_label_file(const std::filesystem::path& path);
void write_label_file(const std::filesystem::path& path, const std::string& id,
                      std::span<const ClassId> labels,
                      std::span<const double> confidence = {});

/// Unit normals from local PCA planes over the k nearest neighbours.
Matrix estimate_normals(const Matrix& points, int k = 12);

}  // namespace closenet
