// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "close/matrix.hpp"

namespace closenet {

/// Directed k-NN graph: row i lists the k neighbours of point i, nearest first.
/// Never contains self loops.
struct KnnGraph {
  std::size_t num_points = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> neighbors;  // num_points × k

  std::span<const std::uint32_t> of(std::size_t i) const {
    return {neighbors.data() + i * k, k};
  }
};

/// Exact Euclidean k-NN over the rows of `features` (any width). Ties are
/// broken by the lower index and k is clipped to n-1. Three-wide inputs use a
/// uniform grid; wider inputs use an exhaustive scan.
KnnGraph build_knn_graph(const Matrix& features, int k);

/// Exhaustive variant, always O(n²·d). Kept public for verification.
KnnGraph build_knn_graph_exhaustive(const Matrix& features, int k);

/// Uniform-grid index over 3D points answering exact nearest and k-nearest
/// queries. Distances are squared Euclidean computed exactly as in the
/// exhaustive scan, and ties go to the lower index, so results are identical.
class PointGrid {
 public:
  explicit PointGrid(const Matrix& points, double target_per_cell = 4.0);

  /// Index of the nearest indexed point to `query`.
  std::uint32_t nearest(std::array<double, 3> query) const;
  /// k nearest indexed points (ascending by (distance, index)), skipping `exclude`.
  std::vector<std::uint32_t> k_nearest(std::array<double, 3> query, std::size_t k,
                                       std::int64_t exclude = -1) const;

  std::size_t size() const noexcept { return points_->rows(); }

 private:
  std::array<std::int64_t, 3> cell_of(std::array<double, 3> p) const;
  template <typename Visit>
  void visit_shell(std::array<std::int64_t, 3> center, std::int64_t radius, Visit&& visit) const;
  double shell_lower_bound(std::array<double, 3> q, std::array<std::int64_t, 3> center,
                           std::int64_t radius) const;

  const Matrix* points_;
  std::array<double, 3> origin_{};
  double cell_ = 1.0;
  std::array<std::int64_t, 3> dims_{};
  std::vector<std::uint32_t> cell_start_;
  std::vector<std::uint32_t> cell_items_;
};

inline double squared_distance3(std::array<double, 3> a, std::span<const double> b) {
  const double dx = a[0] - b[0];
  const double dy = a[1] - b[1];
  const double dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace closenet
