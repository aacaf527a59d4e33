// SPDX-License-Identifier: Apache-2.0
#include "close/knn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "close/error.hpp"

namespace closenet {
namespace {

using Candidate = std::pair<double, std::uint32_t>;  // (squared distance, index)

std::size_t effective_k(std::size_t n, int k) {
  if (n < 2) throw ValidationError("k-NN graph needs at least 2 points, got " + std::to_string(n));
  if (k < 1) throw ValidationError("k must be at least 1");
  return std::min<std::size_t>(static_cast<std::size_t>(k), n - 1);
}

// Eight interleaved partial sums folded in lane order. For three-wide rows
// this rounds exactly like dx² + dy² + dz², the order PointGrid uses.
double row_distance(const double* a, const double* b, std::size_t width) {
  double lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t c = 0;
  for (; c + 8 <= width; c += 8) {
    for (std::size_t l = 0; l < 8; ++l) {
      const double d = a[c + l] - b[c + l];
      lane[l] += d * d;
    }
  }
  for (std::size_t l = 0; c < width; ++c, ++l) {
    const double d = a[c] - b[c];
    lane[l] += d * d;
  }
  double s = lane[0];
  for (std::size_t l = 1; l < 8; ++l) s += lane[l];
  return s;
}

// Bounded max-heap keeping the k smallest (distance, index) pairs.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

  void offer(double d, std::uint32_t idx) {
    const Candidate c{d, idx};
    if (heap_.size() < k_) {
      heap_.push_back(c);
      std::push_heap(heap_.begin(), heap_.end());
    } else if (c < heap_.front()) {
      std::pop_heap(heap_.begin(), heap_.end());
      heap_.back() = c;
      std::push_heap(heap_.begin(), heap_.end());
    }
  }
  bool full() const { return heap_.size() == k_; }
  double worst() const { return heap_.front().first; }
  std::vector<Candidate> sorted() const {
    auto out = heap_;
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::size_t k_;
  std::vector<Candidate> heap_;
};

}  // namespace

KnnGraph build_knn_graph_exhaustive(const Matrix& features, int k) {
  const std::size_t n = features.rows();
  const std::size_t kk = effective_k(n, k);
  const std::size_t width = features.cols();
  KnnGraph graph{n, kk, std::vector<std::uint32_t>(n * kk)};
  std::vector<Candidate> candidates(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double* fi = features.row(i).data();
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      candidates[m++] = {row_distance(fi, features.row(j).data(), width),
                         static_cast<std::uint32_t>(j)};
    }
    std::partial_sort(candidates.begin(), candidates.begin() + kk, candidates.end());
    for (std::size_t s = 0; s < kk; ++s) graph.neighbors[i * kk + s] = candidates[s].second;
  }
  return graph;
}

KnnGraph build_knn_graph(const Matrix& features, int k) {
  const std::size_t n = features.rows();
  if (features.cols() != 3 || n < 256) return build_knn_graph_exhaustive(features, k);
  const std::size_t kk = effective_k(n, k);
  const PointGrid grid(features, std::max(4.0, static_cast<double>(kk) / 2.0));
  KnnGraph graph{n, kk, std::vector<std::uint32_t>(n * kk)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = features.row(i);
    const auto nn = grid.k_nearest({row[0], row[1], row[2]}, kk, static_cast<std::int64_t>(i));
    std::copy(nn.begin(), nn.end(), graph.neighbors.begin() + i * kk);
  }
  return graph;
}

PointGrid::PointGrid(const Matrix& points, double target_per_cell) : points_(&points) {
  if (points.cols() != 3) throw ShapeMismatchError("PointGrid expects n×3 points");
  const std::size_t n = points.rows();
  if (n == 0) throw ValidationError("PointGrid needs at least one point");
  std::array<double, 3> lo{}, hi{};
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], points(i, a));
      hi[a] = std::max(hi[a], points(i, a));
    }
  }
  double largest = 0.0;
  for (int a = 0; a < 3; ++a) largest = std::max(largest, hi[a] - lo[a]);
  if (largest <= 0.0) largest = 1.0;
  double volume = 1.0;
  for (int a = 0; a < 3; ++a) volume *= std::max(hi[a] - lo[a], largest * 1e-3);
  cell_ = std::cbrt(volume * target_per_cell / static_cast<double>(n));
  const auto dims_for = [&](double cell) {
    std::array<std::int64_t, 3> d{};
    for (int a = 0; a < 3; ++a) d[a] = static_cast<std::int64_t>((hi[a] - lo[a]) / cell) + 1;
    return d;
  };
  dims_ = dims_for(cell_);
  const auto cells = [&] { return dims_[0] * dims_[1] * dims_[2]; };
  while (static_cast<std::size_t>(cells()) > 4 * n + 64) {
    cell_ *= 1.5;
    dims_ = dims_for(cell_);
  }
  origin_ = lo;

  cell_start_.assign(static_cast<std::size_t>(cells()) + 1, 0);
  std::vector<std::size_t> cell_index(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of({points(i, 0), points(i, 1), points(i, 2)});
    cell_index[i] = static_cast<std::size_t>((c[0] * dims_[1] + c[1]) * dims_[2] + c[2]);
    ++cell_start_[cell_index[i] + 1];
  }
  for (std::size_t c = 1; c < cell_start_.size(); ++c) cell_start_[c] += cell_start_[c - 1];
  cell_items_.resize(n);
  std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < n; ++i) cell_items_[fill[cell_index[i]]++] = static_cast<std::uint32_t>(i);
}

std::array<std::int64_t, 3> PointGrid::cell_of(std::array<double, 3> p) const {
  std::array<std::int64_t, 3> c{};
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor((p[a] - origin_[a]) / cell_);
    c[a] = std::clamp<std::int64_t>(std::isfinite(f) ? static_cast<std::int64_t>(
                                                           std::clamp(f, -1e9, 1e9))
                                                     : 0,
                                    0, dims_[a] - 1);
  }
  return c;
}

template <typename Visit>
void PointGrid::visit_shell(std::array<std::int64_t, 3> center, std::int64_t radius,
                            Visit&& visit) const {
  const auto lo = [&](int a) { return std::max<std::int64_t>(0, center[a] - radius); };
  const auto hi = [&](int a) { return std::min<std::int64_t>(dims_[a] - 1, center[a] + radius); };
  for (std::int64_t x = lo(0); x <= hi(0); ++x) {
    for (std::int64_t y = lo(1); y <= hi(1); ++y) {
      for (std::int64_t z = lo(2); z <= hi(2); ++z) {
        const std::int64_t cheb = std::max({std::abs(x - center[0]), std::abs(y - center[1]),
                                            std::abs(z - center[2])});
        if (cheb != radius) continue;
        const std::size_t c = static_cast<std::size_t>((x * dims_[1] + y) * dims_[2] + z);
        for (std::uint32_t s = cell_start_[c]; s < cell_start_[c + 1]; ++s) visit(cell_items_[s]);
      }
    }
  }
}

// Squared lower bound on the distance from q to any cell outside the cube of
// Chebyshev radius `radius` around `center`; +inf when no such cell exists.
double PointGrid::shell_lower_bound(std::array<double, 3> q, std::array<std::int64_t, 3> center,
                                    std::int64_t radius) const {
  double bound = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (center[a] - radius - 1 >= 0) {
      const double plane = origin_[a] + static_cast<double>(center[a] - radius) * cell_;
      bound = std::min(bound, std::max(0.0, q[a] - plane));
    }
    if (center[a] + radius + 1 < dims_[a]) {
      const double plane = origin_[a] + static_cast<double>(center[a] + radius + 1) * cell_;
      bound = std::min(bound, std::max(0.0, plane - q[a]));
    }
  }
  return std::isinf(bound) ? bound : bound * bound;
}

std::uint32_t PointGrid::nearest(std::array<double, 3> query) const {
  return k_nearest(query, 1).front();
}

std::vector<std::uint32_t> PointGrid::k_nearest(std::array<double, 3> query, std::size_t k,
                                                std::int64_t exclude) const {
  const std::size_t available = size() - (exclude >= 0 ? 1 : 0);
  k = std::min(k, available);
  if (k == 0) return {};
  TopK top(k);
  const auto center = cell_of(query);
  const std::int64_t max_radius = std::max({dims_[0], dims_[1], dims_[2]});
  for (std::int64_t r = 0; r <= max_radius; ++r) {
    visit_shell(center, r, [&](std::uint32_t idx) {
      if (static_cast<std::int64_t>(idx) == exclude) return;
      top.offer(squared_distance3(query, points_->row(idx)), idx);
    });
    const double bound = shell_lower_bound(query, center, r);
    if (std::isinf(bound)) break;
    // Strict: an unvisited point at exactly the current worst distance may
    // still win on index.
    if (top.full() && top.worst() < bound) break;
  }
  const auto sorted = top.sorted();
  std::vector<std::uint32_t> out(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) out[i] = sorted[i].second;
  return out;
}

}  // namespace closenet
