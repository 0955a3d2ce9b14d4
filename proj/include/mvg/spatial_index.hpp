#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mvg/core.hpp"

namespace mvg {

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

/// Static 3-D k-d tree over a point set. Queries are exact; equal distances are
/// ordered by point index so results never depend on tree layout.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::vector<Vec3> points);

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// The k nearest points to q, sorted by (distance, index). When `exclude`
  /// is a valid index that point is skipped (self-queries).
  std::vector<Neighbor> knn(const Vec3& q, std::size_t k,
                            std::size_t exclude = static_cast<std::size_t>(-1)) const;

  /// All points within `radius` of q, sorted by index.
  std::vector<std::size_t> radius_search(const Vec3& q, double radius) const;

 private:
  struct Node {
    std::size_t begin, end;  // range into order_
    int axis;                // -1 for leaves
    double split;
    int left, right;
  };

  int build(std::size_t begin, std::size_t end);

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

/// Mean distance from each point to its k nearest neighbours (self excluded).
std::vector<double> mean_knn_distance(std::span<const Vec3> points, std::size_t k);

}  // namespace mvg
