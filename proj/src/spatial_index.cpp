#include "mvg/spatial_index.hpp"

#include <algorithm>
#include <numeric>
#include <queue>

#include "mvg/parallel.hpp"

namespace mvg {

namespace {
constexpr std::size_t kLeafSize = 12;

bool closer(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
}
}  // namespace

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, points_.size());
  }
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, 0.0, -1, -1});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = points_[order_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] - lo[axis] <= 0.0) return id;  // all coincident

  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::size_t a, std::size_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

std::vector<Neighbor> KdTree::knn(const Vec3& q, std::size_t k, std::size_t exclude) const {
  std::vector<Neighbor> best;  // max-heap on (distance, index)
  if (k == 0 || nodes_.empty()) return best;
  auto cmp = [](const Neighbor& a, const Neighbor& b) { return closer(a, b); };

  auto visit = [&](auto&& self, int id) -> void {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (idx == exclude) continue;
        const Neighbor cand{idx, (points_[idx] - q).norm()};
        if (best.size() < k) {
          best.push_back(cand);
          std::push_heap(best.begin(), best.end(), cmp);
        } else if (closer(cand, best.front())) {
          std::pop_heap(best.begin(), best.end(), cmp);
          best.back() = cand;
          std::push_heap(best.begin(), best.end(), cmp);
        }
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    const int near = diff < 0.0 ? n.left : n.right;
    const int far = diff < 0.0 ? n.right : n.left;
    self(self, near);
    // Ties at equal distance may sit on either side, hence <=.
    if (best.size() < k || std::abs(diff) <= best.front().distance) self(self, far);
  };
  visit(visit, 0);
  std::sort(best.begin(), best.end(), closer);
  return best;
}

std::vector<std::size_t> KdTree::radius_search(const Vec3& q, double radius) const {
  std::vector<std::size_t> out;
  if (nodes_.empty()) return out;
  const double r2 = radius * radius;
  auto visit = [&](auto&& self, int id) -> void {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
      }
      return;
    }
    const double diff = q[n.axis] - n.split;
    if (diff - radius <= 0.0) self(self, n.left);
    if (diff + radius >= 0.0) self(self, n.right);
  };
  visit(visit, 0);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> mean_knn_distance(std::span<const Vec3> points, std::size_t k) {
  KdTree tree(std::vector<Vec3>(points.begin(), points.end()));
  std::vector<double> out(points.size(), 0.0);
  parallel_for(points.size(), [&](std::size_t i) {
    const auto nn = tree.knn(points[i], k, i);
    double sum = 0.0;
    for (const auto& n : nn) sum += n.distance;
    out[i] = nn.empty() ? 0.0 : sum / static_cast<double>(nn.size());
  });
  return out;
}

}  // namespace mvg
