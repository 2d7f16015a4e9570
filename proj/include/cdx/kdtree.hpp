#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "cdx/math.hpp"

namespace cdx {

/// Exact nearest-neighbor queries over a fixed 3D point set. Median-split
/// k-d tree; inputs below a size cutoff use brute force directly.
class KdTree3 {
 public:
  static constexpr size_t kBruteForceCutoff = 256;

  KdTree3() = default;

  explicit KdTree3(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.size() >= kBruteForceCutoff) build();
  }

  size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Vec3>& points() const { return points_; }

  /// Index of the closest point to q (ties broken by lowest index).
  int nearest(const Vec3& q) const {
    if (points_.empty()) return -1;
    if (nodes_.empty()) {  // brute force
      int best = 0;
      double best_d = (points_[0] - q).squaredNorm();
      for (size_t i = 1; i < points_.size(); ++i) {
        const double d = (points_[i] - q).squaredNorm();
        if (d < best_d || (d == best_d && static_cast<int>(i) < best)) {
          best_d = d;
          best = static_cast<int>(i);
        }
      }
      return best;
    }
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    search(0, q, best, best_d);
    return best;
  }

 private:
  struct Node {
    int axis = -1;       // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };

  void build() {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build_node(0, static_cast<int>(points_.size()));
  }

  int build_node(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    if (end - begin <= kLeafSize) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    // split on the widest axis at the median
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                       if (points_[a][axis] != points_[b][axis])
                         return points_[a][axis] < points_[b][axis];
                       return a < b;
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const int l = build_node(begin, mid);
    const int r = build_node(mid, end);
    nodes_[id].left = l;
    nodes_[id].right = r;
    return id;
  }

  void search(int id, const Vec3& q, int& best, double& best_d) const {
    const Node& n = nodes_[id];
    if (n.axis < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int p = order_[i];
        const double d = (points_[p] - q).squaredNorm();
        if (d < best_d || (d == best_d && p < best)) {
          best_d = d;
          best = p;
        }
      }
      return;
    }
    const double delta = q[n.axis] - n.split;
    const int near = delta < 0.0 ? n.left : n.right;
    const int far = delta < 0.0 ? n.right : n.left;
    search(near, q, best, best_d);
    if (delta * delta <= best_d) search(far, q, best, best_d);
  }

  static constexpr int kLeafSize = 16;

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

}  // namespace cdx
