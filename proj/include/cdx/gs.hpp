#pragma once

#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cdx/kdtree.hpp"
#include "cdx/math.hpp"
#include "cdx/shape.hpp"

namespace cdx {

struct Displacement {
  Vec3 offset;      // nearest_point - query
  double distance;  // |offset|
};

/// Exact nearest neighbor for each query against the target set.
/// Throws if `targets` is empty; callers zero-pad that case themselves.
inline std::vector<Displacement> nearest_displacement(
    const std::vector<Vec3>& queries, const std::vector<Vec3>& targets) {
  if (targets.empty())
    throw std::invalid_argument("nearest_displacement: no target points");
  KdTree3 tree(targets);
  std::vector<Displacement> out;
  out.reserve(queries.size());
  for (const Vec3& q : queries) {
    const Vec3& t = tree.points()[tree.nearest(q)];
    out.push_back({t - q, (t - q).norm()});
  }
  return out;
}

inline std::vector<Displacement> nearest_displacement(
    const std::vector<Vec3>& queries, const KdTree3& tree) {
  if (tree.empty())
    throw std::invalid_argument("nearest_displacement: no target points");
  std::vector<Displacement> out;
  out.reserve(queries.size());
  for (const Vec3& q : queries) {
    const Vec3& t = tree.points()[tree.nearest(q)];
    out.push_back({t - q, (t - q).norm()});
  }
  return out;
}

/// Per-keypoint displacement vectors to the nearest target surface point
/// (d_pos) and nearest non-target surface point (d_neg), plus the running
/// episode minimum of min_k |d_neg_k|.
struct GsRepresentation {
  std::vector<Vec3> d_pos;
  std::vector<Vec3> d_neg;
  double d_neg_min_abs = std::numeric_limits<double>::infinity();

  int keypoints() const { return static_cast<int>(d_pos.size()); }

  double d_pos_min() const {
    double m = std::numeric_limits<double>::infinity();
    for (const Vec3& d : d_pos) m = std::min(m, d.norm());
    return m;
  }
};

/// Pools the non-target surfaces, queries nearest neighbors for every
/// keypoint, and carries the episode minimum through `prior_min`. With no
/// non-target points, d_neg is zero-padded and prior_min passes through.
inline GsRepresentation compute_gs(
    const std::vector<Vec3>& keypoints, const SampledSurface& target_surface,
    const std::vector<SampledSurface>& nontarget_surfaces, double prior_min) {
  if (target_surface.empty())
    throw std::invalid_argument("compute_gs: target surface is empty");

  GsRepresentation gs;
  gs.d_pos.reserve(keypoints.size());
  gs.d_neg.reserve(keypoints.size());

  for (const auto& d : nearest_displacement(keypoints, target_surface.points))
    gs.d_pos.push_back(d.offset);

  std::vector<Vec3> pooled;
  for (const auto& s : nontarget_surfaces)
    pooled.insert(pooled.end(), s.points.begin(), s.points.end());

  if (pooled.empty()) {
    gs.d_neg.assign(keypoints.size(), Vec3::Zero());
    gs.d_neg_min_abs = prior_min;
    return gs;
  }

  double step_min = std::numeric_limits<double>::infinity();
  for (const auto& d : nearest_displacement(keypoints, pooled)) {
    gs.d_neg.push_back(d.offset);
    step_min = std::min(step_min, d.distance);
  }
  gs.d_neg_min_abs = std::min(prior_min, step_min);
  return gs;
}

}  // namespace cdx
