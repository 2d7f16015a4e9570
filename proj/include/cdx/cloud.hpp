#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdx/math.hpp"
#include "cdx/rng.hpp"

namespace cdx {

// Fixed segment sizes of the assembled student cloud.
inline constexpr int kObservedPoints = 3584;
inline constexpr int kGroundPoints = 512;
inline constexpr int kRobotPoints = 1024;
inline constexpr int kStudentCloudPoints =
    kObservedPoints + kGroundPoints + kRobotPoints;  // 5120

/// N x 4 point cloud; channels (x, y, z, mask), mask in {0, 1}.
/// Mask semantics depend on the segment: target indicator for observed
/// points, synthetic flag for ground/robot points.
struct MaskedPointCloud {
  using Storage =
      Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor>;
  Storage pts;

  MaskedPointCloud() : pts(0, 4) {}
  explicit MaskedPointCloud(int n) : pts(Storage::Zero(n, 4)) {}

  int size() const { return static_cast<int>(pts.rows()); }

  Vec3 point(int i) const { return pts.block<1, 3>(i, 0).transpose(); }
  double mask(int i) const { return pts(i, 3); }

  void set(int i, const Vec3& p, double m) {
    pts(i, 0) = p.x();
    pts(i, 1) = p.y();
    pts(i, 2) = p.z();
    pts(i, 3) = m;
  }

  bool masks_binary() const {
    for (int i = 0; i < size(); ++i) {
      const double m = pts(i, 3);
      if (m != 0.0 && m != 1.0) return false;
    }
    return true;
  }
};

struct Aabb {
  Vec3 min{0, 0, 0};
  Vec3 max{0, 0, 0};

  bool valid() const {
    return min.x() < max.x() && min.y() < max.y() && min.z() < max.z();
  }
  bool contains(const Vec3& p) const {
    return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() &&
           p.y() <= max.y() && p.z() >= min.z() && p.z() <= max.z();
  }
};

/// Keeps exactly the points inside the closed box; masks preserved.
inline MaskedPointCloud crop_cloud(const MaskedPointCloud& cloud,
                                   const Aabb& box) {
  if (!box.valid()) throw std::invalid_argument("crop box min must be < max");
  std::vector<int> keep;
  keep.reserve(cloud.size());
  for (int i = 0; i < cloud.size(); ++i)
    if (box.contains(cloud.point(i))) keep.push_back(i);
  MaskedPointCloud out(static_cast<int>(keep.size()));
  for (size_t r = 0; r < keep.size(); ++r) out.pts.row(static_cast<int>(r)) = cloud.pts.row(keep[r]);
  return out;
}

enum class DownsampleMethod { Random, FarthestPoint };

/// Exactly n output points. Inputs smaller than n are padded by resampling
/// with replacement; otherwise a subset is selected (uniform without
/// replacement, or farthest-point). Deterministic given seed.
inline MaskedPointCloud downsample(const MaskedPointCloud& cloud, int n,
                                   DownsampleMethod method, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("downsample size must be >= 1");
  Rng rng(seed);
  const int in_n = cloud.size();
  MaskedPointCloud out(n);
  if (in_n == 0) return out;  // all-zero padding for an empty input

  if (in_n <= n) {
    for (int i = 0; i < in_n; ++i) out.pts.row(i) = cloud.pts.row(i);
    for (int i = in_n; i < n; ++i)
      out.pts.row(i) = cloud.pts.row(static_cast<int>(rng.uniform_index(in_n)));
    return out;
  }

  if (method == DownsampleMethod::Random) {
    std::vector<int> idx(in_n);
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates: first n entries are a uniform sample
    for (int i = 0; i < n; ++i) {
      const int j = i + static_cast<int>(rng.uniform_index(in_n - i));
      std::swap(idx[i], idx[j]);
    }
    for (int i = 0; i < n; ++i) out.pts.row(i) = cloud.pts.row(idx[i]);
    return out;
  }

  // farthest-point sampling, seeded from a random start
  std::vector<double> dist(in_n, std::numeric_limits<double>::infinity());
  int cur = static_cast<int>(rng.uniform_index(in_n));
  for (int i = 0; i < n; ++i) {
    out.pts.row(i) = cloud.pts.row(cur);
    const Vec3 c = cloud.point(cur);
    int far = 0;
    double far_d = -1.0;
    for (int j = 0; j < in_n; ++j) {
      const double d = (cloud.point(j) - c).squaredNorm();
      if (d < dist[j]) dist[j] = d;
      if (dist[j] > far_d) {
        far_d = dist[j];
        far = j;
      }
    }
    cur = far;
  }
  return out;
}

/// Rotates and translates points; masks unchanged.
inline MaskedPointCloud transform_cloud(const MaskedPointCloud& cloud,
                                        const RigidTransform& xf) {
  MaskedPointCloud out(cloud.size());
  for (int i = 0; i < cloud.size(); ++i)
    out.set(i, xf.apply(cloud.point(i)), cloud.mask(i));
  return out;
}

/// n points uniform on the z=0 rectangle [min, max]^2; mask = synthetic flag.
inline MaskedPointCloud synth_ground_cloud(const Eigen::Vector2d& min,
                                           const Eigen::Vector2d& max, int n,
                                           uint64_t seed) {
  Rng rng(seed);
  MaskedPointCloud out(n);
  for (int i = 0; i < n; ++i) {
    out.set(i,
            {rng.uniform(min.x(), max.x()), rng.uniform(min.y(), max.y()), 0.0},
            1.0);
  }
  return out;
}

/// Fixed-order concatenation (observed, ground, robot) -> 5120 x 4.
inline MaskedPointCloud assemble_student_cloud(const MaskedPointCloud& observed,
                                               const MaskedPointCloud& ground,
                                               const MaskedPointCloud& robot) {
  if (observed.size() != kObservedPoints || ground.size() != kGroundPoints ||
      robot.size() != kRobotPoints)
    throw std::invalid_argument("student cloud segment sizes must be 3584/512/1024");
  MaskedPointCloud out(kStudentCloudPoints);
  out.pts.topRows(kObservedPoints) = observed.pts;
  out.pts.middleRows(kObservedPoints, kGroundPoints) = ground.pts;
  out.pts.bottomRows(kRobotPoints) = robot.pts;
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: little-endian f32 flat binary, 8-byte header (magic "MPC1",
// u32 point count), rows x,y,z,mask.
// ---------------------------------------------------------------------------

inline void save_cloud(const MaskedPointCloud& cloud, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write("MPC1", 4);
  const uint32_t n = static_cast<uint32_t>(cloud.size());
  f.write(reinterpret_cast<const char*>(&n), 4);
  std::vector<float> buf(cloud.size() * 4);
  for (int i = 0; i < cloud.size(); ++i)
    for (int c = 0; c < 4; ++c) buf[i * 4 + c] = static_cast<float>(cloud.pts(i, c));
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

inline MaskedPointCloud load_cloud(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "MPC1", 4) != 0)
    throw std::runtime_error("bad point cloud magic in " + path);
  uint32_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 4);
  std::vector<float> buf(static_cast<size_t>(n) * 4);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("truncated point cloud file " + path);
  MaskedPointCloud out(static_cast<int>(n));
  for (uint32_t i = 0; i < n; ++i)
    for (int c = 0; c < 4; ++c) out.pts(i, c) = buf[i * 4 + c];
  return out;
}

}  // namespace cdx
