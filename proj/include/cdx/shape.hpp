#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "cdx/math.hpp"
#include "cdx/rng.hpp"

namespace cdx {

enum class ShapeKind { Sphere, Box, Cylinder };

/// Convex primitive in its local frame, centered at the origin.
///  - Sphere: dims.x = radius
///  - Box: dims = half extents
///  - Cylinder: dims.x = radius, dims.z = half height, axis along local z
struct Shape {
  ShapeKind kind = ShapeKind::Sphere;
  Vec3 dims{0.05, 0.05, 0.05};

  static Shape sphere(double r) { return {ShapeKind::Sphere, {r, r, r}}; }
  static Shape box(double hx, double hy, double hz) {
    return {ShapeKind::Box, {hx, hy, hz}};
  }
  static Shape cylinder(double r, double half_h) {
    return {ShapeKind::Cylinder, {r, r, half_h}};
  }

  bool valid() const {
    switch (kind) {
      case ShapeKind::Sphere:
        return dims.x() > 0.0;
      case ShapeKind::Box:
        return dims.x() > 0.0 && dims.y() > 0.0 && dims.z() > 0.0;
      case ShapeKind::Cylinder:
        return dims.x() > 0.0 && dims.z() > 0.0;
    }
    return false;
  }

  double surface_area() const {
    switch (kind) {
      case ShapeKind::Sphere:
        return 4.0 * kPi * dims.x() * dims.x();
      case ShapeKind::Box:
        return 8.0 * (dims.x() * dims.y() + dims.y() * dims.z() +
                      dims.z() * dims.x());
      case ShapeKind::Cylinder:
        return 2.0 * kPi * dims.x() * (2.0 * dims.z()) +
               2.0 * kPi * dims.x() * dims.x();
    }
    return 0.0;
  }

  double volume() const {
    switch (kind) {
      case ShapeKind::Sphere:
        return 4.0 / 3.0 * kPi * std::pow(dims.x(), 3);
      case ShapeKind::Box:
        return 8.0 * dims.x() * dims.y() * dims.z();
      case ShapeKind::Cylinder:
        return kPi * dims.x() * dims.x() * 2.0 * dims.z();
    }
    return 0.0;
  }

  /// Radius of the smallest origin-centered bounding sphere.
  double bounding_radius() const {
    switch (kind) {
      case ShapeKind::Sphere:
        return dims.x();
      case ShapeKind::Box:
        return dims.norm();
      case ShapeKind::Cylinder:
        return std::sqrt(dims.x() * dims.x() + dims.z() * dims.z());
    }
    return 0.0;
  }

  /// Signed distance from a local-frame point to the surface (< 0 inside).
  double sdf(const Vec3& p) const {
    switch (kind) {
      case ShapeKind::Sphere:
        return p.norm() - dims.x();
      case ShapeKind::Box: {
        const Vec3 q = p.cwiseAbs() - dims;
        const Vec3 outside = q.cwiseMax(0.0);
        const double inside = std::min(q.maxCoeff(), 0.0);
        return outside.norm() + inside;
      }
      case ShapeKind::Cylinder: {
        const double dr = std::hypot(p.x(), p.y()) - dims.x();
        const double dz = std::abs(p.z()) - dims.z();
        const double ox = std::max(dr, 0.0);
        const double oz = std::max(dz, 0.0);
        return std::hypot(ox, oz) + std::min(std::max(dr, dz), 0.0);
      }
    }
    return 0.0;
  }

  /// Outward unit gradient of the SDF (central differences; exact enough
  /// for contact normals).
  Vec3 sdf_gradient(const Vec3& p, double h = 1e-6) const {
    Vec3 g;
    for (int i = 0; i < 3; ++i) {
      Vec3 a = p, b = p;
      a[i] += h;
      b[i] -= h;
      g[i] = (sdf(a) - sdf(b)) / (2.0 * h);
    }
    const double n = g.norm();
    if (n < 1e-12) return Vec3(0, 0, 1);
    return g / n;
  }

  /// Uniform (area-weighted) point on the surface, local frame.
  Vec3 sample_surface(Rng& rng) const {
    switch (kind) {
      case ShapeKind::Sphere: {
        // uniform direction via z + azimuth
        const double z = rng.uniform(-1.0, 1.0);
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        return dims.x() * Vec3(s * std::cos(phi), s * std::sin(phi), z);
      }
      case ShapeKind::Box: {
        const double ax = dims.y() * dims.z();  // area of +-x faces / 4
        const double ay = dims.z() * dims.x();
        const double az = dims.x() * dims.y();
        const double total = ax + ay + az;
        const double pick = rng.uniform(0.0, total);
        const double sgn = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const double u = rng.uniform(-1.0, 1.0);
        const double v = rng.uniform(-1.0, 1.0);
        if (pick < ax) return {sgn * dims.x(), u * dims.y(), v * dims.z()};
        if (pick < ax + ay) return {u * dims.x(), sgn * dims.y(), v * dims.z()};
        return {u * dims.x(), v * dims.y(), sgn * dims.z()};
      }
      case ShapeKind::Cylinder: {
        const double side = 2.0 * kPi * dims.x() * 2.0 * dims.z();
        const double cap = kPi * dims.x() * dims.x();
        const double pick = rng.uniform(0.0, side + 2.0 * cap);
        const double phi = rng.uniform(0.0, 2.0 * kPi);
        if (pick < side) {
          return {dims.x() * std::cos(phi), dims.x() * std::sin(phi),
                  rng.uniform(-dims.z(), dims.z())};
        }
        const double sgn = pick < side + cap ? 1.0 : -1.0;
        const double r = dims.x() * std::sqrt(rng.uniform());
        return {r * std::cos(phi), r * std::sin(phi), sgn * dims.z()};
      }
    }
    return Vec3::Zero();
  }

  /// Fixed local-frame points used by the penalty contact solver.
  std::vector<Vec3> contact_points() const {
    std::vector<Vec3> pts;
    switch (kind) {
      case ShapeKind::Sphere: {
        // icosahedron vertices scaled to the radius
        const double t = (1.0 + std::sqrt(5.0)) / 2.0;
        const std::array<Vec3, 12> ico = {
            Vec3(-1, t, 0),  Vec3(1, t, 0),  Vec3(-1, -t, 0), Vec3(1, -t, 0),
            Vec3(0, -1, t),  Vec3(0, 1, t),  Vec3(0, -1, -t), Vec3(0, 1, -t),
            Vec3(t, 0, -1),  Vec3(t, 0, 1),  Vec3(-t, 0, -1), Vec3(-t, 0, 1)};
        for (const auto& v : ico) pts.push_back(v.normalized() * dims.x());
        break;
      }
      case ShapeKind::Box: {
        for (int sx : {-1, 1})
          for (int sy : {-1, 1})
            for (int sz : {-1, 1})
              pts.emplace_back(sx * dims.x(), sy * dims.y(), sz * dims.z());
        // edge midpoints
        for (int i = 0; i < 3; ++i) {
          const int j = (i + 1) % 3, k = (i + 2) % 3;
          for (int sj : {-1, 1})
            for (int sk : {-1, 1}) {
              Vec3 p = Vec3::Zero();
              p[j] = sj * dims[j];
              p[k] = sk * dims[k];
              pts.push_back(p);
            }
        }
        // face centers
        for (int i = 0; i < 3; ++i)
          for (int s : {-1, 1}) {
            Vec3 p = Vec3::Zero();
            p[i] = s * dims[i];
            pts.push_back(p);
          }
        break;
      }
      case ShapeKind::Cylinder: {
        const int n = 12;
        for (int s : {-1, 1})
          for (int i = 0; i < n; ++i) {
            const double phi = 2.0 * kPi * i / n;
            pts.emplace_back(dims.x() * std::cos(phi), dims.x() * std::sin(phi),
                             s * dims.z());
          }
        pts.emplace_back(0, 0, dims.z());
        pts.emplace_back(0, 0, -dims.z());
        for (int i = 0; i < 8; ++i) {
          const double phi = 2.0 * kPi * i / 8;
          pts.emplace_back(dims.x() * std::cos(phi), dims.x() * std::sin(phi),
                           0.0);
        }
        break;
      }
    }
    return pts;
  }

  /// Body-frame inertia tensor diagonal for the given mass.
  Vec3 inertia_diagonal(double mass) const {
    switch (kind) {
      case ShapeKind::Sphere: {
        const double i = 0.4 * mass * dims.x() * dims.x();
        return {i, i, i};
      }
      case ShapeKind::Box: {
        const double x2 = 4.0 * dims.x() * dims.x();
        const double y2 = 4.0 * dims.y() * dims.y();
        const double z2 = 4.0 * dims.z() * dims.z();
        return {mass / 12.0 * (y2 + z2), mass / 12.0 * (x2 + z2),
                mass / 12.0 * (x2 + y2)};
      }
      case ShapeKind::Cylinder: {
        const double r2 = dims.x() * dims.x();
        const double h2 = 4.0 * dims.z() * dims.z();
        const double ixy = mass / 12.0 * (3.0 * r2 + h2);
        return {ixy, ixy, 0.5 * mass * r2};
      }
    }
    return Vec3::Ones();
  }

  /// Ray-shape intersection in the local frame. Returns smallest t >= 0 such
  /// that origin + t*dir hits the surface, or a negative value on miss.
  double ray_intersect(const Vec3& origin, const Vec3& dir) const {
    switch (kind) {
      case ShapeKind::Sphere: {
        const double b = origin.dot(dir);
        const double c = origin.squaredNorm() - dims.x() * dims.x();
        const double disc = b * b - c;
        if (disc < 0.0) return -1.0;
        const double s = std::sqrt(disc);
        const double t0 = -b - s, t1 = -b + s;
        if (t0 >= 0.0) return t0;
        if (t1 >= 0.0) return t1;
        return -1.0;
      }
      case ShapeKind::Box: {
        double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
        for (int i = 0; i < 3; ++i) {
          if (std::abs(dir[i]) < 1e-15) {
            if (std::abs(origin[i]) > dims[i]) return -1.0;
            continue;
          }
          double t0 = (-dims[i] - origin[i]) / dir[i];
          double t1 = (dims[i] - origin[i]) / dir[i];
          if (t0 > t1) std::swap(t0, t1);
          tmin = std::max(tmin, t0);
          tmax = std::min(tmax, t1);
          if (tmin > tmax) return -1.0;
        }
        return tmin;
      }
      case ShapeKind::Cylinder: {
        double best = -1.0;
        auto consider = [&](double t) {
          if (t >= 0.0 && (best < 0.0 || t < best)) best = t;
        };
        // lateral surface
        const double a = dir.x() * dir.x() + dir.y() * dir.y();
        if (a > 1e-15) {
          const double b = origin.x() * dir.x() + origin.y() * dir.y();
          const double c =
              origin.x() * origin.x() + origin.y() * origin.y() -
              dims.x() * dims.x();
          const double disc = b * b - a * c;
          if (disc >= 0.0) {
            const double s = std::sqrt(disc);
            for (double t : {(-b - s) / a, (-b + s) / a}) {
              if (t >= 0.0 && std::abs(origin.z() + t * dir.z()) <= dims.z())
                consider(t);
            }
          }
        }
        // caps
        if (std::abs(dir.z()) > 1e-15) {
          for (double zc : {dims.z(), -dims.z()}) {
            const double t = (zc - origin.z()) / dir.z();
            if (t >= 0.0) {
              const Vec3 p = origin + t * dir;
              if (p.x() * p.x() + p.y() * p.y() <= dims.x() * dims.x())
                consider(t);
            }
          }
        }
        return best;
      }
    }
    return -1.0;
  }
};

/// Points sampled on a shape surface, world frame.
struct SampledSurface {
  std::vector<Vec3> points;

  size_t count() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Area-weighted uniform surface sampling, deterministic given seed.
inline SampledSurface sample_surface_points(const Shape& shape,
                                            const RigidTransform& pose, int n,
                                            uint64_t seed) {
  if (!shape.valid()) throw std::invalid_argument("invalid shape dims");
  if (n < 1) throw std::invalid_argument("sample count must be >= 1");
  Rng rng(seed);
  SampledSurface out;
  out.points.reserve(n);
  for (int i = 0; i < n; ++i) out.points.push_back(pose.apply(shape.sample_surface(rng)));
  return out;
}

}  // namespace cdx
