#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>

namespace cdx {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Quat = Eigen::Quaterniond;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kPi = 3.14159265358979323846;

/// Rigid transform: rotation (unit quaternion) followed by translation.
struct RigidTransform {
  Quat rotation{1.0, 0.0, 0.0, 0.0};
  Vec3 translation{0.0, 0.0, 0.0};

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Vec3 rotate(const Vec3& v) const { return rotation * v; }

  RigidTransform inverse() const {
    const Quat inv = rotation.conjugate();
    return {inv, inv * (-translation)};
  }

  // this ∘ other: applies `other` first.
  RigidTransform compose(const RigidTransform& other) const {
    return {(rotation * other.rotation).normalized(),
            rotation * other.translation + translation};
  }

  bool is_unit(double tol = 1e-9) const {
    return std::abs(rotation.norm() - 1.0) <= tol;
  }
};

inline RigidTransform translate(const Vec3& t) {
  return {Quat::Identity(), t};
}

inline RigidTransform rotate_about(const Vec3& axis, double angle) {
  return {Quat(Eigen::AngleAxisd(angle, axis.normalized())), Vec3::Zero()};
}

/// Intrinsic XYZ (roll, pitch, yaw) Euler angles of a rotation.
inline Vec3 to_rpy(const Quat& q) {
  const Mat3 r = q.toRotationMatrix();
  const double pitch = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
  double roll, yaw;
  if (std::abs(r(2, 0)) < 1.0 - 1e-12) {
    roll = std::atan2(r(2, 1), r(2, 2));
    yaw = std::atan2(r(1, 0), r(0, 0));
  } else {
    roll = std::atan2(-r(1, 2), r(1, 1));
    yaw = 0.0;
  }
  return {roll, pitch, yaw};
}

inline bool all_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

inline double clampd(double v, double lo, double hi) {
  return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace cdx
