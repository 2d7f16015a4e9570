#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "cdx/cloud.hpp"
#include "cdx/math.hpp"
#include "cdx/shape.hpp"

namespace cdx {

inline constexpr int kArmDof = 7;
inline constexpr int kHandActDof = 6;
inline constexpr int kHandUnderDof = 6;
inline constexpr int kActionDim = kArmDof + kHandActDof;  // 13

// Hand keypoints feeding the scene representation: 5 fingertips, 5 middle
// phalanx joints, palm center.
inline constexpr int kHandKeypoints = 11;

using ArmVec = Eigen::Matrix<double, kArmDof, 1>;
using HandVec = Eigen::Matrix<double, kHandActDof, 1>;

/// Arm joint deltas (relative, per step) + absolute actuated hand targets.
struct Action {
  ArmVec d_arm = ArmVec::Zero();
  HandVec hand_abs = HandVec::Zero();

  static Action from_vector(const Eigen::VectorXd& v) {
    Action a;
    a.d_arm = v.head<kArmDof>();
    a.hand_abs = v.tail<kHandActDof>();
    return a;
  }
  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(kActionDim);
    v << d_arm, hand_abs;
    return v;
  }
};

struct RobotState {
  ArmVec j_arm = ArmVec::Zero();
  HandVec j_hand_act = HandVec::Zero();
  HandVec j_hand_under = HandVec::Zero();  // coupled: ratio * j_hand_act
};

struct Keypoint {
  Vec3 position;
  double radius;
  bool is_fingertip;   // first five keypoints are fingertips
  int finger;          // 0..4 for finger keypoints, -1 for palm
};

struct LinkPrimitive {
  Shape shape;
  RigidTransform pose;
};

/// Fixed robot geometry and actuation limits. The chain is an abstract
/// 7-DoF arm (yaw/pitch/roll alternating, ~0.9 m reach) with a palm box and
/// five two-segment fingers, contact mediated by sphere keypoints.
struct RobotParams {
  // arm: per joint, translation from the previous frame then rotation axis
  std::array<Vec3, kArmDof> joint_offsets = {
      Vec3(0, 0, 0.10), Vec3(0, 0, 0.08), Vec3(0, 0, 0.26), Vec3(0, 0, 0.02),
      Vec3(0, 0, 0.26), Vec3(0, 0, 0.02), Vec3(0, 0, 0.06)};
  std::array<Vec3, kArmDof> joint_axes = {
      Vec3(0, 0, 1), Vec3(0, 1, 0), Vec3(0, 0, 1), Vec3(0, 1, 0),
      Vec3(0, 0, 1), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  Vec3 ee_offset{0, 0, 0.06};

  ArmVec arm_lower = (ArmVec() << -2.9, -0.2, -2.9, -0.1, -2.9, -1.8, -2.9).finished();
  ArmVec arm_upper = (ArmVec() << 2.9, 2.2, 2.9, 2.6, 2.9, 2.2, 2.9).finished();

  // hand: actuated = [4 finger curls, thumb curl, thumb abduction]
  HandVec hand_lower = (HandVec() << 0.0, 0.0, 0.0, 0.0, 0.0, -0.6).finished();
  HandVec hand_upper = (HandVec() << 1.9, 1.9, 1.9, 1.9, 1.9, 0.6).finished();
  double coupling_ratio = 0.8;

  double arm_delta_max = 0.03;   // rad per control step
  double hand_rate_max = 0.08;   // rad per control step toward target

  // palm-local hand geometry (EE frame; +z is the palm normal)
  double palm_hx = 0.042, palm_hy = 0.038, palm_hz = 0.010;
  double finger_base_x = 0.042;
  std::array<double, 4> finger_base_y = {0.030, 0.010, -0.010, -0.030};
  double thumb_base_x = -0.042, thumb_base_y = 0.030;
  double knuckle_z = 0.012;
  double proximal_len = 0.042, distal_len = 0.036;
  double finger_radius = 0.008;

  double tip_keypoint_radius = 0.009;
  double mid_keypoint_radius = 0.009;
  double palm_keypoint_radius = 0.014;

  ArmVec home_arm =
      (ArmVec() << 0.0, 0.3381, 0.0, 1.5380, 0.0, 1.2655, 0.0).finished();
  HandVec hand_init = (HandVec() << 0.25, 0.25, 0.25, 0.25, 0.25, 0.0).finished();
};

/// Forward-kinematics snapshot: everything downstream consumers need.
struct RobotFrame {
  RigidTransform ee;                       // end-effector (palm) frame
  std::vector<Keypoint> keypoints;         // 11: 5 tips, 5 middles, palm
  std::vector<LinkPrimitive> links;        // arm + palm + finger segments
  Vec3 index_tip;                          // convenience for the midpoint
  Vec3 thumb_tip;

  Vec3 grasp_midpoint() const { return 0.5 * (index_tip + thumb_tip); }
};

namespace detail {

inline void add_segment_cylinder(std::vector<LinkPrimitive>& links,
                                 const Vec3& a, const Vec3& b, double radius) {
  const Vec3 d = b - a;
  const double len = d.norm();
  if (len < 1e-9) return;
  const Vec3 axis = d / len;
  Quat q = Quat::FromTwoVectors(Vec3(0, 0, 1), axis);
  links.push_back(
      {Shape::cylinder(radius, 0.5 * len), {q, 0.5 * (a + b)}});
}

}  // namespace detail

inline RobotState clamp_to_limits(const RobotParams& p, RobotState s) {
  s.j_arm = s.j_arm.cwiseMax(p.arm_lower).cwiseMin(p.arm_upper);
  s.j_hand_act = s.j_hand_act.cwiseMax(p.hand_lower).cwiseMin(p.hand_upper);
  s.j_hand_under = p.coupling_ratio * s.j_hand_act;
  return s;
}

inline RobotState home_state(const RobotParams& p) {
  RobotState s;
  s.j_arm = p.home_arm;
  s.j_hand_act = p.hand_init;
  s.j_hand_under = p.coupling_ratio * s.j_hand_act;
  return s;
}

/// Applies a control action with per-step clamps: relative arm deltas,
/// rate-limited absolute hand targets, coupled under-actuated joints.
inline RobotState apply_action(const RobotParams& p, const RobotState& s,
                               const Action& a) {
  RobotState out = s;
  out.j_arm += a.d_arm.cwiseMax(-p.arm_delta_max).cwiseMin(p.arm_delta_max);
  const HandVec target =
      a.hand_abs.cwiseMax(p.hand_lower).cwiseMin(p.hand_upper);
  const HandVec step = (target - s.j_hand_act)
                           .cwiseMax(-p.hand_rate_max)
                           .cwiseMin(p.hand_rate_max);
  out.j_hand_act += step;
  return clamp_to_limits(p, out);
}

/// Full forward kinematics. Keypoint order: 5 fingertips (index, middle,
/// ring, pinky, thumb), 5 middle-phalanx joints (same order), palm center.
inline RobotFrame forward_kinematics(const RobotParams& p,
                                     const RobotState& s,
                                     bool with_links = false) {
  RobotFrame out;
  RigidTransform t = RigidTransform::identity();
  std::vector<Vec3> joint_positions;
  joint_positions.reserve(kArmDof + 1);
  joint_positions.push_back(t.translation);
  for (int i = 0; i < kArmDof; ++i) {
    t = t.compose(translate(p.joint_offsets[i]));
    joint_positions.push_back(t.translation);
    t = t.compose(rotate_about(p.joint_axes[i], s.j_arm[i]));
  }
  t = t.compose(translate(p.ee_offset));
  out.ee = t;

  if (with_links) {
    detail::add_segment_cylinder(out.links, joint_positions[0], joint_positions[1], 0.045);
    detail::add_segment_cylinder(out.links, joint_positions[1], joint_positions[2], 0.040);
    detail::add_segment_cylinder(out.links, joint_positions[2], joint_positions[4], 0.038);
    detail::add_segment_cylinder(out.links, joint_positions[4], joint_positions[6], 0.034);
    detail::add_segment_cylinder(out.links, joint_positions[6], t.translation, 0.030);
    out.links.push_back(
        {Shape::box(p.palm_hx, p.palm_hy, p.palm_hz),
         t.compose(translate({0, 0, p.palm_hz}))});
  }

  // palm arch (under joint 5, coupled to thumb abduction) tilts the finger
  // knuckle row slightly about the palm x axis
  const double arch = s.j_hand_under[5];
  const RigidTransform arch_xf =
      t.compose(rotate_about(Vec3(1, 0, 0), arch));

  std::vector<Vec3> tips(5), mids(5);
  auto finger_chain = [&](const RigidTransform& base, const Vec3& out_dir,
                          const Vec3& curl_axis, double q_prox,
                          double q_dist, int fi) {
    const RigidTransform prox =
        base.compose(rotate_about(curl_axis, q_prox));
    const Vec3 mid = prox.apply(out_dir * p.proximal_len);
    const RigidTransform dist_base =
        RigidTransform{prox.rotation, mid}.compose(
            rotate_about(curl_axis, q_dist));
    const Vec3 tip = dist_base.apply(out_dir * p.distal_len);
    mids[fi] = mid;
    tips[fi] = tip;
    if (with_links) {
      detail::add_segment_cylinder(out.links, base.translation, mid, p.finger_radius);
      detail::add_segment_cylinder(out.links, mid, tip, p.finger_radius);
    }
  };

  // four fingers along +x, curling toward +z (palm normal)
  for (int f = 0; f < 4; ++f) {
    const Vec3 base_local(p.finger_base_x, p.finger_base_y[f], p.knuckle_z);
    const RigidTransform base =
        arch_xf.compose(translate(base_local));
    finger_chain(base, Vec3(1, 0, 0), Vec3(0, -1, 0), s.j_hand_act[f],
                 s.j_hand_under[f], f);
  }
  // thumb along -x with abduction about z, curling toward +z
  {
    const Vec3 base_local(p.thumb_base_x, p.thumb_base_y, p.knuckle_z);
    const RigidTransform base =
        t.compose(translate(base_local))
            .compose(rotate_about(Vec3(0, 0, 1), s.j_hand_act[5]));
    finger_chain(base, Vec3(-1, 0, 0), Vec3(0, 1, 0), s.j_hand_act[4],
                 s.j_hand_under[4], 4);
  }

  out.keypoints.reserve(kHandKeypoints);
  for (int f = 0; f < 5; ++f)
    out.keypoints.push_back({tips[f], p.tip_keypoint_radius, true, f});
  for (int f = 0; f < 5; ++f)
    out.keypoints.push_back({mids[f], p.mid_keypoint_radius, false, f});
  out.keypoints.push_back(
      {t.apply({0, 0, 0.012}), p.palm_keypoint_radius, false, -1});

  out.index_tip = tips[0];
  out.thumb_tip = tips[4];
  return out;
}

/// Closed-form arm solution for the default chain: yaw about the base plus
/// the three pitch joints, roll joints held at zero, palm kept facing down.
/// Returns false when the target is out of reach.
inline bool arm_ik_down(const RobotParams& p, const Vec3& ee_target,
                        ArmVec& out) {
  const double yaw = std::atan2(ee_target.y(), ee_target.x());
  const double radial = std::hypot(ee_target.x(), ee_target.y());
  // chain constants: shoulder height 0.18, two 0.28 links, 0.12 wrist+ee
  const double sx = radial / 0.28;
  const double cz = (ee_target.z() - 0.18 + 0.12) / 0.28;
  const double len = std::hypot(sx, cz);
  if (len >= 2.0 || len < 1e-9) return false;
  const double phi = std::atan2(sx, cz);
  const double delta = std::acos(clampd(len / 2.0, -1.0, 1.0));
  const double q2 = phi - delta;
  const double q24 = phi + delta;
  out << yaw, q2, 0.0, q24 - q2, 0.0, kPi - q24, 0.0;
  const ArmVec clamped =
      out.cwiseMax(p.arm_lower).cwiseMin(p.arm_upper);
  return (clamped - out).norm() < 1e-9;
}

/// n points on the link primitives posed by forward kinematics,
/// area-weighted across links; mask = synthetic flag.
inline MaskedPointCloud synth_robot_cloud(const RobotParams& p,
                                          const RobotState& s, int n,
                                          uint64_t seed) {
  const RobotFrame frame = forward_kinematics(p, s, /*with_links=*/true);
  Rng rng(seed);
  std::vector<double> cum;
  double total = 0.0;
  for (const auto& link : frame.links) {
    total += link.shape.surface_area();
    cum.push_back(total);
  }
  MaskedPointCloud out(n);
  for (int i = 0; i < n; ++i) {
    const double pick = rng.uniform(0.0, total);
    size_t li = std::lower_bound(cum.begin(), cum.end(), pick) - cum.begin();
    if (li >= frame.links.size()) li = frame.links.size() - 1;
    const auto& link = frame.links[li];
    out.set(i, link.pose.apply(link.shape.sample_surface(rng)), 1.0);
  }
  return out;
}

}  // namespace cdx
