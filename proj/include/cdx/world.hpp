#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

#include "cdx/cloud.hpp"
#include "cdx/gs.hpp"
#include "cdx/math.hpp"
#include "cdx/robot.hpp"
#include "cdx/scene.hpp"

namespace cdx {

inline constexpr int kTeacherObsDim = 128;

// Table 4 observation layout span boundaries.
namespace obs_layout {
inline constexpr int kJoints = 0;          // 19 joint positions
inline constexpr int kEePos = 19;          // end-effector position
inline constexpr int kEeRpy = 22;          // end-effector Euler angles
inline constexpr int kEeLinVel = 25;
inline constexpr int kEeAngVel = 28;
inline constexpr int kObjToMid = 31;       // vector from object to midpoint
inline constexpr int kMid = 34;            // midpoint position
inline constexpr int kObjPose = 37;        // position + quaternion (x,y,z,w)
inline constexpr int kObjLinVel = 44;
inline constexpr int kObjAngVel = 47;
inline constexpr int kGoalPose = 50;
inline constexpr int kDPos = 57;           // 33 flattened d_pos values
inline constexpr int kDNeg = 90;           // 33 flattened d_neg values
inline constexpr int kFingerHeights = 123; // 5 fingertip-to-table heights
inline constexpr int kEnd = 128;
}  // namespace obs_layout

/// Penalty contact and integration constants. Force thresholds elsewhere are
/// expressed in "sim force units" = newtons * force_unit_scale.
struct SimParams {
  double gravity = 9.81;
  double control_dt = 1.0 / 30.0;
  int substeps = 8;

  // Penalty springs with a depth cap and damping clamped to the
  // semi-implicit-Euler stability bound (0.5 * m / dt): impacts stay
  // inelastic instead of amplifying.
  double contact_stiffness = 600.0;    // N/m
  double contact_damping = 20.0;       // N*s/m, clamped per contact
  double contact_depth_cap = 0.003;    // m, spring saturation depth
  double friction_mu = 0.7;
  double tangent_stiffness = 400.0;    // N/m, anchored friction spring
  double tangent_damping = 4.0;
  double keypoint_stiffness = 400.0;   // N/m, finger keypoint contacts
  double keypoint_depth_cap = 0.010;   // m
  double lin_damping = 0.25;           // 1/s
  double ang_damping = 1.2;            // 1/s

  double force_unit_scale = 60.0;      // sim force units per newton

  double success_lift = 0.1;           // meters above settled height
  double penetration_depth = 0.01;     // fingertip-below-table termination
  double coarse_distance = 0.08;       // hand-to-target gate

  Aabb workspace{{0.10, -0.30, 0.0}, {0.70, 0.30, 0.60}};
  double goal_lift = 0.2;              // goal = settled target + (0,0,goal_lift)

  // surface sampling for the scene representation
  int n_pos_samples = 200;
  int n_neg_samples = 50;
};

enum class SafetyTermination { None, ForceViolation, TablePenetration };

struct ContactReport {
  Eigen::Matrix<double, 5, 1> fingertip_forces_z =
      Eigen::Matrix<double, 5, 1>::Zero();           // sim force units
  double max_fingertip_force = 0.0;                  // sim force units
  Eigen::Matrix<double, 5, 1> fingertip_table_heights =
      Eigen::Matrix<double, 5, 1>::Zero();           // meters
  double ee_force = 0.0;                             // sim force units
};

struct CameraParams {
  Vec3 position{0.95, 0.0, 0.45};
  Vec3 look_at{0.40, 0.0, 0.05};
  double fov_y_deg = 58.0;
  int width = 96;
  int height = 72;

  /// Camera-to-world transform; camera x right, y down, z forward.
  RigidTransform pose() const {
    const Vec3 fwd = (look_at - position).normalized();
    Vec3 right = fwd.cross(Vec3(0, 0, 1));
    if (right.norm() < 1e-9) right = Vec3(1, 0, 0);
    right.normalize();
    const Vec3 down = fwd.cross(right).normalized();
    Mat3 r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = fwd;
    return {Quat(r), position};
  }
};

/// Simplified tabletop world: kinematic arm+hand proxy, penalty-contact
/// rigid primitives, ground-truth camera. One world is single-threaded.
class World {
 public:
  World(SimParams params, RobotParams robot_params)
      : params_(std::move(params)), robot_params_(std::move(robot_params)) {}

  /// Loads a scene (settled poses) and resets all episode state.
  void reset(const SceneSpec& scene, uint64_t episode_seed) {
    scene_ = scene;
    objects_ = scene.objects;
    target_index_ = scene.target_index;
    robot_ = home_state(robot_params_);
    robot_contacts_enabled_ = true;
    episode_seed_ = episode_seed;
    step_count_ = 0;
    fine_latched_ = false;
    d_neg_running_min_ = std::numeric_limits<double>::infinity();
    table_anchors_.clear();
    keypoint_anchors_.clear();
    finger_load_.fill(0.0);
    finger_stalled_.fill(false);
    finger_calm_.fill(0);
    if (objects_.empty()) {
      settled_target_z_ = 0.0;
      goal_position_ = Vec3::Zero();
    } else {
      settled_target_z_ = objects_[target_index_].pose.translation.z();
      goal_position_ = objects_[target_index_].pose.translation +
                       Vec3(0, 0, params_.goal_lift);
    }

    cache_object_geometry();
    sample_scene_surfaces();

    frame_ = forward_kinematics(robot_params_, robot_);
    prev_frame_ = frame_;
    ee_lin_vel_ = Vec3::Zero();
    ee_ang_vel_ = Vec3::Zero();
    last_report_ = ContactReport{};
    for (int i = 0; i < 5; ++i)
      last_report_.fingertip_table_heights[i] =
          frame_.keypoints[i].position.z() - frame_.keypoints[i].radius;
  }

  // -- accessors ------------------------------------------------------------

  const SimParams& params() const { return params_; }
  const RobotParams& robot_params() const { return robot_params_; }
  const RobotState& robot() const { return robot_; }
  const std::vector<RigidObject>& objects() const { return objects_; }
  std::vector<RigidObject>& mutable_objects() { return objects_; }
  int target_index() const { return target_index_; }
  const RigidObject& target() const { return objects_.at(target_index_); }
  const RobotFrame& frame() const { return frame_; }
  const ContactReport& last_report() const { return last_report_; }
  int step_count() const { return step_count_; }
  double settled_target_z() const { return settled_target_z_; }
  const Vec3& goal_position() const { return goal_position_; }
  uint64_t episode_seed() const { return episode_seed_; }

  void set_robot_contacts_enabled(bool on) { robot_contacts_enabled_ = on; }
  void set_render_robot(bool on) { render_robot_ = on; }
  void set_target_index(int i) {
    target_index_ = i;
    settled_target_z_ = objects_.at(i).pose.translation.z();
    goal_position_ =
        objects_.at(i).pose.translation + Vec3(0, 0, params_.goal_lift);
    sample_scene_surfaces();
  }

  /// Forces an arbitrary robot state (tests and scripted policies).
  void set_robot_state(const RobotState& s) {
    robot_ = clamp_to_limits(robot_params_, s);
    frame_ = forward_kinematics(robot_params_, robot_);
    prev_frame_ = frame_;
  }

  // -- stepping -------------------------------------------------------------

  /// Advances one control step; returns the contact report. Hand joints
  /// advance toward their targets with a rate limit and stall against
  /// contact resistance; opening is always allowed.
  ContactReport step(const Action& action) {
    const RobotState start = robot_;
    const RobotState end = apply_action(robot_params_, start, action);
    const double dt = params_.control_dt / params_.substeps;
    const double hand_rate_sub =
        robot_params_.hand_rate_max / params_.substeps;

    ContactReport report;
    const RigidTransform prev_ee = frame_.ee;

    for (int s = 0; s < params_.substeps; ++s) {
      const double alpha = static_cast<double>(s + 1) / params_.substeps;
      RobotState mid = robot_;
      mid.j_arm = start.j_arm + alpha * (end.j_arm - start.j_arm);
      for (int j = 0; j < kHandActDof; ++j) {
        const double cur = robot_.j_hand_act[j];
        double step_j =
            clampd(end.j_hand_act[j] - cur, -hand_rate_sub, hand_rate_sub);
        const int finger = j <= 3 ? j : 4;
        if (step_j > 0.0 && finger_stalled_[finger])
          step_j = 0.0;  // closing stalls against resistance
        mid.j_hand_act[j] = cur + step_j;
      }
      mid.j_hand_under = robot_params_.coupling_ratio * mid.j_hand_act;

      prev_frame_ = frame_;
      robot_ = mid;
      frame_ = forward_kinematics(robot_params_, robot_);

      substep_dynamics(dt, report);
    }
    step_count_ += 1;

    // end-effector velocities by finite difference over the control step
    ee_lin_vel_ =
        (frame_.ee.translation - prev_ee.translation) / params_.control_dt;
    const Quat dq = frame_.ee.rotation * prev_ee.rotation.conjugate();
    ee_ang_vel_ = 2.0 * Vec3(dq.x(), dq.y(), dq.z()) / params_.control_dt;
    if (dq.w() < 0.0) ee_ang_vel_ = -ee_ang_vel_;

    for (int i = 0; i < 5; ++i)
      report.fingertip_table_heights[i] =
          frame_.keypoints[i].position.z() - frame_.keypoints[i].radius;
    last_report_ = report;

    check_finite();
    return report;
  }

  // -- scene representation ---------------------------------------------------

  /// Recomputes the representation from current poses and advances the
  /// episode-running minimum distance and the coarse-phase latch.
  const GsRepresentation& update_gs() {
    std::vector<Vec3> keypoints;
    keypoints.reserve(frame_.keypoints.size());
    for (const auto& k : frame_.keypoints) keypoints.push_back(k.position);

    SampledSurface target_world = transformed_surface(target_index_);
    std::vector<SampledSurface> nontarget;
    for (size_t i = 0; i < objects_.size(); ++i) {
      if (static_cast<int>(i) == target_index_) continue;
      nontarget.push_back(transformed_surface(static_cast<int>(i)));
    }
    gs_ = compute_gs(keypoints, target_world, nontarget, d_neg_running_min_);
    d_neg_running_min_ = gs_.d_neg_min_abs;
    if (gs_.d_pos_min() < params_.coarse_distance) fine_latched_ = true;
    return gs_;
  }

  const GsRepresentation& gs() const { return gs_; }
  double d_neg_running_min() const { return d_neg_running_min_; }

  /// True while the approach phase is active (hand far from target). Latches
  /// to false for the rest of the episode once the gate distance is crossed.
  bool coarse_phase_active() const { return !fine_latched_; }

  // -- outcome checks ---------------------------------------------------------

  bool check_success() const {
    if (objects_.empty()) return false;
    return target().pose.translation.z() - settled_target_z_ >=
           params_.success_lift;
  }

  SafetyTermination check_safety_termination(const ContactReport& report,
                                             double f_threshold) const {
    if (f_threshold <= 0.0)
      throw std::invalid_argument("force threshold must be positive");
    if (report.max_fingertip_force > f_threshold)
      return SafetyTermination::ForceViolation;
    for (int i = 0; i < 5; ++i)
      if (report.fingertip_table_heights[i] < -params_.penetration_depth)
        return SafetyTermination::TablePenetration;
    return SafetyTermination::None;
  }

  double kinetic_energy() const {
    double ke = 0.0;
    for (size_t i = 0; i < objects_.size(); ++i) {
      const auto& o = objects_[i];
      ke += 0.5 * o.mass * o.lin_vel.squaredNorm();
      const Mat3 r = o.pose.rotation.toRotationMatrix();
      const Mat3 iw =
          r * inertia_diag_[i].asDiagonal() * r.transpose();
      ke += 0.5 * o.ang_vel.dot(iw * o.ang_vel);
    }
    return ke;
  }

  // -- observations ------------------------------------------------------------

  Eigen::VectorXd teacher_observation() const {
    using namespace obs_layout;
    Eigen::VectorXd obs = Eigen::VectorXd::Zero(kTeacherObsDim);
    obs.segment<7>(kJoints) = robot_.j_arm;
    obs.segment<6>(kJoints + 7) = robot_.j_hand_act;
    obs.segment<6>(kJoints + 13) = robot_.j_hand_under;
    obs.segment<3>(kEePos) = frame_.ee.translation;
    obs.segment<3>(kEeRpy) = to_rpy(frame_.ee.rotation);
    obs.segment<3>(kEeLinVel) = ee_lin_vel_;
    obs.segment<3>(kEeAngVel) = ee_ang_vel_;
    const Vec3 mid = frame_.grasp_midpoint();
    const Vec3 obj_pos = target().pose.translation;
    obs.segment<3>(kObjToMid) = mid - obj_pos;
    obs.segment<3>(kMid) = mid;
    obs.segment<3>(kObjPose) = obj_pos;
    const Quat oq = target().pose.rotation;
    obs.segment<4>(kObjPose + 3) = Eigen::Vector4d(oq.x(), oq.y(), oq.z(), oq.w());
    obs.segment<3>(kObjLinVel) = target().lin_vel;
    obs.segment<3>(kObjAngVel) = target().ang_vel;
    obs.segment<3>(kGoalPose) = goal_position_;
    obs.segment<4>(kGoalPose + 3) = Eigen::Vector4d(0, 0, 0, 1);
    for (int k = 0; k < kHandKeypoints; ++k) {
      obs.segment<3>(kDPos + 3 * k) = gs_.d_pos[k];
      obs.segment<3>(kDNeg + 3 * k) = gs_.d_neg[k];
    }
    obs.segment<5>(kFingerHeights) = last_report_.fingertip_table_heights;
    return obs;
  }

  /// Inputs for the staged reward functions, from the current state.
  struct RewardSnapshot {
    Vec3 p_current, p_goal;
    double d_mid;
    double d_pos_min;
    double d_neg_min_abs;
    double max_fingertip_force;
  };

  RewardSnapshot reward_snapshot() const {
    RewardSnapshot r;
    r.p_current = target().pose.translation;
    r.p_goal = goal_position_;
    r.d_mid = (frame_.grasp_midpoint() - r.p_current).norm();
    r.d_pos_min = gs_.d_pos_min();
    const double running = d_neg_running_min_;
    r.d_neg_min_abs = std::isfinite(running) ? running : 0.0;
    r.max_fingertip_force = last_report_.max_fingertip_force;
    return r;
  }

  // -- rendering ----------------------------------------------------------------

  /// Ray-cast depth from the camera; points in the camera frame, mask = 1
  /// where the first hit is the target object.
  MaskedPointCloud render_partial_cloud(const CameraParams& cam) const {
    const RigidTransform cam_pose = cam.pose();
    const Mat3 r = cam_pose.rotation.toRotationMatrix();
    const double tan_y = std::tan(0.5 * cam.fov_y_deg * kPi / 180.0);
    const double tan_x = tan_y * cam.width / cam.height;

    RobotFrame links_frame;
    if (render_robot_)
      links_frame = forward_kinematics(robot_params_, robot_, /*with_links=*/true);

    std::vector<Eigen::Vector4d> hits;
    hits.reserve(cam.width * cam.height);
    for (int j = 0; j < cam.height; ++j) {
      for (int i = 0; i < cam.width; ++i) {
        const double u = (2.0 * (i + 0.5) / cam.width - 1.0) * tan_x;
        const double v = (2.0 * (j + 0.5) / cam.height - 1.0) * tan_y;
        const Vec3 dir = (r * Vec3(u, v, 1.0)).normalized();
        double best_t = std::numeric_limits<double>::infinity();
        int hit_kind = -1;  // -1 none, 0 table, 1 robot, 2+i object i
        // table plane z=0 (finite extent)
        if (dir.z() < -1e-12) {
          const double t = -cam_pose.translation.z() / dir.z();
          const Vec3 p = cam_pose.translation + t * dir;
          if (t > 0 && p.x() > -0.2 && p.x() < 1.1 && std::abs(p.y()) < 0.7) {
            best_t = t;
            hit_kind = 0;
          }
        }
        for (size_t oi = 0; oi < objects_.size(); ++oi) {
          const double t = ray_vs(objects_[oi].shape, objects_[oi].pose,
                                  cam_pose.translation, dir);
          if (t >= 0 && t < best_t) {
            best_t = t;
            hit_kind = 2 + static_cast<int>(oi);
          }
        }
        for (const auto& link : links_frame.links) {
          const double t =
              ray_vs(link.shape, link.pose, cam_pose.translation, dir);
          if (t >= 0 && t < best_t) {
            best_t = t;
            hit_kind = 1;
          }
        }
        if (hit_kind < 0) continue;
        const Vec3 p_world = cam_pose.translation + best_t * dir;
        const Vec3 p_cam = r.transpose() * (p_world - cam_pose.translation);
        const double mask =
            (hit_kind == 2 + target_index_) ? 1.0 : 0.0;
        hits.emplace_back(p_cam.x(), p_cam.y(), p_cam.z(), mask);
      }
    }
    MaskedPointCloud out(static_cast<int>(hits.size()));
    for (size_t k = 0; k < hits.size(); ++k) out.pts.row(static_cast<int>(k)) = hits[k];
    return out;
  }

  // -- internals ------------------------------------------------------------

  SampledSurface transformed_surface(int obj_index) const {
    const auto& local = local_surfaces_[obj_index];
    SampledSurface out;
    out.points.reserve(local.points.size());
    const RigidTransform& pose = objects_[obj_index].pose;
    for (const Vec3& p : local.points) out.points.push_back(pose.apply(p));
    return out;
  }

 private:
  void cache_object_geometry() {
    contact_points_.clear();
    inertia_diag_.clear();
    bounding_radius_.clear();
    for (const auto& o : objects_) {
      contact_points_.push_back(o.shape.contact_points());
      inertia_diag_.push_back(o.shape.inertia_diagonal(o.mass));
      bounding_radius_.push_back(o.shape.bounding_radius());
    }
  }

  /// Local-frame surface samples: n_pos for the target, n_neg for others,
  /// seeded per (scene seed, object index).
  void sample_scene_surfaces() {
    local_surfaces_.assign(objects_.size(), {});
    for (size_t i = 0; i < objects_.size(); ++i) {
      const int n = static_cast<int>(i) == target_index_
                        ? params_.n_pos_samples
                        : params_.n_neg_samples;
      local_surfaces_[i] = sample_surface_points(
          objects_[i].shape, RigidTransform::identity(), n,
          mix_seed(scene_.seed, 0x5f5e, i));
    }
  }

  double ray_vs(const Shape& shape, const RigidTransform& pose,
                const Vec3& origin, const Vec3& dir) const {
    const RigidTransform inv = pose.inverse();
    return shape.ray_intersect(inv.apply(origin), inv.rotate(dir));
  }

  Vec3 point_velocity(const RigidObject& o, const Vec3& p_world) const {
    return o.lin_vel + o.ang_vel.cross(p_world - o.pose.translation);
  }

  struct ForceAccum {
    Vec3 force = Vec3::Zero();
    Vec3 torque = Vec3::Zero();
    void add(const Vec3& f, const Vec3& at, const Vec3& com) {
      force += f;
      torque += (at - com).cross(f);
    }
  };

  void substep_dynamics(double dt, ContactReport& report) {
    const size_t n = objects_.size();
    std::vector<ForceAccum> acc(n);

    // gravity
    for (size_t i = 0; i < n; ++i)
      acc[i].force.z() -= params_.gravity * objects_[i].mass;

    contact_table(acc, dt);
    contact_object_pairs(acc, dt);
    if (robot_contacts_enabled_) contact_keypoints(acc, dt, report);

    // semi-implicit Euler with light velocity damping
    for (size_t i = 0; i < n; ++i) {
      auto& o = objects_[i];
      o.lin_vel += acc[i].force / o.mass * dt;
      o.lin_vel *= std::max(0.0, 1.0 - params_.lin_damping * dt);
      const Mat3 r = o.pose.rotation.toRotationMatrix();
      const Mat3 iw_inv =
          r * inertia_diag_[i].cwiseInverse().asDiagonal() * r.transpose();
      o.ang_vel += iw_inv * acc[i].torque * dt;
      o.ang_vel *= std::max(0.0, 1.0 - params_.ang_damping * dt);
      o.pose.translation += o.lin_vel * dt;
      const Quat w(0.0, o.ang_vel.x(), o.ang_vel.y(), o.ang_vel.z());
      const Quat dq = w * o.pose.rotation;
      o.pose.rotation.coeffs() += 0.5 * dt * dq.coeffs();
      o.pose.rotation.normalize();
    }
  }

  /// Table contact points for object i: the analytic lowest point for
  /// spheres, penetrating sample points otherwise.
  std::vector<std::pair<int, Vec3>> table_contacts(size_t i) const {
    std::vector<std::pair<int, Vec3>> out;
    const auto& o = objects_[i];
    if (o.shape.kind == ShapeKind::Sphere) {
      const Vec3 p = o.pose.translation - Vec3(0, 0, o.shape.dims.x());
      if (p.z() < 0.0) out.emplace_back(0, p);
      return out;
    }
    const auto& pts = contact_points_[i];
    for (size_t pi = 0; pi < pts.size(); ++pi) {
      const Vec3 p = o.pose.apply(pts[pi]);
      if (p.z() < 0.0) out.emplace_back(static_cast<int>(pi), p);
    }
    return out;
  }

  void contact_table(std::vector<ForceAccum>& acc, double dt) {
    for (size_t i = 0; i < objects_.size(); ++i) {
      auto& o = objects_[i];
      const auto contacts = table_contacts(i);
      if (contacts.empty()) {
        // contact broke: sweep this object's anchors
        auto it = table_anchors_.lower_bound({static_cast<int>(i), 0});
        while (it != table_anchors_.end() && it->first.first == static_cast<int>(i))
          it = table_anchors_.erase(it);
        continue;
      }
      const double scale = 1.0 / static_cast<double>(contacts.size());
      const double k = params_.contact_stiffness * scale;
      const double damp_cap = 0.5 * o.mass / dt * scale;
      const double c = std::min(params_.contact_damping * scale, damp_cap);
      const double kt = params_.tangent_stiffness * scale;
      const double ct = std::min(params_.tangent_damping * scale, damp_cap);
      for (const auto& [pi, p] : contacts) {
        const double depth = std::min(-p.z(), params_.contact_depth_cap);
        const auto key = std::make_pair(static_cast<int>(i), pi);
        const Vec3 v = point_velocity(o, p);
        const double fn = std::max(0.0, k * depth - c * v.z());
        acc[i].add(Vec3(0, 0, fn), p, o.pose.translation);

        // anchored tangential friction against the table
        auto it = table_anchors_.find(key);
        if (it == table_anchors_.end())
          it = table_anchors_.emplace(key, Eigen::Vector2d(p.x(), p.y())).first;
        Eigen::Vector2d delta(p.x() - it->second.x(), p.y() - it->second.y());
        Eigen::Vector2d ft =
            -kt * delta - ct * Eigen::Vector2d(v.x(), v.y());
        const double limit = params_.friction_mu * fn;
        if (ft.norm() > limit && ft.norm() > 1e-12) {
          ft *= limit / ft.norm();
          // slipping: drag the anchor so the spring sits on the cone,
          // anchored behind the contact point against the motion
          it->second = Eigen::Vector2d(p.x(), p.y()) + ft / kt;
        }
        acc[i].add(Vec3(ft.x(), ft.y(), 0.0), p, o.pose.translation);
      }
    }
  }

  struct PairContact {
    Vec3 point;
    Vec3 normal;  // pushes object `a` outward
    double depth;
  };

  /// Contact records between objects a and b; spheres resolve against the
  /// other shape's SDF analytically, other pairs sample both point sets.
  std::vector<PairContact> pair_contacts(size_t a, size_t b) const {
    std::vector<PairContact> out;
    const auto& oa = objects_[a];
    const auto& ob = objects_[b];
    const bool sa = oa.shape.kind == ShapeKind::Sphere;
    const bool sb = ob.shape.kind == ShapeKind::Sphere;
    if (sa && sb) {
      const Vec3 d = oa.pose.translation - ob.pose.translation;
      const double dist = d.norm();
      const double depth = oa.shape.dims.x() + ob.shape.dims.x() - dist;
      if (depth > 0.0 && dist > 1e-12) {
        const Vec3 n = d / dist;
        out.push_back({ob.pose.translation + n * ob.shape.dims.x(), n, depth});
      }
      return out;
    }
    if (sa || sb) {
      const auto& sphere = sa ? oa : ob;
      const auto& other = sa ? ob : oa;
      const RigidTransform inv = other.pose.inverse();
      const Vec3 cl = inv.apply(sphere.pose.translation);
      const double phi = other.shape.sdf(cl) - sphere.shape.dims.x();
      if (phi < 0.0) {
        Vec3 n = other.pose.rotate(other.shape.sdf_gradient(cl)).normalized();
        if (sb) n = -n;  // normal must push object `a`
        out.push_back(
            {sphere.pose.translation - (sa ? n : -n) * sphere.shape.dims.x(),
             n, -phi});
      }
      return out;
    }
    const RigidTransform inv_b = ob.pose.inverse();
    for (const Vec3& lp : contact_points_[a]) {
      const Vec3 p = oa.pose.apply(lp);
      const Vec3 pb = inv_b.apply(p);
      const double phi = ob.shape.sdf(pb);
      if (phi < 0.0)
        out.push_back(
            {p, ob.pose.rotate(ob.shape.sdf_gradient(pb)).normalized(), -phi});
    }
    const RigidTransform inv_a = oa.pose.inverse();
    for (const Vec3& lp : contact_points_[b]) {
      const Vec3 p = ob.pose.apply(lp);
      const Vec3 pa = inv_a.apply(p);
      const double phi = oa.shape.sdf(pa);
      if (phi < 0.0)
        out.push_back(
            {p, -(oa.pose.rotate(oa.shape.sdf_gradient(pa)).normalized()),
             -phi});
    }
    return out;
  }

  void contact_object_pairs(std::vector<ForceAccum>& acc, double dt) {
    const size_t n = objects_.size();
    for (size_t a = 0; a < n; ++a) {
      for (size_t b = a + 1; b < n; ++b) {
        const auto& oa = objects_[a];
        const auto& ob = objects_[b];
        const double gap =
            (oa.pose.translation - ob.pose.translation).norm() -
            bounding_radius_[a] - bounding_radius_[b];
        if (gap > 0.0) continue;
        const auto contacts = pair_contacts(a, b);
        if (contacts.empty()) continue;
        const double scale = 1.0 / static_cast<double>(contacts.size());
        const double m_eff = oa.mass * ob.mass / (oa.mass + ob.mass);
        const double damp_cap = 0.5 * m_eff / dt * scale;
        const double k = params_.contact_stiffness * scale;
        const double c = std::min(params_.contact_damping * scale, damp_cap);
        const double ct = std::min(params_.tangent_damping * scale, damp_cap);
        for (const auto& contact : contacts) {
          const Vec3 v_rel = point_velocity(oa, contact.point) -
                             point_velocity(ob, contact.point);
          const double vn = v_rel.dot(contact.normal);
          const double depth =
              std::min(contact.depth, params_.contact_depth_cap);
          const double fn = std::max(0.0, k * depth - c * vn);
          const Vec3 vt = v_rel - vn * contact.normal;
          Vec3 ft = -ct * vt;
          const double limit = params_.friction_mu * fn;
          if (ft.norm() > limit && ft.norm() > 1e-12) ft *= limit / ft.norm();
          const Vec3 f_on_a = fn * contact.normal + ft;
          acc[a].add(f_on_a, contact.point, oa.pose.translation);
          acc[b].add(-f_on_a, contact.point, ob.pose.translation);
        }
      }
    }
  }

  void contact_keypoints(std::vector<ForceAccum>& acc, double dt,
                         ContactReport& report) {
    const double inv_dt = 1.0 / dt;
    std::array<double, 5> inst{};
    // first pass: contacts per object, for gain scaling
    std::vector<int> contact_count(objects_.size(), 0);
    for (size_t ki = 0; ki < frame_.keypoints.size(); ++ki) {
      const auto& kp = frame_.keypoints[ki];
      for (size_t oi = 0; oi < objects_.size(); ++oi) {
        const auto& o = objects_[oi];
        if ((kp.position - o.pose.translation).norm() - kp.radius -
                bounding_radius_[oi] > 0.0)
          continue;
        const Vec3 pl = o.pose.inverse().apply(kp.position);
        if (o.shape.sdf(pl) - kp.radius < 0.0) contact_count[oi] += 1;
      }
    }
    for (size_t ki = 0; ki < frame_.keypoints.size(); ++ki) {
      const auto& kp = frame_.keypoints[ki];
      const Vec3 kp_vel =
          (kp.position - prev_frame_.keypoints[ki].position) * inv_dt;
      for (size_t oi = 0; oi < objects_.size(); ++oi) {
        auto& o = objects_[oi];
        const double coarse_gap =
            (kp.position - o.pose.translation).norm() - kp.radius -
            bounding_radius_[oi];
        const auto key = std::make_pair(static_cast<int>(ki), static_cast<int>(oi));
        if (coarse_gap > 0.0) {
          keypoint_anchors_.erase(key);
          continue;
        }
        const RigidTransform inv = o.pose.inverse();
        const Vec3 pl = inv.apply(kp.position);
        const double phi = o.shape.sdf(pl) - kp.radius;
        if (phi >= 0.0) {
          keypoint_anchors_.erase(key);
          continue;
        }
        const double kp_scale = 1.0 / std::max(1, contact_count[oi]);
        (void)kp_scale;
        const Vec3 n_world = (o.pose.rotate(o.shape.sdf_gradient(pl))).normalized();
        const double depth = std::min(-phi, params_.keypoint_depth_cap);
        const Vec3 p_contact = kp.position - n_world * kp.radius;
        const Vec3 v_rel = kp_vel - point_velocity(o, p_contact);
        const double vn = v_rel.dot(n_world);
        // springs act per finger; only the damping shares the stability
        // budget across this object's contacts
        const double damp_cap = 0.5 * o.mass / dt * kp_scale;
        const double kk = params_.keypoint_stiffness;
        const double fn = std::max(
            0.0, kk * depth -
                     std::min(params_.contact_damping * kp_scale, damp_cap) * vn);

        // anchored tangential spring in the object's local frame
        const double kt = params_.tangent_stiffness;
        auto it = keypoint_anchors_.find(key);
        if (it == keypoint_anchors_.end())
          it = keypoint_anchors_.emplace(key, inv.apply(p_contact)).first;
        const Vec3 anchor_world = o.pose.apply(it->second);
        Vec3 delta = p_contact - anchor_world;
        delta -= delta.dot(n_world) * n_world;
        Vec3 vt = v_rel - vn * n_world;
        Vec3 ft_finger = -kt * delta -
                         std::min(params_.tangent_damping, damp_cap) * vt;
        const double limit = params_.friction_mu * fn;
        if (ft_finger.norm() > limit && ft_finger.norm() > 1e-12) {
          ft_finger *= limit / ft_finger.norm();
          const Vec3 spring = -ft_finger / kt;
          Vec3 new_anchor = p_contact - spring;
          it->second = inv.apply(new_anchor);
        }

        // force on the object: normal push plus friction reaction
        const Vec3 f_obj = -fn * n_world - ft_finger;
        acc[oi].add(f_obj, p_contact, o.pose.translation);

        if (kp.finger >= 0) inst[kp.finger] += fn;

        // report: force experienced by the keypoint, in sim force units
        const Vec3 f_kp = (fn * n_world + ft_finger) * params_.force_unit_scale;
        report.ee_force += f_kp.norm() / params_.substeps;
        if (kp.is_fingertip) {
          const double fz = std::abs(f_kp.z());
          report.fingertip_forces_z[kp.finger] =
              std::max(report.fingertip_forces_z[kp.finger], fz);
          report.max_fingertip_force =
              std::max(report.max_fingertip_force, fz);
        }
      }
    }
    // sticky stall with hysteresis: stall on load, release after calm
    for (int f = 0; f < 5; ++f) {
      finger_load_[f] = inst[f];
      if (inst[f] > stall_force_) {
        finger_stalled_[f] = true;
        finger_calm_[f] = 0;
      } else if (finger_stalled_[f] && inst[f] < 0.25 * stall_force_) {
        if (++finger_calm_[f] >= 16) finger_stalled_[f] = false;
      } else {
        finger_calm_[f] = 0;
      }
    }
  }

  void check_finite() const {
    if (!robot_.j_arm.allFinite() || !robot_.j_hand_act.allFinite())
      throw std::runtime_error("simulation fault: robot state is not finite");
    for (const auto& o : objects_) {
      if (!all_finite(o.pose.translation) || !all_finite(o.lin_vel) ||
          !all_finite(o.ang_vel) || !std::isfinite(o.pose.rotation.norm()))
        throw std::runtime_error("simulation fault: object state is not finite");
    }
  }

  SimParams params_;
  RobotParams robot_params_;

  SceneSpec scene_;
  std::vector<RigidObject> objects_;
  int target_index_ = 0;
  uint64_t episode_seed_ = 0;

  RobotState robot_;
  RobotFrame frame_, prev_frame_;
  Vec3 ee_lin_vel_ = Vec3::Zero();
  Vec3 ee_ang_vel_ = Vec3::Zero();
  bool robot_contacts_enabled_ = true;
  bool render_robot_ = true;

  std::vector<std::vector<Vec3>> contact_points_;
  std::vector<Vec3> inertia_diag_;
  std::vector<double> bounding_radius_;
  std::vector<SampledSurface> local_surfaces_;

  GsRepresentation gs_;
  double d_neg_running_min_ = std::numeric_limits<double>::infinity();
  bool fine_latched_ = false;

  ContactReport last_report_;
  int step_count_ = 0;
  double settled_target_z_ = 0.0;
  Vec3 goal_position_ = Vec3::Zero();

  std::map<std::pair<int, int>, Eigen::Vector2d> table_anchors_;
  std::map<std::pair<int, int>, Vec3> keypoint_anchors_;
  std::array<double, 5> finger_load_ = {0, 0, 0, 0, 0};  // newtons
  std::array<bool, 5> finger_stalled_ = {false, false, false, false, false};
  std::array<int, 5> finger_calm_ = {0, 0, 0, 0, 0};
  double stall_force_ = 2.0;                             // newtons
};

// ---------------------------------------------------------------------------
// Scene generation: sequential drops settled by simulation.
// ---------------------------------------------------------------------------

struct SceneGenParams {
  Aabb drop_region{{0.28, -0.12, 0.0}, {0.52, 0.12, 0.30}};
  double drop_height = 0.12;
  double settle_ke_threshold = 2e-5;
  int settle_steps_required = 50;
  int max_settle_steps = 600;
  int max_attempts = 100;
};

/// Drops `n` pool objects one by one and returns the settled layout. Scenes
/// where any object leaves the workspace are resampled (seed + 1), up to
/// `max_attempts` consecutive rejections.
inline SceneSpec generate_scene(const ObjectPool& pool, int n_lo, int n_hi,
                                uint64_t seed, const SimParams& sim,
                                const RobotParams& robot,
                                const SceneGenParams& gen = {}) {
  if (n_lo < 1 || n_hi > 25 || n_lo > n_hi)
    throw std::invalid_argument("scene object count range must be within [1,25]");

  for (int attempt = 0; attempt < gen.max_attempts; ++attempt) {
    const uint64_t attempt_seed = seed + attempt;
    Rng rng(mix_seed(attempt_seed, 0x5ce9e));
    const int n = rng.uniform_int(n_lo, n_hi);

    World world(sim, robot);
    SceneSpec empty;
    empty.seed = attempt_seed;
    world.reset(empty, attempt_seed);
    world.set_robot_contacts_enabled(false);

    SceneSpec scene;
    scene.seed = attempt_seed;
    bool failed = false;

    std::vector<RigidObject> placed;
    for (int i = 0; i < n && !failed; ++i) {
      RigidObject obj = pool.sample_object(rng);
      obj.pose.translation =
          Vec3(rng.uniform(gen.drop_region.min.x(), gen.drop_region.max.x()),
               rng.uniform(gen.drop_region.min.y(), gen.drop_region.max.y()),
               gen.drop_height + obj.shape.bounding_radius());
      // random orientation
      const Vec3 axis = Vec3(rng.normal(), rng.normal(), rng.normal());
      obj.pose.rotation =
          axis.norm() < 1e-9
              ? Quat::Identity()
              : Quat(Eigen::AngleAxisd(rng.uniform(0.0, 2.0 * kPi),
                                       axis.normalized()));
      placed.push_back(obj);

      SceneSpec partial;
      partial.seed = attempt_seed;
      partial.objects = placed;
      world.reset(partial, attempt_seed);
      world.set_robot_contacts_enabled(false);

      int calm = 0;
      int steps = 0;
      while (calm < gen.settle_steps_required) {
        world.step(Action{});
        calm = world.kinetic_energy() < gen.settle_ke_threshold ? calm + 1 : 0;
        if (++steps > gen.max_settle_steps) {
          failed = true;
          break;
        }
      }
      placed = world.objects();
    }
    if (failed) continue;

    // retained only if every object stayed on the tabletop workspace
    bool ok = true;
    for (auto& o : placed) {
      o.lin_vel = Vec3::Zero();
      o.ang_vel = Vec3::Zero();
      if (o.pose.translation.z() <= 0.0 ||
          !sim.workspace.contains(o.pose.translation)) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;

    scene.objects = placed;
    scene.density_class = classify_count(n);
    scene.target_index = static_cast<int>(rng.uniform_index(placed.size()));
    for (size_t i = 0; i < scene.objects.size(); ++i)
      scene.objects[i].is_target = static_cast<int>(i) == scene.target_index;
    return scene;
  }
  throw std::runtime_error(
      "scene generation failed: too many consecutive rejected scenes");
}

}  // namespace cdx
