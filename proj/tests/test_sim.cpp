#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "cdx/config.hpp"
#include "cdx/env.hpp"
#include "cdx/robot.hpp"
#include "cdx/world.hpp"

using namespace cdx;
using Catch::Approx;

namespace {

SceneSpec single_sphere_scene(double r = 0.03, const Vec3& xy = Vec3(0.42, 0.0, 0.0)) {
  SceneSpec scene;
  RigidObject o;
  o.shape = Shape::sphere(r);
  o.pose.translation = Vec3(xy.x(), xy.y(), r);
  o.mass = 0.08;
  o.is_target = true;
  scene.objects.push_back(o);
  scene.target_index = 0;
  scene.density_class = DensityClass::Single;
  scene.seed = 5;
  return scene;
}

/// Drives the arm toward an IK joint target with clamped deltas and a hand
/// curl target; the scripted oracle policy used across sim/eval tests.
Action scripted_step(const World& world, const ArmVec& arm_target,
                     double curl) {
  Action a;
  a.d_arm = arm_target - world.robot().j_arm;
  a.hand_abs << curl, curl, curl, curl, curl, 0.0;
  return a;
}

}  // namespace

TEST_CASE("home pose matches the designed end-effector location") {
  RobotParams p;
  const RobotFrame f = forward_kinematics(p, home_state(p));
  REQUIRE(f.ee.translation.x() == Approx(0.36).margin(0.005));
  REQUIRE(std::abs(f.ee.translation.y()) < 1e-9);
  REQUIRE(f.ee.translation.z() == Approx(0.24).margin(0.005));
  const Vec3 normal = f.ee.rotate(Vec3(0, 0, 1));
  REQUIRE(normal.z() == Approx(-1.0).margin(1e-3));
}

TEST_CASE("arm IK reproduces reachable poses") {
  RobotParams p;
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const Vec3 target(rng.uniform(0.25, 0.50), rng.uniform(-0.2, 0.2),
                      rng.uniform(0.08, 0.30));
    ArmVec q;
    if (!arm_ik_down(p, target, q)) continue;
    RobotState s;
    s.j_arm = q;
    const RobotFrame f = forward_kinematics(p, s);
    REQUIRE((f.ee.translation - target).norm() < 1e-9);
    const Vec3 normal = f.ee.rotate(Vec3(0, 0, 1));
    REQUIRE(normal.z() == Approx(-1.0).margin(1e-9));
  }
}

TEST_CASE("zero action leaves robot unchanged and forces zero") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  world.reset(single_sphere_scene(), 1);
  const ArmVec arm_before = world.robot().j_arm;
  Action zero;
  zero.hand_abs = cfg.robot().hand_init;
  const auto report = world.step(zero);
  REQUIRE((world.robot().j_arm - arm_before).norm() == 0.0);
  REQUIRE(report.max_fingertip_force == 0.0);
  REQUIRE(report.ee_force == 0.0);
}

TEST_CASE("free sphere settles and kinetic energy decays") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  SceneSpec scene = single_sphere_scene();
  scene.objects[0].pose.translation.z() = 0.15;  // dropped from above
  world.reset(scene, 1);
  world.set_robot_contacts_enabled(false);
  Action zero;
  for (int i = 0; i < 500; ++i) world.step(zero);
  REQUIRE(world.kinetic_energy() < 1e-4);
  REQUIRE(world.objects()[0].pose.translation.z() ==
          Approx(0.03).margin(2e-3));
}

TEST_CASE("sphere resting height equals radius") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  world.reset(single_sphere_scene(), 1);
  world.set_robot_contacts_enabled(false);
  Action zero;
  for (int i = 0; i < 200; ++i) world.step(zero);
  REQUIRE(world.objects()[0].pose.translation.z() ==
          Approx(0.03).margin(1.5e-3));
}

TEST_CASE("no tunneling for small fast objects") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  SceneSpec scene;
  RigidObject o;
  o.shape = Shape::box(0.01, 0.01, 0.01);  // 2 cm cube
  o.pose.translation = Vec3(0.4, 0.0, 0.3);
  o.lin_vel = Vec3(0, 0, -2.0);  // max rated speed
  o.mass = 0.05;
  scene.objects.push_back(o);
  world.reset(scene, 1);
  world.set_robot_contacts_enabled(false);
  Action zero;
  for (int i = 0; i < 300; ++i) world.step(zero);
  const double z = world.objects()[0].pose.translation.z();
  REQUIRE(z > 0.0);
  REQUIRE(z < 0.05);
}

TEST_CASE("penalty force increases with penetration") {
  RunConfig cfg;
  const RobotParams rp = cfg.robot();

  // place the index fingertip at a controlled depth above a sphere resting
  // under it; deeper penetration must report a larger fingertip z-force
  auto force_at_depth = [&](double depth) {
    World world(cfg.sim(), cfg.robot());
    ArmVec q;
    REQUIRE(arm_ik_down(rp, Vec3(0.45, 0.0, 0.20), q));
    RobotState s;
    s.j_arm = q;
    s.j_hand_act << 1.0, 1.0, 1.0, 1.0, 1.0, 0.0;
    s.j_hand_under = rp.coupling_ratio * s.j_hand_act;

    SceneSpec placeholder = single_sphere_scene();
    World probe(cfg.sim(), cfg.robot());
    probe.reset(placeholder, 1);
    probe.set_robot_state(s);
    const Vec3 tip = probe.frame().keypoints[0].position;

    const double r = 0.03, tip_r = rp.tip_keypoint_radius;
    // sphere directly under the tip path; lower the EE by the depth excess
    SceneSpec scene = single_sphere_scene(r, Vec3(tip.x(), tip.y(), 0.0));
    const double contact_z = r + r + tip_r;  // tip center height at touch
    ArmVec q2;
    REQUIRE(arm_ik_down(rp, Vec3(0.45, 0.0, 0.20 - (tip.z() - contact_z) - depth),
                        q2));
    RobotState s2 = s;
    s2.j_arm = q2;
    world.reset(scene, 1);
    world.set_robot_state(s2);
    Action hold;
    hold.hand_abs = s.j_hand_act;
    return world.step(hold).max_fingertip_force;
  };

  const double shallow = force_at_depth(0.002);
  const double mid = force_at_depth(0.006);
  const double deep = force_at_depth(0.010);
  REQUIRE(shallow > 0.0);
  REQUIRE(mid > shallow);
  REQUIRE(deep > mid);
}

TEST_CASE("step is deterministic") {
  RunConfig cfg;
  const SceneSpec scene = single_sphere_scene();
  auto run = [&] {
    World world(cfg.sim(), cfg.robot());
    world.reset(scene, 7);
    Rng rng(3);
    Eigen::VectorXd trace(0);
    std::vector<double> values;
    for (int i = 0; i < 120; ++i) {
      Action a;
      for (int j = 0; j < kArmDof; ++j) a.d_arm[j] = rng.uniform(-0.02, 0.02);
      for (int j = 0; j < kHandActDof; ++j)
        a.hand_abs[j] = rng.uniform(0.0, 1.5);
      const auto rep = world.step(a);
      values.push_back(world.objects()[0].pose.translation.x());
      values.push_back(world.objects()[0].pose.translation.z());
      values.push_back(rep.max_fingertip_force);
    }
    return values;
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a == b);  // bit-identical trajectories
}

TEST_CASE("check_success thresholds at exactly 0.1 m lift") {
  RunConfig cfg;
  auto lift_to = [&](double dz) {
    World w(cfg.sim(), cfg.robot());
    w.reset(single_sphere_scene(), 1);
    w.mutable_objects()[0].pose.translation.z() += dz;
    return w.check_success();
  };
  REQUIRE_FALSE(lift_to(0.0));
  REQUIRE_FALSE(lift_to(0.099));
  REQUIRE(lift_to(0.1));
  REQUIRE(lift_to(0.15));
}

TEST_CASE("safety termination classification") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  world.reset(single_sphere_scene(), 1);
  ContactReport report;
  report.fingertip_forces_z << 10, 10, 10, 10, 10;
  report.max_fingertip_force = 10;
  report.fingertip_table_heights << 0.1, 0.1, 0.1, 0.1, 0.1;
  REQUIRE(world.check_safety_termination(report, 50.0) ==
          SafetyTermination::None);
  report.max_fingertip_force = 201.0;
  REQUIRE(world.check_safety_termination(report, 200.0) ==
          SafetyTermination::ForceViolation);
  report.max_fingertip_force = 200.0;  // strict inequality
  REQUIRE(world.check_safety_termination(report, 200.0) ==
          SafetyTermination::None);
  report.fingertip_table_heights[2] = -0.02;
  REQUIRE(world.check_safety_termination(report, 200.0) ==
          SafetyTermination::TablePenetration);
  REQUIRE_THROWS_AS(world.check_safety_termination(report, 0.0),
                    std::invalid_argument);
}

TEST_CASE("coarse phase latches once the hand gets close") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  world.reset(single_sphere_scene(0.03, Vec3(0.42, 0.0, 0.0)), 1);
  world.update_gs();
  REQUIRE(world.coarse_phase_active());  // home pose is far away

  // move the hand near the target: fingertips within 0.08 m
  RobotState s = world.robot();
  ArmVec q;
  REQUIRE(arm_ik_down(world.robot_params(), Vec3(0.42, -0.0225, 0.12), q));
  s.j_arm = q;
  world.set_robot_state(s);
  world.update_gs();
  REQUIRE_FALSE(world.coarse_phase_active());

  // retreat: the latch holds
  RobotState far = world.robot();
  far.j_arm = world.robot_params().home_arm;
  far.j_arm[1] -= 0.4;
  world.set_robot_state(far);
  world.update_gs();
  REQUIRE_FALSE(world.coarse_phase_active());
}

TEST_CASE("scripted pinch grasp lifts the target (success oracle)") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  const SceneSpec scene = single_sphere_scene(0.03, Vec3(0.42, 0.01, 0.0));
  world.reset(scene, 11);

  const Vec3 obj = world.target().pose.translation;
  // the grasp midpoint sits 0.030 m off the EE origin along local y
  const Vec3 grasp_xy(obj.x(), obj.y() - 0.030, 0.0);

  ArmVec q_high, q_low;
  REQUIRE(arm_ik_down(world.robot_params(),
                      grasp_xy + Vec3(0, 0, 0.18), q_high));
  REQUIRE(arm_ik_down(world.robot_params(),
                      grasp_xy + Vec3(0, 0, obj.z() + 0.080), q_low));

  // approach from above, then descend with fingers open
  for (int i = 0; i < 40; ++i) world.step(scripted_step(world, q_high, 0.25));
  for (int i = 0; i < 40; ++i) world.step(scripted_step(world, q_low, 0.25));
  // close the pinch; fingers stall on the object
  double peak_force = 0.0;
  for (int i = 0; i < 25; ++i) {
    const auto report = world.step(scripted_step(world, q_low, 1.45));
    peak_force = std::max(peak_force, report.max_fingertip_force);
  }
  REQUIRE(peak_force > 0.0);
  // straight vertical lift via incremental IK
  double z = obj.z() + 0.080;
  for (int i = 0; i < 40; ++i) {
    z = std::min(z + 0.006, 0.30);
    ArmVec q;
    REQUIRE(arm_ik_down(world.robot_params(), grasp_xy + Vec3(0, 0, z), q));
    world.step(scripted_step(world, q, 1.45));
  }

  REQUIRE(world.target().pose.translation.z() - world.settled_target_z() >
          0.1);
  REQUIRE(world.check_success());
}

TEST_CASE("teacher observation layout follows the span table") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  world.reset(single_sphere_scene(), 1);
  world.update_gs();
  const Eigen::VectorXd obs = world.teacher_observation();
  REQUIRE(obs.size() == kTeacherObsDim);

  const RobotState& s = world.robot();
  for (int i = 0; i < 7; ++i) REQUIRE(obs[i] == s.j_arm[i]);
  for (int i = 0; i < 6; ++i) REQUIRE(obs[7 + i] == s.j_hand_act[i]);
  for (int i = 0; i < 6; ++i) REQUIRE(obs[13 + i] == s.j_hand_under[i]);

  const RobotFrame& f = world.frame();
  REQUIRE(obs.segment<3>(obs_layout::kEePos).isApprox(f.ee.translation));
  const Vec3 mid = f.grasp_midpoint();
  const Vec3 obj = world.target().pose.translation;
  REQUIRE(obs.segment<3>(obs_layout::kObjToMid).isApprox(Vec3(mid - obj)));
  REQUIRE(obs.segment<3>(obs_layout::kMid).isApprox(mid));
  REQUIRE(obs.segment<3>(obs_layout::kObjPose).isApprox(obj));
  REQUIRE(obs.segment<3>(obs_layout::kGoalPose)
              .isApprox(Vec3(obj + Vec3(0, 0, 0.2))));
  // flattened d_pos/d_neg spans, keypoint-major
  const auto& gs = world.gs();
  for (int k = 0; k < kHandKeypoints; ++k) {
    REQUIRE(obs.segment<3>(obs_layout::kDPos + 3 * k)
                .isApprox(gs.d_pos[k]));
    REQUIRE(obs[obs_layout::kDNeg + 3 * k] == gs.d_neg[k].x());
  }
  // single-object scene: d_neg zero-padded
  REQUIRE(obs.segment(obs_layout::kDNeg, 33).norm() == 0.0);
  // fingertip heights at rest are positive
  for (int i = 0; i < 5; ++i)
    REQUIRE(obs[obs_layout::kFingerHeights + i] > 0.0);
}

TEST_CASE("render: empty scene yields only table hits") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  SceneSpec empty;
  empty.seed = 1;
  world.reset(empty, 1);
  // stow the arm out of view
  world.set_render_robot(false);
  CameraParams cam = cfg.camera();
  cam.width = 32;
  cam.height = 24;
  const auto cloud = world.render_partial_cloud(cam);
  REQUIRE(cloud.size() > 0);
  const RigidTransform pose = cam.pose();
  for (int i = 0; i < cloud.size(); ++i) {
    const Vec3 w = pose.apply(cloud.point(i));
    REQUIRE(std::abs(w.z()) < 1e-6);  // every hit lies on the table
    REQUIRE(cloud.mask(i) == 0.0);
  }
}

TEST_CASE("render: lone target on table is masked and contained") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  world.reset(single_sphere_scene(0.04, Vec3(0.40, 0.0, 0.0)), 1);
  RobotState s = world.robot();
  s.j_arm.setZero();
  world.set_robot_state(s);
  CameraParams cam = cfg.camera();
  const auto cloud = world.render_partial_cloud(cam);
  const RigidTransform pose = cam.pose();
  int masked = 0;
  for (int i = 0; i < cloud.size(); ++i) {
    if (cloud.mask(i) == 1.0) {
      ++masked;
      const Vec3 w = pose.apply(cloud.point(i));
      REQUIRE((w - world.target().pose.translation).norm() <
              0.04 + 1e-6);
    }
  }
  REQUIRE(masked > 10);
}

TEST_CASE("render: fully occluded target has no masked points") {
  RunConfig cfg;
  World world(cfg.sim(), cfg.robot());
  SceneSpec scene;
  RigidObject target;
  target.shape = Shape::sphere(0.02);
  target.pose.translation = Vec3(0.40, 0.0, 0.02);
  target.is_target = true;
  scene.objects.push_back(target);
  RigidObject wall;  // large box between camera and target
  wall.shape = Shape::box(0.02, 0.2, 0.2);
  wall.pose.translation = Vec3(0.55, 0.0, 0.2);
  scene.objects.push_back(wall);
  scene.target_index = 0;
  world.reset(scene, 1);
  RobotState s = world.robot();
  s.j_arm.setZero();
  world.set_robot_state(s);
  const auto cloud = world.render_partial_cloud(cfg.camera());
  for (int i = 0; i < cloud.size(); ++i) REQUIRE(cloud.mask(i) == 0.0);
}

TEST_CASE("scene generation: single sphere rests at its radius") {
  RunConfig cfg;
  ObjectPool pool;
  pool.boxes = false;
  pool.cylinders = false;
  const SceneSpec scene =
      generate_scene(pool, 1, 1, 42, cfg.sim(), cfg.robot(), cfg.scene_gen());
  REQUIRE(scene.objects.size() == 1);
  REQUIRE(scene.density_class == DensityClass::Single);
  const double r = scene.objects[0].shape.dims.x();
  REQUIRE(scene.objects[0].pose.translation.z() == Approx(r).margin(2e-3));
}

TEST_CASE("scene generation: sparse class count and determinism") {
  RunConfig cfg;
  ObjectPool pool;
  const SceneSpec a =
      generate_scene(pool, 4, 8, 7, cfg.sim(), cfg.robot(), cfg.scene_gen());
  REQUIRE(a.density_class == DensityClass::Sparse);
  REQUIRE(a.objects.size() >= 4);
  REQUIRE(a.objects.size() <= 8);
  for (const auto& o : a.objects) {
    REQUIRE(o.pose.translation.z() > 0.0);
    REQUIRE(cfg.sim().workspace.contains(o.pose.translation));
  }
  const SceneSpec b =
      generate_scene(pool, 4, 8, 7, cfg.sim(), cfg.robot(), cfg.scene_gen());
  REQUIRE(scene_to_json(a).dump() == scene_to_json(b).dump());
}

TEST_CASE("scene generation failure reported for infeasible configs") {
  RunConfig cfg;
  ObjectPool pool;
  SceneGenParams gen = cfg.scene_gen();
  gen.max_attempts = 3;
  // a drop region outside the workspace guarantees rejection
  gen.drop_region = Aabb{{2.0, 2.0, 0.0}, {2.1, 2.1, 0.3}};
  REQUIRE_THROWS_AS(
      generate_scene(pool, 2, 3, 1, cfg.sim(), cfg.robot(), gen),
      std::runtime_error);
}
