#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "cdx/reward.hpp"
#include "cdx/rl.hpp"
#include "cdx/world.hpp"

namespace cdx {

/// Observation-space ablation arms.
enum class ReprMode {
  Full,        // d_pos / d_neg displacement features
  NoGs,        // object-center-to-palm vector substitute
  NoNegative,  // d_neg features masked to zero
};

struct EnvSettings {
  SimParams sim;
  RobotParams robot;
  RewardCoefficients reward;
  int stage = 1;
  double force_threshold = 200.0;      // sim force units (stage 3)
  bool safety_terminations = false;    // stage-3 early termination
  int episode_cap = 300;
  bool coarse_masking = true;
  bool end_on_success = false;         // evaluation ends at the lift
  ReprMode repr = ReprMode::Full;
  double target_drop_z = -0.10;        // target fell off: episode failure
  bool random_target = false;          // re-pick the grasp target per episode
};

/// One rollout environment: action mapping, staged rewards, terminations and
/// per-episode bookkeeping around a World.
class GraspEnv {
 public:
  struct StepResult {
    Eigen::VectorXd obs;
    double reward = 0.0;
    bool done = false;
    bool success = false;        // episode-level latch
    SafetyTermination safety = SafetyTermination::None;
    Eigen::VectorXd executed;    // post-mask, post-clamp action (raw units)
    double step_max_force = 0.0;
  };

  GraspEnv(EnvSettings settings,
           std::shared_ptr<const std::vector<SceneSpec>> scenes)
      : settings_(std::move(settings)),
        scenes_(std::move(scenes)),
        world_(settings_.sim, settings_.robot),
        rng_(0) {}

  const EnvSettings& settings() const { return settings_; }
  World& world() { return world_; }
  const World& world() const { return world_; }
  Rng& rng() { return rng_; }

  void set_force_threshold(double f) { settings_.force_threshold = f; }
  void set_stage(int stage) { settings_.stage = stage; }

  void seed_stream(uint64_t seed) { rng_ = Rng(seed); }

  /// Starts a new episode; negative indices pick via the env RNG stream.
  Eigen::VectorXd reset(int scene_index = -1, int target_index = -1) {
    if (scenes_->empty()) throw std::runtime_error("no scenes available");
    const int si =
        scene_index >= 0
            ? scene_index
            : static_cast<int>(rng_.uniform_index(scenes_->size()));
    const SceneSpec& scene = (*scenes_)[si];
    world_.reset(scene, rng_.next_u64());
    int ti = target_index;
    if (ti < 0) {
      ti = settings_.random_target
               ? static_cast<int>(rng_.uniform_index(scene.objects.size()))
               : scene.target_index;
    }
    world_.set_target_index(ti);
    steps_ = 0;
    success_ = false;
    success_step_ = -1;
    episode_max_force_ = 0.0;
    episode_return_ = 0.0;
    nogs_neg_running_min_ = std::numeric_limits<double>::infinity();
    world_.update_gs();
    update_nogs_min();
    return observation();
  }

  /// Raw policy action: first 7 entries scale to arm deltas, last 6 map
  /// linearly from [-1, 1] onto the actuated-joint ranges.
  Action map_action(const Eigen::VectorXd& raw) const {
    Action a;
    a.d_arm = raw.head<kArmDof>() * settings_.robot.arm_delta_max;
    for (int i = 0; i < kHandActDof; ++i) {
      const double u = clampd(raw[kArmDof + i], -1.0, 1.0);
      a.hand_abs[i] = settings_.robot.hand_lower[i] +
                      0.5 * (u + 1.0) *
                          (settings_.robot.hand_upper[i] -
                           settings_.robot.hand_lower[i]);
    }
    return a;
  }

  /// Inverse of map_action for the executed hand target; arm part clamps to
  /// the saturation range.
  Eigen::VectorXd unmap_action(const Action& a) const {
    Eigen::VectorXd raw(kActionDim);
    raw.head<kArmDof>() =
        (a.d_arm / settings_.robot.arm_delta_max).cwiseMax(-1.0).cwiseMin(1.0);
    for (int i = 0; i < kHandActDof; ++i) {
      const double lo = settings_.robot.hand_lower[i];
      const double hi = settings_.robot.hand_upper[i];
      raw[kArmDof + i] = clampd(2.0 * (a.hand_abs[i] - lo) / (hi - lo) - 1.0,
                                -1.0, 1.0);
    }
    return raw;
  }

  StepResult step(const Eigen::VectorXd& raw_action) {
    StepResult out;
    const bool coarse =
        settings_.coarse_masking && world_.coarse_phase_active();
    const Action mapped = map_action(raw_action);
    const Action masked =
        mask_coarse_action(mapped, coarse, settings_.robot.hand_init);
    const ContactReport report = world_.step(masked);
    world_.update_gs();
    update_nogs_min();
    steps_ += 1;

    out.executed = unmap_action(masked);
    out.step_max_force = report.max_fingertip_force;
    episode_max_force_ =
        std::max(episode_max_force_, report.max_fingertip_force);

    out.reward = stage_reward();
    episode_return_ += out.reward;

    if (!success_ && world_.check_success()) {
      success_ = true;
      success_step_ = steps_;
    }
    out.success = success_;

    if (settings_.safety_terminations) {
      out.safety =
          world_.check_safety_termination(report, settings_.force_threshold);
      if (out.safety != SafetyTermination::None) out.done = true;
    }
    if (settings_.end_on_success && success_) out.done = true;
    if (world_.target().pose.translation.z() < settings_.target_drop_z)
      out.done = true;
    if (steps_ >= settings_.episode_cap) out.done = true;

    out.obs = observation();
    return out;
  }

  Eigen::VectorXd observation() const {
    Eigen::VectorXd obs = world_.teacher_observation();
    if (settings_.repr == ReprMode::NoNegative) {
      obs.segment(obs_layout::kDNeg, 33).setZero();
    } else if (settings_.repr == ReprMode::NoGs) {
      // replace geometric features with center-to-palm distance vectors
      obs.segment(obs_layout::kDPos, 66).setZero();
      const Vec3 palm = world_.frame().keypoints.back().position;
      const Vec3 to_target = world_.target().pose.translation - palm;
      obs.segment<3>(obs_layout::kDPos) = to_target;
      obs[obs_layout::kDPos + 3] = to_target.norm();
      double best = std::numeric_limits<double>::infinity();
      Vec3 best_vec = Vec3::Zero();
      for (size_t i = 0; i < world_.objects().size(); ++i) {
        if (static_cast<int>(i) == world_.target_index()) continue;
        const Vec3 v = world_.objects()[i].pose.translation - palm;
        if (v.norm() < best) {
          best = v.norm();
          best_vec = v;
        }
      }
      if (std::isfinite(best)) {
        obs.segment<3>(obs_layout::kDPos + 4) = best_vec;
        obs[obs_layout::kDPos + 7] = best;
      }
    }
    return obs;
  }

  double stage_reward() const {
    const World::RewardSnapshot snap = world_.reward_snapshot();
    RewardInputs in;
    in.p_current = snap.p_current;
    in.p_goal = snap.p_goal;
    in.d_mid = snap.d_mid;
    in.d_pos_min = snap.d_pos_min;
    in.d_neg_min_abs = snap.d_neg_min_abs;
    in.max_fingertip_force = snap.max_fingertip_force;
    if (settings_.repr == ReprMode::NoGs) {
      // the ablated representation also feeds the reward distances
      const Vec3 palm = world_.frame().keypoints.back().position;
      in.d_pos_min = (world_.target().pose.translation - palm).norm();
      in.d_neg_min_abs =
          std::isfinite(nogs_neg_running_min_) ? nogs_neg_running_min_ : 0.0;
    } else if (settings_.repr == ReprMode::NoNegative) {
      in.d_neg_min_abs = 0.0;
    }
    switch (settings_.stage) {
      case 1:
        return reward_stage1(in, settings_.reward);
      case 2:
        return reward_stage2(in, settings_.reward);
      default:
        return reward_stage3(in, settings_.reward, settings_.force_threshold);
    }
  }

  int steps() const { return steps_; }
  bool episode_success() const { return success_; }
  int success_step() const { return success_step_; }
  double episode_max_force() const { return episode_max_force_; }
  double episode_return() const { return episode_return_; }

 private:
  void update_nogs_min() {
    if (settings_.repr != ReprMode::NoGs) return;
    const Vec3 palm = world_.frame().keypoints.back().position;
    for (size_t i = 0; i < world_.objects().size(); ++i) {
      if (static_cast<int>(i) == world_.target_index()) continue;
      nogs_neg_running_min_ =
          std::min(nogs_neg_running_min_,
                   (world_.objects()[i].pose.translation - palm).norm());
    }
  }

  EnvSettings settings_;
  std::shared_ptr<const std::vector<SceneSpec>> scenes_;
  World world_;
  Rng rng_;
  int steps_ = 0;
  bool success_ = false;
  int success_step_ = -1;
  double episode_max_force_ = 0.0;
  double episode_return_ = 0.0;
  double nogs_neg_running_min_ = std::numeric_limits<double>::infinity();
};

}  // namespace cdx
