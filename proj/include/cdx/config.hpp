#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "cdx/curriculum.hpp"
#include "cdx/reward.hpp"
#include "cdx/rl.hpp"
#include "cdx/scene.hpp"
#include "cdx/world.hpp"

namespace cdx {

inline constexpr const char* kVersionString = "cdx-0.1.0";

/// All tunables, grouped by module. Every constant ships with its default in
/// this one place; user configs may override any subset but cannot introduce
/// unknown keys.
inline Json default_config() {
  return Json{
      {"sim",
       {{"gravity", 9.81},
        {"control_dt", 1.0 / 30.0},
        {"substeps", 8},
        {"contact_stiffness", 600.0},
        {"contact_damping", 20.0},
        {"contact_depth_cap", 0.003},
        {"friction_mu", 0.7},
        {"tangent_stiffness", 400.0},
        {"tangent_damping", 4.0},
        {"keypoint_stiffness", 400.0},
        {"keypoint_depth_cap", 0.010},
        {"lin_damping", 0.25},
        {"ang_damping", 1.2},
        {"force_unit_scale", 60.0},
        {"success_lift", 0.1},
        {"penetration_depth", 0.01},
        {"coarse_distance", 0.08},
        {"goal_lift", 0.2},
        {"n_pos_samples", 200},
        {"n_neg_samples", 50},
        {"workspace_min", {0.10, -0.30, 0.0}},
        {"workspace_max", {0.70, 0.30, 0.60}},
        {"camera",
         {{"position", {0.95, 0.0, 0.45}},
          {"look_at", {0.40, 0.0, 0.05}},
          {"fov_y_deg", 58.0},
          {"width", 96},
          {"height", 72}}},
        {"scene_gen",
         {{"drop_min", {0.28, -0.12}},
          {"drop_max", {0.52, 0.12}},
          {"drop_height", 0.12},
          {"settle_ke_threshold", 2e-5},
          {"settle_steps_required", 50},
          {"max_settle_steps", 600},
          {"max_attempts", 100}}},
        {"object_pool",
         {{"spheres", true},
          {"boxes", true},
          {"cylinders", true},
          {"sphere_r_min", 0.022},
          {"sphere_r_max", 0.032},
          {"box_h_min", 0.018},
          {"box_h_max", 0.032},
          {"cyl_r_min", 0.018},
          {"cyl_r_max", 0.028},
          {"cyl_h_min", 0.020},
          {"cyl_h_max", 0.035},
          {"density", 500.0},
          {"mass_min", 0.05},
          {"mass_max", 0.12}}},
        {"robot",
         {{"arm_delta_max", 0.03},
          {"hand_rate_max", 0.08},
          {"coupling_ratio", 0.8},
          {"home_arm", {0.0, 0.3381, 0.0, 1.5380, 0.0, 1.2655, 0.0}},
          {"hand_init", {0.25, 0.25, 0.25, 0.25, 0.25, 0.0}}}}}},
      {"reward",
       {{"c1", 1.0},
        {"c2", 2.0},
        {"c3", 5.0},
        {"c4", 1.0},
        {"c5", 10.0},
        {"c6", 2.0},
        {"d_ref", 0.2},
        {"literal_dpos_term", false},
        {"literal_dmid_term", false}}},
      {"curriculum",
       {{"f0", 200.0},
        {"f_final", 50.0},
        {"delta_f", 5.0},
        {"window", 5},
        {"w_bar", 0.85},
        {"delta_t_min", 50},
        {"eval_interval", 10},
        {"gate_stage1", 0.80},
        {"gate_stage2", 0.70}}},
      {"ppo",
       {{"samples_per_update", 4096},
        {"minibatch_count", 4},
        {"opt_epochs", 5},
        {"rollout_length", 8},
        {"hidden", {1024, 512, 256}},
        {"clip_range", 0.2},
        {"max_grad_norm", 1.0},
        {"learning_rate", 3e-4},
        {"gamma", 0.99},
        {"gae_lambda", 0.95},
        {"desired_kl", 0.02},
        {"ent_coef", 0.0},
        {"value_coef", 1.0},
        {"init_noise_std", 0.8},
        {"obs_clip", 10.0},
        {"episode_cap", 300},
        {"max_iterations", 2000},
        {"eval_episodes", 32},
        {"checkpoint_interval", 500},
        {"stage3_iterations", 600}}},
      {"distill",
       {{"n_demos", 2000},
        {"collect_classes", {"single"}},
        {"horizon", 4},
        {"n_obs_steps", 2},
        {"n_action_steps", 1},
        {"encoder_widths", {128, 256, 384}},
        {"encoder_out_dim", 64},
        {"encoder_points", 256},
        {"head_hidden", {512, 512}},
        {"temb_dim", 32},
        {"diffusion_steps_train", 100},
        {"diffusion_steps_infer", 10},
        {"ema_power", 0.75},
        {"ema_max", 0.9999},
        {"learning_rate", 1e-4},
        {"beta1", 0.95},
        {"beta2", 0.999},
        {"weight_decay", 1e-6},
        {"warmup_steps", 500},
        {"batch_size", 120},
        {"train_steps", 3000}}},
      {"eval",
       {{"max_steps", 150},
        {"sr_times", {20.0, 40.0, 60.0}},
        {"t_max", 60.0},
        {"guards",
         {{"enabled", false},
          {"torque_success_threshold", 0.5},
          {"ee_force_threshold", 300.0},
          {"script_steps", 20},
          {"lift_delta", 0.02}}},
        {"three_failure_stop", true}}}};
}

namespace detail {

inline void validate_against(const Json& user, const Json& defaults,
                             const std::string& path) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key_path =
        path.empty() ? it.key() : path + "." + it.key();
    if (!defaults.contains(it.key()))
      throw std::runtime_error("unknown config key: " + key_path);
    const Json& dv = defaults.at(it.key());
    const Json& uv = it.value();
    if (dv.is_object()) {
      if (!uv.is_object())
        throw std::runtime_error("config key must be an object: " + key_path);
      validate_against(uv, dv, key_path);
    } else if (dv.is_array() != uv.is_array()) {
      throw std::runtime_error("config type mismatch at: " + key_path);
    } else if (dv.is_number() && !uv.is_number()) {
      throw std::runtime_error("config type mismatch at: " + key_path);
    } else if (dv.is_boolean() && !uv.is_boolean()) {
      throw std::runtime_error("config type mismatch at: " + key_path);
    } else if (dv.is_string() && !uv.is_string()) {
      throw std::runtime_error("config type mismatch at: " + key_path);
    }
  }
}

inline void deep_merge(Json& base, const Json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) &&
        base.at(it.key()).is_object()) {
      deep_merge(base.at(it.key()), it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

inline Vec3 vec3_from(const Json& j) {
  return Vec3(j.at(0), j.at(1), j.at(2));
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() : root_(default_config()) {}

  static RunConfig from_json(const Json& user) {
    detail::validate_against(user, default_config(), "");
    RunConfig cfg;
    detail::deep_merge(cfg.root_, user);
    return cfg;
  }

  static RunConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config file: " + path);
    Json j;
    f >> j;
    return from_json(j);
  }

  const Json& json() const { return root_; }

  /// FNV-1a over the canonical dump; embedded in every output artifact.
  std::string hash() const {
    const std::string s = root_.dump();
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return std::string(buf);
  }

  SimParams sim() const {
    const Json& j = root_.at("sim");
    SimParams p;
    p.gravity = j.at("gravity");
    p.control_dt = j.at("control_dt");
    p.substeps = j.at("substeps");
    p.contact_stiffness = j.at("contact_stiffness");
    p.contact_damping = j.at("contact_damping");
    p.contact_depth_cap = j.at("contact_depth_cap");
    p.friction_mu = j.at("friction_mu");
    p.tangent_stiffness = j.at("tangent_stiffness");
    p.tangent_damping = j.at("tangent_damping");
    p.keypoint_stiffness = j.at("keypoint_stiffness");
    p.keypoint_depth_cap = j.at("keypoint_depth_cap");
    p.lin_damping = j.at("lin_damping");
    p.ang_damping = j.at("ang_damping");
    p.force_unit_scale = j.at("force_unit_scale");
    p.success_lift = j.at("success_lift");
    p.penetration_depth = j.at("penetration_depth");
    p.coarse_distance = j.at("coarse_distance");
    p.goal_lift = j.at("goal_lift");
    p.n_pos_samples = j.at("n_pos_samples");
    p.n_neg_samples = j.at("n_neg_samples");
    p.workspace.min = detail::vec3_from(j.at("workspace_min"));
    p.workspace.max = detail::vec3_from(j.at("workspace_max"));
    return p;
  }

  RobotParams robot() const {
    const Json& j = root_.at("sim").at("robot");
    RobotParams p;
    p.arm_delta_max = j.at("arm_delta_max");
    p.hand_rate_max = j.at("hand_rate_max");
    p.coupling_ratio = j.at("coupling_ratio");
    for (int i = 0; i < kArmDof; ++i) p.home_arm[i] = j.at("home_arm").at(i);
    for (int i = 0; i < kHandActDof; ++i)
      p.hand_init[i] = j.at("hand_init").at(i);
    return p;
  }

  CameraParams camera() const {
    const Json& j = root_.at("sim").at("camera");
    CameraParams c;
    c.position = detail::vec3_from(j.at("position"));
    c.look_at = detail::vec3_from(j.at("look_at"));
    c.fov_y_deg = j.at("fov_y_deg");
    c.width = j.at("width");
    c.height = j.at("height");
    return c;
  }

  SceneGenParams scene_gen() const {
    const Json& j = root_.at("sim").at("scene_gen");
    SceneGenParams p;
    p.drop_region.min =
        Vec3(j.at("drop_min").at(0), j.at("drop_min").at(1), 0.0);
    p.drop_region.max =
        Vec3(j.at("drop_max").at(0), j.at("drop_max").at(1), 0.30);
    p.drop_height = j.at("drop_height");
    p.settle_ke_threshold = j.at("settle_ke_threshold");
    p.settle_steps_required = j.at("settle_steps_required");
    p.max_settle_steps = j.at("max_settle_steps");
    p.max_attempts = j.at("max_attempts");
    return p;
  }

  ObjectPool object_pool() const {
    const Json& j = root_.at("sim").at("object_pool");
    ObjectPool p;
    p.spheres = j.at("spheres");
    p.boxes = j.at("boxes");
    p.cylinders = j.at("cylinders");
    p.sphere_r_min = j.at("sphere_r_min");
    p.sphere_r_max = j.at("sphere_r_max");
    p.box_h_min = j.at("box_h_min");
    p.box_h_max = j.at("box_h_max");
    p.cyl_r_min = j.at("cyl_r_min");
    p.cyl_r_max = j.at("cyl_r_max");
    p.cyl_h_min = j.at("cyl_h_min");
    p.cyl_h_max = j.at("cyl_h_max");
    p.density = j.at("density");
    p.mass_min = j.at("mass_min");
    p.mass_max = j.at("mass_max");
    return p;
  }

  RewardCoefficients reward() const {
    const Json& j = root_.at("reward");
    RewardCoefficients c;
    c.c1 = j.at("c1");
    c.c2 = j.at("c2");
    c.c3 = j.at("c3");
    c.c4 = j.at("c4");
    c.c5 = j.at("c5");
    c.c6 = j.at("c6");
    c.d_ref = j.at("d_ref");
    c.literal_dpos_term = j.at("literal_dpos_term");
    c.literal_dmid_term = j.at("literal_dmid_term");
    return c;
  }

  CurriculumParams curriculum() const {
    const Json& j = root_.at("curriculum");
    CurriculumParams p;
    p.f0 = j.at("f0");
    p.f_final = j.at("f_final");
    p.delta_f = j.at("delta_f");
    p.window = j.at("window");
    p.w_bar = j.at("w_bar");
    p.delta_t_min = j.at("delta_t_min");
    p.eval_interval = j.at("eval_interval");
    p.gate_stage1 = j.at("gate_stage1");
    p.gate_stage2 = j.at("gate_stage2");
    return p;
  }

  PpoParams ppo() const {
    const Json& j = root_.at("ppo");
    PpoParams p;
    p.samples_per_update = j.at("samples_per_update");
    p.minibatch_count = j.at("minibatch_count");
    p.opt_epochs = j.at("opt_epochs");
    p.rollout_length = j.at("rollout_length");
    p.hidden = j.at("hidden").get<std::vector<int>>();
    p.clip_range = j.at("clip_range");
    p.max_grad_norm = j.at("max_grad_norm");
    p.learning_rate = j.at("learning_rate");
    p.gamma = j.at("gamma");
    p.gae_lambda = j.at("gae_lambda");
    p.desired_kl = j.at("desired_kl");
    p.ent_coef = j.at("ent_coef");
    p.value_coef = j.at("value_coef");
    p.init_noise_std = j.at("init_noise_std");
    p.obs_clip = j.at("obs_clip");
    return p;
  }

 private:
  Json root_;
};

}  // namespace cdx
