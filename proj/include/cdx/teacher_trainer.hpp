#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "cdx/checkpoint.hpp"
#include "cdx/config.hpp"
#include "cdx/curriculum.hpp"
#include "cdx/env.hpp"
#include "cdx/metrics.hpp"
#include "cdx/rl.hpp"
#include "cdx/threads.hpp"

namespace cdx {

// ---------------------------------------------------------------------------
// Teacher checkpoint plumbing.
// ---------------------------------------------------------------------------

inline void add_policy_tensors(Checkpoint& ckpt, GaussianPolicy<float>& policy,
                               nn::Adam<float>& adam) {
  auto params = policy.params();
  params.for_each_named([&](const std::string& name, const float* data,
                            Eigen::Index rows, Eigen::Index cols) {
    ckpt.add_tensor(name, {rows, cols},
                    std::vector<float>(data, data + rows * cols));
  });
  char buf[32];
  for (size_t i = 0; i < adam.moments_m().size(); ++i) {
    std::snprintf(buf, sizeof(buf), "adam_m.%03zu", i);
    const auto& m = adam.moments_m()[i];
    ckpt.add_tensor(buf, {m.size()},
                    std::vector<float>(m.data(), m.data() + m.size()));
    std::snprintf(buf, sizeof(buf), "adam_v.%03zu", i);
    const auto& v = adam.moments_v()[i];
    ckpt.add_tensor(buf, {v.size()},
                    std::vector<float>(v.data(), v.data() + v.size()));
  }
}

inline void load_policy_tensors(const Checkpoint& ckpt,
                                GaussianPolicy<float>& policy) {
  auto params = policy.params();
  for (const auto& [name, sd] : ckpt.tensors) {
    if (name.rfind("adam_", 0) == 0) continue;
    if (!params.load_named(name, sd.second.data(), sd.second.size()))
      throw std::runtime_error("checkpoint tensor mismatch: " + name);
  }
}

inline void load_adam_moments(const Checkpoint& ckpt, nn::Adam<float>& adam,
                              nn::ParamSet<float>& params) {
  adam.moments_m().clear();
  adam.moments_v().clear();
  size_t slot = 0;
  char buf[32];
  while (true) {
    std::snprintf(buf, sizeof(buf), "adam_m.%03zu", slot);
    if (!ckpt.has_tensor(buf)) break;
    const auto& m = ckpt.tensor(buf);
    adam.moments_m().push_back(
        Eigen::Map<const nn::Vector<float>>(m.data(), m.size()));
    std::snprintf(buf, sizeof(buf), "adam_v.%03zu", slot);
    const auto& v = ckpt.tensor(buf);
    adam.moments_v().push_back(
        Eigen::Map<const nn::Vector<float>>(v.data(), v.size()));
    ++slot;
  }
  (void)params;
}

inline Json normalizer_to_json(const RunningNormalizer& norm) {
  return Json{{"count", norm.count()},
              {"mean", std::vector<double>(norm.mean().data(),
                                           norm.mean().data() + norm.dim())},
              {"m2", std::vector<double>(norm.m2().data(),
                                         norm.m2().data() + norm.dim())}};
}

inline RunningNormalizer normalizer_from_json(const Json& j) {
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto m2 = j.at("m2").get<std::vector<double>>();
  RunningNormalizer norm(static_cast<int>(mean.size()));
  norm.load(j.at("count").get<double>(),
            Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size()),
            Eigen::Map<const Eigen::VectorXd>(m2.data(), m2.size()));
  return norm;
}

inline Json curriculum_to_json(const CurriculumState& s) {
  return Json{{"stage", s.stage},
              {"f", s.f},
              {"delta_t", s.delta_t},
              {"window", std::vector<double>(s.success_window.begin(),
                                             s.success_window.end())}};
}

inline CurriculumState curriculum_from_json(const Json& j) {
  CurriculumState s;
  s.stage = j.at("stage");
  s.f = j.at("f");
  s.delta_t = j.at("delta_t");
  for (double w : j.at("window").get<std::vector<double>>())
    s.success_window.push_back(w);
  return s;
}

// ---------------------------------------------------------------------------
// Deterministic batched policy evaluation.
// ---------------------------------------------------------------------------

struct QuickEvalResult {
  double success_rate = 0.0;
  double mean_max_force = 0.0;  // mean over episodes of episode max
};

/// Runs `episodes` deterministic (mean-action) episodes in lockstep across
/// preconstructed environments; scenes cycle in order.
inline QuickEvalResult evaluate_policy(
    GaussianPolicy<float>& policy, const RunningNormalizer& norm,
    double obs_clip, const EnvSettings& base_settings,
    std::shared_ptr<const std::vector<SceneSpec>> scenes, int episodes,
    uint64_t seed) {
  EnvSettings settings = base_settings;
  settings.end_on_success = true;
  settings.safety_terminations = false;

  std::vector<std::unique_ptr<GraspEnv>> envs;
  envs.reserve(episodes);
  for (int i = 0; i < episodes; ++i) {
    envs.push_back(std::make_unique<GraspEnv>(settings, scenes));
    envs[i]->seed_stream(mix_seed(seed, 0xe7a1, i));
    envs[i]->reset(i % static_cast<int>(scenes->size()));
  }
  std::vector<uint8_t> done(episodes, 0);
  std::vector<Eigen::VectorXd> obs(episodes);
  for (int i = 0; i < episodes; ++i) obs[i] = envs[i]->observation();

  const int obs_dim = policy.obs_dim();
  for (int t = 0; t < settings.episode_cap; ++t) {
    std::vector<int> active;
    for (int i = 0; i < episodes; ++i)
      if (!done[i]) active.push_back(i);
    if (active.empty()) break;
    nn::Matrix<float> batch(obs_dim, active.size());
    for (size_t k = 0; k < active.size(); ++k)
      batch.col(k) =
          norm.normalize(obs[active[k]], obs_clip).cast<float>();
    const nn::Matrix<float> mean = policy.actor_mean(batch);
    parallel_for(static_cast<int>(active.size()), [&](int k) {
      const int i = active[k];
      const auto result = envs[i]->step(mean.col(k).cast<double>());
      obs[i] = result.obs;
      if (result.done) done[i] = 1;
    });
  }

  QuickEvalResult out;
  for (int i = 0; i < episodes; ++i) {
    out.success_rate += envs[i]->episode_success() ? 1.0 : 0.0;
    out.mean_max_force += envs[i]->episode_max_force();
  }
  out.success_rate /= episodes;
  out.mean_max_force /= episodes;
  return out;
}

// ---------------------------------------------------------------------------
// PPO teacher training.
// ---------------------------------------------------------------------------

struct TeacherTrainOptions {
  int stage = 1;
  uint64_t seed = 0;
  int max_iterations = 1000;
  double success_gate = 0.0;  // stop once eval success reaches this (0: off)
  std::string out_dir;
  std::string init_from;    // prior-stage checkpoint: policy + normalizer
  std::string resume_from;  // same-stage checkpoint: full optimizer state
  ReprMode repr = ReprMode::Full;
  int num_envs_override = 0;
  int episode_cap_override = 0;
  int checkpoint_interval = 0;  // 0: final only
  int eval_episodes = 32;
  std::shared_ptr<const std::vector<SceneSpec>> train_scenes;
  std::shared_ptr<const std::vector<SceneSpec>> eval_scenes;
  bool quiet = false;
};

struct TeacherTrainResult {
  double final_eval_success = 0.0;
  double final_eval_force = 0.0;
  bool gate_reached = false;
  bool diverged = false;
  int iterations = 0;
  std::string checkpoint_path;
};

inline EnvSettings make_env_settings(const RunConfig& cfg, int stage,
                                     ReprMode repr, int episode_cap) {
  EnvSettings s;
  s.sim = cfg.sim();
  s.robot = cfg.robot();
  s.reward = cfg.reward();
  s.stage = stage;
  s.force_threshold = cfg.curriculum().f0;
  s.safety_terminations = stage >= 3;
  s.episode_cap = episode_cap;
  s.coarse_masking = true;
  s.end_on_success = false;
  s.repr = repr;
  s.random_target = stage >= 2;
  return s;
}

inline TeacherTrainResult train_teacher(const RunConfig& cfg,
                                        const TeacherTrainOptions& opt) {
  namespace fs = std::filesystem;
  const PpoParams ppo = cfg.ppo();
  const CurriculumParams cur_params = cfg.curriculum();
  const Json& ppo_json = cfg.json().at("ppo");
  const int episode_cap = opt.episode_cap_override > 0
                              ? opt.episode_cap_override
                              : ppo_json.at("episode_cap").get<int>();
  const int num_envs =
      opt.num_envs_override > 0 ? opt.num_envs_override : ppo.num_envs();
  const int rollout_len = ppo.rollout_length;
  const int batch_total = num_envs * rollout_len;
  const int minibatch_size = std::max(1, batch_total / ppo.minibatch_count);

  if (!opt.train_scenes || opt.train_scenes->empty())
    throw std::runtime_error("train_teacher: no training scenes");
  if (!opt.eval_scenes || opt.eval_scenes->empty())
    throw std::runtime_error("train_teacher: no evaluation scenes");

  fs::create_directories(opt.out_dir);
  MetricsWriter metrics(opt.out_dir + "/metrics.jsonl");
  MetricsWriter curriculum_log(opt.out_dir + "/curriculum.log");

  GaussianPolicy<float> policy(kTeacherObsDim, kActionDim, ppo.hidden,
                               ppo.init_noise_std, mix_seed(opt.seed, 0x9e1));
  RunningNormalizer norm(kTeacherObsDim);
  CurriculumState curric = make_curriculum_state(cur_params, opt.stage);
  double lr = ppo.learning_rate;
  int start_iteration = 0;

  nn::Adam<float> adam(static_cast<float>(lr), 0.9f, 0.999f);

  if (!opt.init_from.empty()) {
    const Checkpoint ckpt = Checkpoint::load(opt.init_from);
    load_policy_tensors(ckpt, policy);
    norm = normalizer_from_json(ckpt.meta.at("normalizer"));
  } else if (!opt.resume_from.empty()) {
    const Checkpoint ckpt = Checkpoint::load(opt.resume_from);
    load_policy_tensors(ckpt, policy);
    auto params = policy.params();
    load_adam_moments(ckpt, adam, params);
    adam.set_steps(ckpt.meta.at("adam_steps").get<int64_t>());
    norm = normalizer_from_json(ckpt.meta.at("normalizer"));
    curric = curriculum_from_json(ckpt.meta.at("curriculum"));
    lr = ckpt.meta.at("lr").get<double>();
    start_iteration = ckpt.meta.at("iteration").get<int>();
  }
  adam.set_lr(static_cast<float>(lr));

  const EnvSettings env_settings =
      make_env_settings(cfg, opt.stage, opt.repr, episode_cap);

  std::vector<std::unique_ptr<GraspEnv>> envs;
  envs.reserve(num_envs);
  for (int e = 0; e < num_envs; ++e)
    envs.push_back(std::make_unique<GraspEnv>(env_settings, opt.train_scenes));

  std::vector<Eigen::VectorXd> obs_raw(num_envs);
  auto hard_reset_envs = [&](int iteration) {
    parallel_for(num_envs, [&](int e) {
      envs[e]->seed_stream(mix_seed(opt.seed, 0xe2c5, e, iteration));
      obs_raw[e] = envs[e]->reset();
    });
    for (int e = 0; e < num_envs; ++e)
      envs[e]->set_force_threshold(curric.f);
  };
  hard_reset_envs(start_iteration);

  // rollout storage, step-major
  std::vector<nn::Matrix<float>> buf_obs(rollout_len),
      buf_act(rollout_len), buf_mu(rollout_len);
  std::vector<nn::Vector<float>> buf_logp(rollout_len), buf_val(rollout_len);
  std::vector<Eigen::VectorXd> buf_rew(rollout_len);
  std::vector<std::vector<uint8_t>> buf_done(rollout_len);
  std::vector<Eigen::VectorXd> buf_raw(rollout_len);  // raw obs for the stats

  TeacherTrainResult result;
  auto save_checkpoint = [&](const std::string& path, int iteration) {
    Checkpoint ckpt;
    ckpt.meta = Json{{"kind", "teacher"},
                     {"version", kVersionString},
                     {"config_hash", cfg.hash()},
                     {"seed", opt.seed},
                     {"stage", opt.stage},
                     {"repr", static_cast<int>(opt.repr)},
                     {"iteration", iteration},
                     {"lr", lr},
                     {"adam_steps", adam.steps()},
                     {"obs_dim", kTeacherObsDim},
                     {"act_dim", kActionDim},
                     {"hidden", ppo.hidden},
                     {"init_noise_std", ppo.init_noise_std},
                     {"normalizer", normalizer_to_json(norm)},
                     {"curriculum", curriculum_to_json(curric)}};
    add_policy_tensors(ckpt, policy, adam);
    ckpt.save(path);
  };

  double last_eval_success = 0.0;
  double last_eval_force = 0.0;
  int episodes_done = 0, episodes_success = 0;
  double force_accum = 0.0;
  int iteration = start_iteration;

  for (iteration = start_iteration + 1; iteration <= opt.max_iterations;
       ++iteration) {
    // ---- rollout collection ----
    const nn::Vector<float> log_std_snapshot = policy.log_std();
    for (int t = 0; t < rollout_len; ++t) {
      nn::Matrix<float> obs_batch(kTeacherObsDim, num_envs);
      Eigen::MatrixXd raw_batch(kTeacherObsDim, num_envs);
      for (int e = 0; e < num_envs; ++e) {
        raw_batch.col(e) = obs_raw[e];
        obs_batch.col(e) =
            norm.normalize(obs_raw[e], ppo.obs_clip).cast<float>();
      }
      const nn::Matrix<float> mu = policy.actor_mean(obs_batch);
      const nn::Matrix<float> val = policy.values(obs_batch);

      nn::Matrix<float> actions(kActionDim, num_envs);
      for (int e = 0; e < num_envs; ++e) {
        for (int a = 0; a < kActionDim; ++a) {
          const float eps = static_cast<float>(envs[e]->rng().normal());
          actions(a, e) =
              mu(a, e) + std::exp(log_std_snapshot[a]) * eps;
        }
      }
      const nn::Vector<float> logp = policy.log_prob(actions, mu);

      Eigen::VectorXd rewards(num_envs);
      std::vector<uint8_t> dones(num_envs, 0);
      std::vector<uint8_t> ep_success(num_envs, 0);
      std::vector<double> ep_force(num_envs, 0.0);
      parallel_for(num_envs, [&](int e) {
        auto res = envs[e]->step(actions.col(e).cast<double>());
        rewards[e] = res.reward;
        if (res.done) {
          dones[e] = 1;
          ep_success[e] = res.success ? 1 : 0;
          ep_force[e] = envs[e]->episode_max_force();
          obs_raw[e] = envs[e]->reset();
        } else {
          obs_raw[e] = res.obs;
        }
      });
      for (int e = 0; e < num_envs; ++e) {
        if (!dones[e]) continue;
        episodes_done += 1;
        episodes_success += ep_success[e];
        force_accum += ep_force[e];
      }

      buf_obs[t] = obs_batch;
      buf_act[t] = actions;
      buf_mu[t] = mu;
      buf_logp[t] = logp;
      buf_val[t] = val.row(0).transpose();
      buf_rew[t] = rewards;
      buf_done[t] = dones;
      buf_raw[t] = Eigen::Map<Eigen::VectorXd>(raw_batch.data(),
                                               raw_batch.size());
    }

    // bootstrap values for the final observations
    nn::Matrix<float> last_obs(kTeacherObsDim, num_envs);
    for (int e = 0; e < num_envs; ++e)
      last_obs.col(e) = norm.normalize(obs_raw[e], ppo.obs_clip).cast<float>();
    const nn::Vector<float> boot =
        policy.values(last_obs).row(0).transpose();

    // ---- GAE (double precision) ----
    Eigen::VectorXd flat_adv(batch_total), flat_ret(batch_total);
    for (int e = 0; e < num_envs; ++e) {
      std::vector<double> rew(rollout_len), val(rollout_len + 1);
      std::vector<uint8_t> don(rollout_len);
      for (int t = 0; t < rollout_len; ++t) {
        rew[t] = buf_rew[t][e];
        val[t] = buf_val[t][e];
        don[t] = buf_done[t][e];
      }
      val[rollout_len] = boot[e];
      const auto [adv, ret] =
          compute_gae(rew, val, don, ppo.gamma, ppo.gae_lambda);
      for (int t = 0; t < rollout_len; ++t) {
        flat_adv[t * num_envs + e] = adv[t];
        flat_ret[t * num_envs + e] = ret[t];
      }
    }
    normalize_advantages(flat_adv);

    // ---- PPO update ----
    std::vector<int> order(batch_total);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(opt.seed, 0x3f7d, iteration));
    double kl_sum = 0.0, clip_sum = 0.0, ploss_sum = 0.0, vloss_sum = 0.0;
    int update_count = 0;
    auto params = policy.params();
    for (int epoch = 0; epoch < ppo.opt_epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      double epoch_kl = 0.0;
      int epoch_batches = 0;
      for (int start = 0; start + minibatch_size <= batch_total;
           start += minibatch_size) {
        PpoBatch<float> mb;
        mb.obs.resize(kTeacherObsDim, minibatch_size);
        mb.actions.resize(kActionDim, minibatch_size);
        mb.old_logp.resize(minibatch_size);
        mb.advantages.resize(minibatch_size);
        mb.returns.resize(minibatch_size);
        mb.old_mu.resize(kActionDim, minibatch_size);
        mb.old_log_std = log_std_snapshot;
        for (int k = 0; k < minibatch_size; ++k) {
          const int idx = order[start + k];
          const int t = idx / num_envs;
          const int e = idx % num_envs;
          mb.obs.col(k) = buf_obs[t].col(e);
          mb.actions.col(k) = buf_act[t].col(e);
          mb.old_logp[k] = buf_logp[t][e];
          mb.advantages[k] = static_cast<float>(flat_adv[idx]);
          mb.returns[k] = static_cast<float>(flat_ret[idx]);
          mb.old_mu.col(k) = buf_mu[t].col(e);
        }
        params.zero_grads();
        const auto stats = ppo_loss_and_grad(
            policy, mb, ppo.clip_range, ppo.value_coef, ppo.ent_coef, true);
        params.clip_grad_norm(static_cast<float>(ppo.max_grad_norm));
        adam.step(params);
        policy.clamp_log_std(static_cast<float>(ppo.log_std_min),
                             static_cast<float>(ppo.log_std_max));
        epoch_kl += stats.analytic_kl;
        epoch_batches += 1;
        kl_sum += stats.analytic_kl;
        clip_sum += stats.clip_frac;
        ploss_sum += stats.policy_loss;
        vloss_sum += stats.value_loss;
        update_count += 1;
        if (!std::isfinite(stats.loss))
          throw std::runtime_error("ppo update produced a non-finite loss");
      }
      // learning-rate adaptation on the epoch-mean KL
      lr = adapt_learning_rate(lr, epoch_kl / std::max(1, epoch_batches),
                               ppo.desired_kl, ppo.lr_min, ppo.lr_max);
      adam.set_lr(static_cast<float>(lr));
    }

    // running statistics learn from the raw rollout only after the update
    for (int t = 0; t < rollout_len; ++t) {
      norm.update(Eigen::Map<const Eigen::MatrixXd>(
          buf_raw[t].data(), kTeacherObsDim, num_envs));
    }

    curric = tick(curric);

    // ---- periodic evaluation, curriculum, gate ----
    const bool do_eval = iteration % cur_params.eval_interval == 0 ||
                         iteration == opt.max_iterations;
    if (do_eval) {
      const auto eval = evaluate_policy(
          policy, norm, ppo.obs_clip, env_settings, opt.eval_scenes,
          opt.eval_episodes, mix_seed(opt.seed, 0xe7a1, iteration));
      last_eval_success = eval.success_rate;
      last_eval_force = eval.mean_max_force;
      const double f_before = curric.f;
      curric = record_eval(cur_params, curric, eval.success_rate);
      if (opt.stage >= 3 && curric.f != f_before) {
        for (auto& env : envs) env->set_force_threshold(curric.f);
      }
      curriculum_log.write(Json{{"iteration", iteration},
                                {"w", eval.success_rate},
                                {"f", curric.f},
                                {"stage", opt.stage}});
      const double mean_log_std = policy.log_std().mean();
      if (eval.success_rate == 0.0 && mean_log_std < -4.0)
        result.diverged = true;
    }

    metrics.write(Json{
        {"iteration", iteration},
        {"reward_mean", [&] {
           double s = 0.0;
           for (int t = 0; t < rollout_len; ++t) s += buf_rew[t].mean();
           return s / rollout_len;
         }()},
        {"eval_success", last_eval_success},
        {"eval_mean_max_force", last_eval_force},
        {"lr", lr},
        {"kl", update_count ? kl_sum / update_count : 0.0},
        {"clip_frac", update_count ? clip_sum / update_count : 0.0},
        {"policy_loss", update_count ? ploss_sum / update_count : 0.0},
        {"value_loss", update_count ? vloss_sum / update_count : 0.0},
        {"entropy", policy.entropy()},
        {"f_threshold", curric.f},
        {"rollout_episodes", episodes_done},
        {"rollout_success",
         episodes_done ? static_cast<double>(episodes_success) / episodes_done
                       : 0.0},
        {"rollout_mean_max_force",
         episodes_done ? force_accum / episodes_done : 0.0},
        {"stage", opt.stage}});
    episodes_done = 0;
    episodes_success = 0;
    force_accum = 0.0;

    if (opt.checkpoint_interval > 0 &&
        iteration % opt.checkpoint_interval == 0 &&
        iteration != opt.max_iterations) {
      char name[64];
      std::snprintf(name, sizeof(name), "/teacher_stage%d_iter%06d.ckpt",
                    opt.stage, iteration);
      save_checkpoint(opt.out_dir + name, iteration);
      hard_reset_envs(iteration);
    }

    if (opt.success_gate > 0.0 && do_eval &&
        last_eval_success >= opt.success_gate) {
      result.gate_reached = true;
      break;
    }
  }

  result.iterations = std::min(iteration, opt.max_iterations);
  result.final_eval_success = last_eval_success;
  result.final_eval_force = last_eval_force;
  char name[64];
  std::snprintf(name, sizeof(name), "/teacher_stage%d_final.ckpt", opt.stage);
  result.checkpoint_path = opt.out_dir + name;
  save_checkpoint(result.checkpoint_path, result.iterations);

  std::ofstream report(opt.out_dir + "/run_report.json");
  report << Json{{"kind", "teacher_training"},
                 {"version", kVersionString},
                 {"config_hash", cfg.hash()},
                 {"seed", opt.seed},
                 {"stage", opt.stage},
                 {"iterations", result.iterations},
                 {"final_eval_success", result.final_eval_success},
                 {"final_eval_force", result.final_eval_force},
                 {"gate_reached", result.gate_reached},
                 {"diverged", result.diverged}}
                .dump(2)
         << "\n";
  return result;
}

}  // namespace cdx
