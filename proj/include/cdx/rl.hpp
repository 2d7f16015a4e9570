#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "cdx/nn.hpp"
#include "cdx/robot.hpp"

namespace cdx {

/// PPO hyperparameters. `samples_per_update` = envs * rollout length; the
/// minibatch size is derived from it and `minibatch_count`.
struct PpoParams {
  int samples_per_update = 4096;
  int minibatch_count = 4;
  int opt_epochs = 5;
  int rollout_length = 8;  // control steps per env per update
  std::vector<int> hidden = {1024, 512, 256};
  double clip_range = 0.2;
  double max_grad_norm = 1.0;
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double desired_kl = 0.02;
  double ent_coef = 0.0;
  double value_coef = 1.0;
  double init_noise_std = 0.8;
  double obs_clip = 10.0;
  double lr_min = 1e-6;
  double lr_max = 1e-2;
  double log_std_min = -5.0;
  double log_std_max = 2.0;

  int num_envs() const { return samples_per_update / rollout_length; }
  int minibatch_size() const { return samples_per_update / minibatch_count; }
};

/// Diagonal-Gaussian actor-critic MLP pair with a state-independent log-std.
template <typename T>
class GaussianPolicy {
 public:
  GaussianPolicy() = default;

  GaussianPolicy(int obs_dim, int act_dim, const std::vector<int>& hidden,
                 double init_noise_std, uint64_t seed)
      : obs_dim_(obs_dim), act_dim_(act_dim) {
    Rng rng(mix_seed(seed, 0xac7031));
    std::vector<int> actor_sizes = {obs_dim};
    actor_sizes.insert(actor_sizes.end(), hidden.begin(), hidden.end());
    actor_sizes.push_back(act_dim);
    std::vector<int> critic_sizes = {obs_dim};
    critic_sizes.insert(critic_sizes.end(), hidden.begin(), hidden.end());
    critic_sizes.push_back(1);
    actor_ = nn::Mlp<T>(actor_sizes, nn::Activation::Tanh, rng);
    critic_ = nn::Mlp<T>(critic_sizes, nn::Activation::Tanh, rng, T(M_SQRT2),
                         T(1.0));
    log_std_ = nn::Vector<T>::Constant(act_dim,
                                       T(std::log(init_noise_std)));
    g_log_std_ = nn::Vector<T>::Zero(act_dim);
  }

  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  nn::Mlp<T>& actor() { return actor_; }
  nn::Mlp<T>& critic() { return critic_; }
  nn::Vector<T>& log_std() { return log_std_; }
  nn::Vector<T>& log_std_grad() { return g_log_std_; }

  nn::ParamSet<T> params() {
    nn::ParamSet<T> set;
    set.add_mlp("actor", actor_);
    set.add_mlp("critic", critic_);
    set.add_vector("log_std", log_std_, g_log_std_);
    return set;
  }

  /// Actor mean for a batch of observations (obs_dim, B).
  nn::Matrix<T> actor_mean(const nn::Matrix<T>& obs) {
    return actor_.forward(obs);
  }

  nn::Matrix<T> values(const nn::Matrix<T>& obs) {
    return critic_.forward(obs);
  }

  /// Log density of actions under N(mean, diag(exp(log_std))^2).
  nn::Vector<T> log_prob(const nn::Matrix<T>& actions,
                         const nn::Matrix<T>& mean) const {
    const auto std = log_std_.array().exp();
    nn::Vector<T> out(actions.cols());
    const T log2pi = T(std::log(2.0 * M_PI));
    const T base = -T(0.5) * act_dim_ * log2pi - log_std_.sum();
    for (Eigen::Index i = 0; i < actions.cols(); ++i) {
      const auto z = (actions.col(i) - mean.col(i)).array() / std;
      out[i] = base - T(0.5) * z.square().sum();
    }
    return out;
  }

  /// Gaussian entropy (state independent).
  T entropy() const {
    return log_std_.sum() +
           T(0.5) * act_dim_ * (T(1) + T(std::log(2.0 * M_PI)));
  }

  void clamp_log_std(T lo, T hi) {
    log_std_ = log_std_.cwiseMax(lo).cwiseMin(hi);
  }

 private:
  int obs_dim_ = 0, act_dim_ = 0;
  nn::Mlp<T> actor_;
  nn::Mlp<T> critic_;
  nn::Vector<T> log_std_;
  nn::Vector<T> g_log_std_;
};

// ---------------------------------------------------------------------------
// Generalized advantage estimation.
// ---------------------------------------------------------------------------

/// Standard GAE recursion. `values` carries T+1 entries (bootstrap last);
/// `dones[t]` marks a terminal transition at step t. Returns (advantages,
/// returns) with returns = advantages + values[0..T).
inline std::pair<std::vector<double>, std::vector<double>> compute_gae(
    const std::vector<double>& rewards, const std::vector<double>& values,
    const std::vector<uint8_t>& dones, double gamma, double lam) {
  const size_t n = rewards.size();
  if (values.size() != n + 1 || dones.size() != n)
    throw std::invalid_argument("compute_gae: misaligned sequences");
  std::vector<double> adv(n, 0.0), ret(n, 0.0);
  double last = 0.0;
  for (size_t t = n; t-- > 0;) {
    const double not_done = dones[t] ? 0.0 : 1.0;
    const double delta =
        rewards[t] + gamma * values[t + 1] * not_done - values[t];
    last = delta + gamma * lam * not_done * last;
    adv[t] = last;
    ret[t] = adv[t] + values[t];
  }
  return {adv, ret};
}

// ---------------------------------------------------------------------------
// PPO clipped-surrogate loss with analytic gradients.
// ---------------------------------------------------------------------------

template <typename T>
struct PpoBatch {
  nn::Matrix<T> obs;         // (obs_dim, B)
  nn::Matrix<T> actions;     // (act_dim, B)
  nn::Vector<T> old_logp;    // (B)
  nn::Vector<T> advantages;  // (B), already normalized
  nn::Vector<T> returns;     // (B)
  nn::Matrix<T> old_mu;      // (act_dim, B), for the analytic KL
  nn::Vector<T> old_log_std; // (act_dim)
};

template <typename T>
struct PpoStats {
  T loss = 0, policy_loss = 0, value_loss = 0, entropy = 0;
  T approx_kl = 0, analytic_kl = 0, clip_frac = 0;
};

/// Computes the PPO loss on a minibatch; when `accumulate_grads` is set the
/// parameter gradients are added into the policy's grad buffers.
template <typename T>
PpoStats<T> ppo_loss_and_grad(GaussianPolicy<T>& policy,
                              const PpoBatch<T>& batch, double clip_range,
                              double value_coef, double ent_coef,
                              bool accumulate_grads) {
  const Eigen::Index batch_size = batch.obs.cols();
  const T inv_b = T(1) / T(batch_size);
  const T eps = T(clip_range);

  const nn::Matrix<T> mu = policy.actor_mean(batch.obs);
  const nn::Matrix<T> v = policy.values(batch.obs);
  const nn::Vector<T> logp = policy.log_prob(batch.actions, mu);

  const auto std = policy.log_std().array().exp();
  const auto var = std.square();

  PpoStats<T> stats;
  nn::Matrix<T> d_mu = nn::Matrix<T>::Zero(mu.rows(), mu.cols());
  nn::Matrix<T> d_v = nn::Matrix<T>::Zero(1, batch_size);
  nn::Vector<T> d_log_std = nn::Vector<T>::Zero(policy.act_dim());

  for (Eigen::Index i = 0; i < batch_size; ++i) {
    const T ratio = std::exp(logp[i] - batch.old_logp[i]);
    const T adv = batch.advantages[i];
    const T clipped = std::clamp(ratio, T(1) - eps, T(1) + eps);
    const T surr1 = ratio * adv;
    const T surr2 = clipped * adv;

    stats.policy_loss += -std::min(surr1, surr2) * inv_b;
    stats.approx_kl += ((ratio - T(1)) - (logp[i] - batch.old_logp[i])) * inv_b;
    if (std::abs(ratio - T(1)) > eps) stats.clip_frac += inv_b;

    // d(policy_loss)/d(logp_i); zero when the clipped branch saturates
    T dl_dlogp = T(0);
    if (surr1 <= surr2) {
      dl_dlogp = -adv * ratio * inv_b;
    } else if (ratio > T(1) - eps && ratio < T(1) + eps) {
      dl_dlogp = -adv * ratio * inv_b;
    }

    const auto diff = (batch.actions.col(i) - mu.col(i)).array();
    if (accumulate_grads && dl_dlogp != T(0)) {
      d_mu.col(i) = (dl_dlogp * diff / var).matrix();
      d_log_std += (dl_dlogp * (diff.square() / var - T(1))).matrix();
    }

    const T verr = v(0, i) - batch.returns[i];
    stats.value_loss += T(0.5) * verr * verr * inv_b;
    d_v(0, i) = T(value_coef) * verr * inv_b;

    // analytic KL(old || new) between the diagonal Gaussians
    const auto so = batch.old_log_std.array().exp();
    const auto sn = std;
    const auto mu_diff = (batch.old_mu.col(i) - mu.col(i)).array();
    stats.analytic_kl +=
        ((sn.log() - so.log()) +
         (so.square() + mu_diff.square()) / (T(2) * sn.square()) - T(0.5))
            .sum() *
        inv_b;
  }

  stats.entropy = policy.entropy();
  stats.loss = stats.policy_loss + T(value_coef) * stats.value_loss -
               T(ent_coef) * stats.entropy;

  if (accumulate_grads) {
    policy.actor().backward(d_mu);
    policy.critic().backward(d_v);
    policy.log_std_grad() += d_log_std;
    policy.log_std_grad().array() -= T(ent_coef);  // d(-ent_coef*entropy)
  }
  return stats;
}

/// In-place batch advantage normalization to mean 0, std 1.
inline void normalize_advantages(Eigen::VectorXd& adv) {
  const double mean = adv.mean();
  const double std =
      std::sqrt((adv.array() - mean).square().sum() / adv.size());
  adv = (adv.array() - mean) / (std + 1e-8);
}

/// Learning-rate adaptation toward a desired KL, bounded to [lr_min, lr_max].
inline double adapt_learning_rate(double lr, double measured_kl,
                                  double desired_kl, double lr_min,
                                  double lr_max) {
  if (desired_kl <= 0.0) return lr;
  if (measured_kl > 2.0 * desired_kl) {
    lr /= 1.5;
  } else if (measured_kl < 0.5 * desired_kl && measured_kl >= 0.0) {
    lr *= 1.5;
  }
  return clampd(lr, lr_min, lr_max);
}

/// During the coarse approach phase, hand actions are frozen at their
/// initial state; arm deltas pass through.
inline Action mask_coarse_action(Action action, bool coarse_active,
                                 const HandVec& hand_init) {
  if (coarse_active) action.hand_abs = hand_init;
  return action;
}

// ---------------------------------------------------------------------------
// Running observation normalization (Welford), clip to +-obs_clip.
// ---------------------------------------------------------------------------

class RunningNormalizer {
 public:
  explicit RunningNormalizer(int dim = 0)
      : count_(0.0),
        mean_(Eigen::VectorXd::Zero(dim)),
        m2_(Eigen::VectorXd::Zero(dim)) {}

  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  Eigen::VectorXd variance() const {
    if (count_ < 2.0) return Eigen::VectorXd::Ones(mean_.size());
    return m2_ / count_;
  }

  /// Merges a batch of observations (dim, B) into the running statistics.
  void update(const Eigen::MatrixXd& batch) {
    const double n_b = static_cast<double>(batch.cols());
    if (n_b == 0) return;
    const Eigen::VectorXd mean_b = batch.rowwise().mean();
    Eigen::VectorXd m2_b = Eigen::VectorXd::Zero(batch.rows());
    for (Eigen::Index i = 0; i < batch.cols(); ++i)
      m2_b.array() += (batch.col(i) - mean_b).array().square();
    if (count_ == 0.0) {
      count_ = n_b;
      mean_ = mean_b;
      m2_ = m2_b;
      return;
    }
    const double total = count_ + n_b;
    const Eigen::VectorXd delta = mean_b - mean_;
    mean_ += delta * (n_b / total);
    m2_ += m2_b + delta.cwiseProduct(delta) * (count_ * n_b / total);
    count_ = total;
  }

  Eigen::VectorXd normalize(const Eigen::VectorXd& x, double clip) const {
    if (count_ < 2.0) return x.cwiseMax(-clip).cwiseMin(clip);
    const Eigen::VectorXd std =
        (m2_ / count_).cwiseMax(1e-8).cwiseSqrt();
    return ((x - mean_).cwiseQuotient(std)).cwiseMax(-clip).cwiseMin(clip);
  }

  void load(double count, Eigen::VectorXd mean, Eigen::VectorXd m2) {
    count_ = count;
    mean_ = std::move(mean);
    m2_ = std::move(m2);
  }
  const Eigen::VectorXd& m2() const { return m2_; }

 private:
  double count_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
};

}  // namespace cdx
