#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cdx/rng.hpp"

namespace cdx::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Activation { Tanh, Relu, Identity };

template <typename T>
inline Matrix<T> apply_activation(const Matrix<T>& x, Activation act) {
  switch (act) {
    case Activation::Tanh:
      return x.array().tanh().matrix();
    case Activation::Relu:
      return x.cwiseMax(T(0));
    case Activation::Identity:
      return x;
  }
  return x;
}

template <typename T>
inline Matrix<T> activation_grad(const Matrix<T>& y, const Matrix<T>& dy,
                                 Activation act) {
  switch (act) {
    case Activation::Tanh:
      return (dy.array() * (T(1) - y.array().square())).matrix();
    case Activation::Relu:
      return (dy.array() * (y.array() > T(0)).template cast<T>()).matrix();
    case Activation::Identity:
      return dy;
  }
  return dy;
}

/// Orthogonal init (QR of a Gaussian matrix, sign-corrected), scaled by gain.
template <typename T>
inline Matrix<T> orthogonal_init(int rows, int cols, T gain, Rng& rng) {
  const bool flip = rows < cols;
  const int r = flip ? cols : rows;
  const int c = flip ? rows : cols;
  Matrix<T> a(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) a(i, j) = static_cast<T>(rng.normal());
  Eigen::HouseholderQR<Matrix<T>> qr(a);
  Matrix<T> q = qr.householderQ() * Matrix<T>::Identity(r, c);
  const Matrix<T> rr = qr.matrixQR().template triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j)
    if (rr(j, j) < T(0)) q.col(j) = -q.col(j);
  Matrix<T> w = flip ? Matrix<T>(q.transpose()) : q;
  return gain * w;
}

/// Dense layer with cached input for backprop. Data layout: activations are
/// (features, batch) column-major.
template <typename T>
struct Linear {
  Matrix<T> w;  // (out, in)
  Vector<T> b;  // (out)
  Matrix<T> gw;
  Vector<T> gb;

  Linear() = default;
  Linear(int in, int out, T gain, Rng& rng)
      : w(orthogonal_init<T>(out, in, gain, rng)),
        b(Vector<T>::Zero(out)),
        gw(Matrix<T>::Zero(out, in)),
        gb(Vector<T>::Zero(out)) {}

  Matrix<T> forward(const Matrix<T>& x) {
    input_ = x;
    return (w * x).colwise() + b;
  }

  Matrix<T> backward(const Matrix<T>& dy) {
    gw.noalias() += dy * input_.transpose();
    gb.noalias() += dy.rowwise().sum();
    return w.transpose() * dy;
  }

  void zero_grad() {
    gw.setZero();
    gb.setZero();
  }

 private:
  Matrix<T> input_;
};

/// Multi-layer perceptron; hidden activation fixed, identity output head.
template <typename T>
class Mlp {
 public:
  Mlp() = default;

  /// sizes = {in, h1, ..., out}; out_gain scales the final layer init.
  Mlp(const std::vector<int>& sizes, Activation act, Rng& rng,
      T hidden_gain = T(M_SQRT2), T out_gain = T(0.01))
      : act_(act) {
    for (size_t i = 0; i + 1 < sizes.size(); ++i) {
      const bool last = i + 2 == sizes.size();
      layers_.emplace_back(sizes[i], sizes[i + 1],
                           last ? out_gain : hidden_gain, rng);
    }
  }

  Matrix<T> forward(const Matrix<T>& x) {
    hidden_outputs_.clear();
    Matrix<T> h = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(h);
      if (i + 1 < layers_.size()) {
        h = apply_activation(h, act_);
        hidden_outputs_.push_back(h);
      }
    }
    return h;
  }

  /// Backpropagates dL/dout, accumulating parameter grads; returns dL/dx.
  Matrix<T> backward(const Matrix<T>& dout) {
    Matrix<T> d = dout;
    for (size_t i = layers_.size(); i-- > 0;) {
      d = layers_[i].backward(d);
      if (i > 0) d = activation_grad(hidden_outputs_[i - 1], d, act_);
    }
    return d;
  }

  void zero_grad() {
    for (auto& l : layers_) l.zero_grad();
  }

  std::vector<Linear<T>>& layers() { return layers_; }
  const std::vector<Linear<T>>& layers() const { return layers_; }

 private:
  Activation act_ = Activation::Tanh;
  std::vector<Linear<T>> layers_;
  std::vector<Matrix<T>> hidden_outputs_;
};

// ---------------------------------------------------------------------------
// Flat parameter views: registration of (name -> tensor) pairs over a model,
// used by optimizers, gradient clipping, checkpoints and FD tests.
// ---------------------------------------------------------------------------

template <typename T>
struct ParamRef {
  std::string name;
  Matrix<T>* value;
  Matrix<T>* grad;
};

template <typename T>
class ParamSet {
 public:
  void add(const std::string& name, Matrix<T>& value, Matrix<T>& grad) {
    refs_.push_back({name, &value, &grad});
  }

  // registers every layer of an MLP under `prefix`
  void add_mlp(const std::string& prefix, Mlp<T>& mlp) {
    int i = 0;
    for (auto& l : mlp.layers()) {
      add(prefix + ".w" + std::to_string(i), l.w, l.gw);
      add_vector(prefix + ".b" + std::to_string(i), l.b, l.gb);
      ++i;
    }
  }

  void add_vector(const std::string& name, Vector<T>& value, Vector<T>& grad) {
    vec_refs_.push_back({name, &value, &grad});
  }

  size_t size() const {
    size_t n = 0;
    for (const auto& r : refs_) n += r.value->size();
    for (const auto& r : vec_refs_) n += r.value->size();
    return n;
  }

  Vector<T> flatten_params() const { return flatten(false); }
  Vector<T> flatten_grads() const { return flatten(true); }

  void set_params(const Vector<T>& flat) {
    Eigen::Index off = 0;
    for (auto& r : refs_) {
      const Eigen::Index n = r.value->size();
      Eigen::Map<Vector<T>>(r.value->data(), n) = flat.segment(off, n);
      off += n;
    }
    for (auto& r : vec_refs_) {
      const Eigen::Index n = r.value->size();
      *r.value = flat.segment(off, n);
      off += n;
    }
  }

  void zero_grads() {
    for (auto& r : refs_) r.grad->setZero();
    for (auto& r : vec_refs_) r.grad->setZero();
  }

  T grad_norm() const {
    T sq = T(0);
    for (const auto& r : refs_) sq += r.grad->squaredNorm();
    for (const auto& r : vec_refs_) sq += r.grad->squaredNorm();
    return std::sqrt(sq);
  }

  /// Scales gradients so the global norm is at most `max_norm`.
  void clip_grad_norm(T max_norm) {
    const T norm = grad_norm();
    if (norm > max_norm && norm > T(1e-12)) {
      const T scale = max_norm / norm;
      for (auto& r : refs_) *r.grad *= scale;
      for (auto& r : vec_refs_) *r.grad *= scale;
    }
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& r : refs_)
      fn(r.name, Eigen::Map<Vector<T>>(r.value->data(), r.value->size()),
         Eigen::Map<Vector<T>>(r.grad->data(), r.grad->size()));
    for (auto& r : vec_refs_)
      fn(r.name, Eigen::Map<Vector<T>>(r.value->data(), r.value->size()),
         Eigen::Map<Vector<T>>(r.grad->data(), r.grad->size()));
  }

  /// Named tensors with shapes, for serialization.
  template <typename Fn>
  void for_each_named(Fn&& fn) const {
    for (const auto& r : refs_)
      fn(r.name, r.value->data(), r.value->rows(), r.value->cols());
    for (const auto& r : vec_refs_)
      fn(r.name, r.value->data(), r.value->rows(), Eigen::Index(1));
  }

  bool load_named(const std::string& name, const float* data, size_t count) {
    for (auto& r : refs_) {
      if (r.name != name) continue;
      if (static_cast<size_t>(r.value->size()) != count) return false;
      for (Eigen::Index i = 0; i < r.value->size(); ++i)
        r.value->data()[i] = static_cast<T>(data[i]);
      return true;
    }
    for (auto& r : vec_refs_) {
      if (r.name != name) continue;
      if (static_cast<size_t>(r.value->size()) != count) return false;
      for (Eigen::Index i = 0; i < r.value->size(); ++i)
        r.value->data()[i] = static_cast<T>(data[i]);
      return true;
    }
    return false;
  }

 private:
  struct VecRef {
    std::string name;
    Vector<T>* value;
    Vector<T>* grad;
  };

  Vector<T> flatten(bool grads) const {
    Vector<T> out(size());
    Eigen::Index off = 0;
    for (const auto& r : refs_) {
      const auto* m = grads ? r.grad : r.value;
      out.segment(off, m->size()) =
          Eigen::Map<const Vector<T>>(m->data(), m->size());
      off += m->size();
    }
    for (const auto& r : vec_refs_) {
      const auto* m = grads ? r.grad : r.value;
      out.segment(off, m->size()) = *m;
      off += m->size();
    }
    return out;
  }

  std::vector<ParamRef<T>> refs_;
  std::vector<VecRef> vec_refs_;
};

/// Adam with optional decoupled weight decay. Moment buffers are keyed by
/// registration order, so the ParamSet layout must stay fixed.
template <typename T>
class Adam {
 public:
  Adam(T lr, T beta1, T beta2, T eps = T(1e-8), T weight_decay = T(0))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  int64_t steps() const { return t_; }

  void step(ParamSet<T>& params) {
    t_ += 1;
    const T bc1 = T(1) - std::pow(beta1_, T(t_));
    const T bc2 = T(1) - std::pow(beta2_, T(t_));
    size_t slot = 0;
    params.for_each([&](const std::string&, Eigen::Map<Vector<T>> value,
                        Eigen::Map<Vector<T>> grad) {
      if (slot >= m_.size()) {
        m_.push_back(Vector<T>::Zero(value.size()));
        v_.push_back(Vector<T>::Zero(value.size()));
      }
      Vector<T>& m = m_[slot];
      Vector<T>& v = v_[slot];
      m = beta1_ * m + (T(1) - beta1_) * grad;
      v.array() = beta2_ * v.array() + (T(1) - beta2_) * grad.array().square();
      const auto mhat = m.array() / bc1;
      const auto vhat = v.array() / bc2;
      if (wd_ > T(0)) value.array() -= lr_ * wd_ * value.array();
      value.array() -= lr_ * mhat / (vhat.sqrt() + eps_);
      ++slot;
    });
  }

  // moment access for checkpointing
  std::vector<Vector<T>>& moments_m() { return m_; }
  std::vector<Vector<T>>& moments_v() { return v_; }
  void set_steps(int64_t t) { t_ = t; }

 private:
  T lr_, beta1_, beta2_, eps_, wd_;
  int64_t t_ = 0;
  std::vector<Vector<T>> m_;
  std::vector<Vector<T>> v_;
};

/// Exponential moving average of a parameter set, with the warmup schedule
/// decay_t = min(max_value, 1 - (1 + t)^(-power)).
template <typename T>
class Ema {
 public:
  Ema(T power, T max_value) : power_(power), max_value_(max_value) {}

  T decay_at(int64_t step) const {
    return std::min(max_value_,
                    T(1) - std::pow(T(1) + T(step), -power_));
  }

  void update(ParamSet<T>& params) {
    step_ += 1;
    const T d = decay_at(step_);
    size_t slot = 0;
    params.for_each([&](const std::string&, Eigen::Map<Vector<T>> value,
                        Eigen::Map<Vector<T>>) {
      if (slot >= shadow_.size()) shadow_.push_back(value);
      shadow_[slot] = d * shadow_[slot] + (T(1) - d) * Vector<T>(value);
      ++slot;
    });
  }

  /// Writes shadow weights into the parameter set.
  void copy_to(ParamSet<T>& params) const {
    size_t slot = 0;
    params.for_each([&](const std::string&, Eigen::Map<Vector<T>> value,
                        Eigen::Map<Vector<T>>) {
      if (slot < shadow_.size()) value = shadow_[slot];
      ++slot;
    });
  }

  int64_t step() const { return step_; }
  std::vector<Vector<T>>& shadow() { return shadow_; }
  void set_step(int64_t s) { step_ = s; }

 private:
  T power_, max_value_;
  int64_t step_ = 0;
  std::vector<Vector<T>> shadow_;
};

}  // namespace cdx::nn
