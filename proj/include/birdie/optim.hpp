#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "birdie/error.hpp"
#include "birdie/nn.hpp"

namespace birdie {

struct AdamWConfig {
  double lr = 3e-3;
  double min_lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;  // cosine horizon; 0 = constant lr
};

// Linear warmup then cosine decay from lr to min_lr over total_steps.
inline double cosine_lr(const AdamWConfig& c, std::size_t step) {
  if (c.warmup_steps > 0 && step < c.warmup_steps) {
    return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup_steps);
  }
  if (c.total_steps == 0) return c.lr;
  const double span = static_cast<double>(std::max<std::size_t>(1, c.total_steps - std::min(c.total_steps, c.warmup_steps)));
  const double p = std::min(1.0, static_cast<double>(step - std::min(step, c.warmup_steps)) / span);
  return c.min_lr + 0.5 * (c.lr - c.min_lr) * (1.0 + std::cos(std::numbers::pi * p));
}

// AdamW with decoupled weight decay applied only to parameters whose
// decay flag is set.
template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(nn::ParamRefs<T> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(nn::Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(nn::Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  // Returns the learning rate used.
  double step() {
    const double lr = cosine_lr(cfg_, step_);
    double scale = 1.0;
    if (cfg_.grad_clip > 0) {
      const double norm = grad_norm();
      if (!std::isfinite(norm)) throw Error("optimizer: non-finite gradient norm");
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      nn::Param<T>& p = *params_[k];
      const nn::Mat<T> g = p.grad * static_cast<T>(scale);
      m_[k] = b1 * m_[k] + (T(1) - b1) * g;
      v_[k] = b2 * v_[k] + (T(1) - b2) * g.cwiseProduct(g);
      if (p.decay && cfg_.weight_decay > 0) p.value *= static_cast<T>(1.0 - lr * cfg_.weight_decay);
      const auto mhat = m_[k].array() / static_cast<T>(bc1);
      const auto vhat = v_[k].array() / static_cast<T>(bc2);
      p.value.array() -= static_cast<T>(lr) * mhat / (vhat.sqrt() + static_cast<T>(cfg_.eps));
      if (!p.value.allFinite()) throw Error("optimizer: non-finite update in parameter '" + p.name + "'");
    }
    return lr;
  }

  double grad_norm() const {
    double s = 0;
    for (auto* p : params_) s += static_cast<double>(p->grad.squaredNorm());
    return std::sqrt(s);
  }

  std::size_t step_count() const { return step_; }
  void set_step_count(std::size_t s) { step_ = s; }
  const AdamWConfig& config() const { return cfg_; }
  std::vector<nn::Mat<T>>& first_moments() { return m_; }
  std::vector<nn::Mat<T>>& second_moments() { return v_; }
  const nn::ParamRefs<T>& params() const { return params_; }

 private:
  nn::ParamRefs<T> params_;
  AdamWConfig cfg_;
  std::vector<nn::Mat<T>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace birdie
