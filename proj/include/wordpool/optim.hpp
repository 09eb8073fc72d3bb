#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wordpool/tensor.hpp"

namespace wordpool {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
};

/// AdamW with decoupled weight decay applied before the bias-corrected Adam
/// update. Decay touches only parameters flagged `decay`.
template <class T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(const nn::ParamStore<T>& params, AdamWConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0)) throw ConfigError("optimizer: lr must be > 0");
    for (const auto& p : params) {
      m_.emplace_back(p.size(), T(0));
      v_.emplace_back(p.size(), T(0));
    }
  }

  /// Returns the global gradient norm before clipping.
  double step(nn::ParamStore<T>& params) {
    if (params.size() != m_.size()) throw ConfigError("optimizer: parameter set changed");
    double sq = 0.0;
    for (const auto& p : params) {
      for (T g : p.grad) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NonFiniteError("optimizer: non-finite gradient norm");
    const T clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? static_cast<T>(cfg_.grad_clip / norm) : T(1);
    ++t_;
    const T lr = static_cast<T>(cfg_.lr);
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T eps = static_cast<T>(cfg_.eps);
    const T decay = static_cast<T>(1.0 - cfg_.lr * cfg_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const T g = p.grad[j] * clip;
        if (p.decay) p.value[j] *= decay;
        m[j] = b1 * m[j] + (T(1) - b1) * g;
        v[j] = b2 * v[j] + (T(1) - b2) * g * g;
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p.value[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
    return norm;
  }

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace wordpool
