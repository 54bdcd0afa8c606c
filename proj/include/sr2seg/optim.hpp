#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sr2seg/tape.hpp"

namespace sr2seg {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: p -= lr * wd * p
  double lr_scale = 1.0;      // multiplies the scheduled rate during joint training
};

/// Adaptive-moment optimizer with decoupled weight decay.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(const ParameterStore<T>& params, AdamSettings s) : settings_(s) {
    for (const auto& p : params) {
      m_.emplace_back(p.value.shape());
      v_.emplace_back(p.value.shape());
    }
  }

  const AdamSettings& settings() const { return settings_; }
  std::uint64_t steps() const { return t_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps(std::uint64_t t) { t_ = t; }

  void step(ParameterStore<T>& params, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(settings_.beta1), b2 = static_cast<T>(settings_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(settings_.eps);
    const T decay = static_cast<T>(1.0 - lr * settings_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::size_t j = 0; j < p.value.numel(); ++j) {
        const T g = p.grad[j];
        m[j] = b1 * m[j] + (T{1} - b1) * g;
        v[j] = b2 * v[j] + (T{1} - b2) * g * g;
        p.value[j] = p.value[j] * decay - step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
      }
    }
  }

 private:
  AdamSettings settings_;
  std::vector<Tensor<T>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace sr2seg
