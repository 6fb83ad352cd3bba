#pragma once

#include <cmath>
#include <set>

#include "dualdis/autograd.hpp"

namespace dualdis {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed parameter set.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    std::set<const Parameter<T>*> seen;
    for (auto* p : params_) {
      if (!seen.insert(p).second) throw Error("Adam: parameter '" + p->name() + "' listed twice");
      m_.push_back(Tensor<T>::zeros_like(p->value()));
      v_.push_back(Tensor<T>::zeros_like(p->value()));
    }
  }

  const std::vector<Parameter<T>*>& parameters() const { return params_; }
  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return step_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  /// Applies one update from the accumulated gradients.
  void step() {
    if (params_.empty()) return;
    check_gradients_finite<T>(params_);
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const double step_size = cfg_.lr / bc1;
    const double sqrt_bc2 = std::sqrt(bc2);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter<T>& p = *params_[k];
      if (!p.trainable()) continue;
      const Tensor<T>& g = p.grad();
      Tensor<T>& m = m_[k];
      Tensor<T>& v = v_[k];
      T* w = p.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        const double denom = std::sqrt(static_cast<double>(v[i])) / sqrt_bc2 + cfg_.eps;
        w[i] -= static_cast<T>(step_size * static_cast<double>(m[i]) / denom);
      }
    }
  }

  /// Moment buffers in parameter order, for serialization.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_step_count(long s) { step_ = s; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  long step_ = 0;
};

}  // namespace dualdis
