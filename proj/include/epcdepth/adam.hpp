#pragma once

#include <cmath>
#include <vector>

#include "epcdepth/tensor.hpp"

namespace epc {

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// Bias-corrected Adam over a fixed parameter list. A parameter with no
/// accumulated gradient is treated as having a zero gradient (moments
/// decay, a zero first moment leaves the value unchanged).
class Adam {
 public:
  Adam(std::vector<Tensor> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    EPC_CHECK(cfg.lr >= 0, "Adam: negative learning rate");
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
      m_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
      v_.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    }
  }

  int steps_taken() const { return t_; }

  void step() {
    ++t_;
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      const bool has_grad = p.has_grad();
      const std::vector<double>* g = has_grad ? &p.impl()->grad : nullptr;
      float* pv = p.data();
      std::vector<float>& m = m_[i];
      std::vector<float>& v = v_[i];
      const int64_t n = p.numel();
      for (int64_t j = 0; j < n; ++j) {
        const float gj = has_grad ? static_cast<float>((*g)[static_cast<size_t>(j)]) : 0.0f;
        float& mj = m[static_cast<size_t>(j)];
        float& vj = v[static_cast<size_t>(j)];
        mj = cfg_.beta1 * mj + (1.0f - cfg_.beta1) * gj;
        vj = cfg_.beta2 * vj + (1.0f - cfg_.beta2) * gj * gj;
        const float m_hat = mj / bc1;
        const float v_hat = vj / bc2;
        pv[j] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  /// L2 norm over all accumulated parameter gradients.
  float grad_norm() const {
    double acc = 0.0;
    for (const Tensor& p : params_) {
      if (!p.has_grad()) continue;
      for (double g : p.impl()->grad) acc += g * g;
    }
    return static_cast<float>(std::sqrt(acc));
  }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  int t_ = 0;
};

}  // namespace epc
