#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "featage/params.hpp"
#include "featage/tensor.hpp"

namespace featage::num {

struct AdamConfig {
  float lr = 0.0002f;
  float beta1 = 0.5f;
  float beta2 = 0.99f;
  float eps = 1e-8f;
};

// Adam with bias-corrected moment estimates. Moment buffers are sized on the
// first step and locked to those shapes afterwards.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {
    if (cfg.lr <= 0) throw std::invalid_argument("adam: learning rate must be positive");
    if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1)
      throw std::invalid_argument("adam: betas must lie in [0,1)");
  }

  void step(ParamSet& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.size())
      throw std::invalid_argument("adam: " + std::to_string(grads.size()) + " gradients for " +
                                  std::to_string(params.size()) + " parameters");
    if (m_.empty()) {
      for (const Tensor& t : params.tensors) {
        m_.emplace_back(t.shape);
        v_.emplace_back(t.shape);
      }
    }
    if (m_.size() != params.size())
      throw std::invalid_argument("adam: parameter count changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (size_t p = 0; p < params.size(); ++p) {
      Tensor& w = params.tensors[p];
      const Tensor& g = grads[p];
      if (!w.same_shape(g))
        throw std::invalid_argument("adam: gradient shape " + g.shape_str() + " does not match parameter '" +
                                    params.names[p] + "' " + w.shape_str());
      if (!g.all_finite())
        throw std::runtime_error("adam: non-finite gradient for parameter '" + params.names[p] + "'");
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (size_t i = 0; i < w.data.size(); ++i) {
        m.data[i] = cfg_.beta1 * m.data[i] + (1.0f - cfg_.beta1) * g.data[i];
        v.data[i] = cfg_.beta2 * v.data[i] + (1.0f - cfg_.beta2) * g.data[i] * g.data[i];
        const double mhat = m.data[i] / c1;
        const double vhat = v.data[i] / c2;
        w.data[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_, v_;
  int64_t t_ = 0;
};

}  // namespace featage::num
