#pragma once

#include <cmath>
#include <vector>

#include "spatial_diar/nn/layers.hpp"

namespace spatial_diar::nn {

enum class OptimizerKind { Adam, Sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  ///< global L2 norm over trainable parameters; 0 disables
};

/// Adaptive-moment or plain gradient descent over a ParamStore. Frozen parameters and
/// parameters without a gradient are left untouched.
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  const OptimizerConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  long steps() const { return step_; }

  /// Global gradient norm over trainable parameters (before clipping).
  double grad_norm(const ParamStore<T>& store) const {
    double s = 0;
    for (const auto& p : store.all()) {
      if (p.frozen || !p.var.grad().size()) continue;
      for (T g : p.var.grad().data) s += double(g) * double(g);
    }
    return std::sqrt(s);
  }

  /// Returns the pre-clip gradient norm.
  double step(ParamStore<T>& store) {
    ++step_;
    auto& params = store.all();
    if (m_.size() < params.size()) {
      m_.resize(params.size());
      v_.resize(params.size());
    }
    const double norm = grad_norm(store);
    const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (p.frozen || !p.var.grad().size()) continue;
      auto& w = p.var.mutable_value().data;
      const auto& g = p.var.grad().data;
      if (cfg_.kind == OptimizerKind::Sgd) {
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= T(cfg_.lr * clip * double(g[j]));
        continue;
      }
      if (m_[i].size() != w.size()) {
        m_[i].assign(w.size(), 0.0);
        v_[i].assign(w.size(), 0.0);
      }
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = clip * double(g[j]);
        m_[i][j] = cfg_.beta1 * m_[i][j] + (1 - cfg_.beta1) * gj;
        v_[i][j] = cfg_.beta2 * v_[i][j] + (1 - cfg_.beta2) * gj * gj;
        const double upd = cfg_.lr * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + cfg_.eps);
        w[j] -= T(upd);
      }
    }
    return norm;
  }

 private:
  OptimizerConfig cfg_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace spatial_diar::nn
