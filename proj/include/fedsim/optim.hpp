#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/error.hpp"
#include "fedsim/tensor.hpp"

namespace fedsim {

inline ParameterVector sgd_step(const ParameterVector& params, const ParameterVector& grad,
                                double lr) {
  require_same_layout(params, grad, "sgd_step");
  detail::require(lr > 0.0, "sgd_step: learning rate must be positive");
  ParameterVector out = params;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = params[i] - lr * grad[i];
  return out;
}

struct AdamHyper {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  static AdamState fresh(std::size_t n, AdamHyper hyper = {}) {
    return {std::vector<double>(n, 0.0), std::vector<double>(n, 0.0), 0, hyper};
  }
};

struct AdamResult {
  AdamState state;
  ParameterVector params;
};

// Adam with bias-corrected moments.
inline AdamResult adam_step(AdamState state, const ParameterVector& params,
                            const ParameterVector& grad) {
  require_same_layout(params, grad, "adam_step");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ValidationError("adam_step: state length does not match parameters");

  const auto& h = state.hyper;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  ParameterVector out = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    const double denom = std::sqrt(v_hat) + h.epsilon;
    // m_hat is exactly zero whenever denom is (no gradient seen yet).
    if (denom > 0.0) out[i] = params[i] - h.lr * m_hat / denom;
  }
  return {std::move(state), std::move(out)};
}

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    detail::require(lr > 0.0 && std::isfinite(lr), "optimizer: lr must be positive");
    if (kind == OptimizerKind::adam) {
      detail::require(beta1 >= 0.0 && beta1 < 1.0, "optimizer: beta1 must be in [0, 1)");
      detail::require(beta2 >= 0.0 && beta2 < 1.0, "optimizer: beta2 must be in [0, 1)");
      detail::require(epsilon >= 0.0, "optimizer: epsilon must be >= 0");
    }
  }

  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ValidationError("unknown optimizer '" + s + "' (expected sgd|adam)");
}

// Owns whatever state the configured optimizer needs for one training session.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::size_t num_params) : cfg_(cfg) {
    cfg_.validate();
    if (cfg_.kind == OptimizerKind::adam)
      adam_ = AdamState::fresh(num_params, {cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon});
  }

  ParameterVector step(const ParameterVector& params, const ParameterVector& grad) {
    if (cfg_.kind == OptimizerKind::sgd) return sgd_step(params, grad, cfg_.lr);
    auto r = adam_step(std::move(adam_), params, grad);
    adam_ = std::move(r.state);
    return std::move(r.params);
  }

 private:
  OptimizerConfig cfg_;
  AdamState adam_;
};

}  // namespace fedsim
