#include "promptkd/optim.hpp"

#include <cmath>
#include <string>

#include "promptkd/errors.hpp"

namespace promptkd {

void adamw_step(std::span<double> params, std::span<const double> grads, AdamState& state,
                const AdamWConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ConfigError("adamw: learning rate must be positive");
  const std::size_t n = params.size();
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n || (!grads.empty() && grads.size() != n)) {
    throw DimensionError("adamw: state/gradient size does not match " + std::to_string(n) +
                         " parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads.empty() ? 0.0 : grads[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * cfg.weight_decay * params[i];
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg)
    : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw ConfigError("adamw: learning rate must be positive");
}

void AdamW::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    adamw_step(p.mutable_values(), p.grad(), states_[i], cfg_);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace promptkd
