#include "marge/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace marge {

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               double lr, const AdamConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    if (!p.requires_grad || !p.grad) {
      throw std::runtime_error("adam_step: parameter '" + name + "' has no grad buffer");
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m.assign(p.numel(), 0.0);
    if (v.empty()) v.assign(p.numel(), 0.0);
    if (m.size() != p.numel() || v.size() != p.numel()) {
      throw std::runtime_error("adam_step: state shape mismatch for '" + name + "'");
    }
    const size_t n = p.numel();
    for (size_t i = 0; i < n; ++i) {
      const double g = (*p.grad)[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      (*p.data)[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace marge
