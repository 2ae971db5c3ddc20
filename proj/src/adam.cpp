// SPDX-License-Identifier: Apache-2.0

#include "spn/adam.hpp"

#include <cmath>

#include "spn/errors.hpp"

namespace spn {

AdamState::AdamState(const ParamSet& params, AdamConfig cfg) : config(cfg) {
  for (const NamedParam& p : params.entries()) {
    first_moment.emplace_back(p.tensor.numel(), 0.0);
    second_moment.emplace_back(p.tensor.numel(), 0.0);
  }
}

void adam_step(ParamSet& params, AdamState& state) {
  if (state.first_moment.size() != params.size()) {
    throw ConfigError("adam: state built for " + std::to_string(state.first_moment.size()) +
                      " parameters, got " + std::to_string(params.size()));
  }
  const AdamConfig& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t k = 0; k < params.size(); ++k) {
    NamedParam& p = params.entries()[k];
    if (!p.tensor.requires_grad()) continue;
    if (!p.tensor.has_grad()) throw ConfigError("adam: trainable parameter '" + p.name + "' has no gradient");
    const auto grad = p.tensor.grad();
    auto value = p.tensor.mutable_data();
    std::vector<double>& m = state.first_moment[k];
    std::vector<double>& v = state.second_moment[k];
    if (m.size() != value.size()) throw ConfigError("adam: moment shape mismatch for '" + p.name + "'");
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      if (!std::isfinite(g)) throw NumericalError("adam: non-finite gradient in '" + p.name + "'");
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      value[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace spn
