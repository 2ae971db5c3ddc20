// SPDX-License-Identifier: Apache-2.0

#ifndef SPN_ADAM_HPP
#define SPN_ADAM_HPP

#include <cstdint>
#include <vector>

#include "spn/params.hpp"

namespace spn {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers are keyed by position in the ParamSet the state was built for.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;

  AdamState() = default;
  AdamState(const ParamSet& params, AdamConfig cfg);
};

/// One bias-corrected Adam update over every parameter that currently
/// requires a gradient. Parameters without gradient tracking are frozen and
/// left untouched, as are their moments.
void adam_step(ParamSet& params, AdamState& state);

}  // namespace spn

#endif  // SPN_ADAM_HPP
