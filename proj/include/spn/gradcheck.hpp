// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient suites shared by the command-line tool and the
// test binaries.

#ifndef SPN_GRADCHECK_HPP
#define SPN_GRADCHECK_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "spn/model.hpp"

namespace spn {

struct GradCheckEntry {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return error < tolerance; }
};

inline constexpr double kLayerGradTolerance = 1e-5;
inline constexpr double kModelGradTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-6;

/// Every primitive (coordinate-wise) and every layer type (directional, on
/// inputs and each parameter tensor) at `points` random points.
std::vector<GradCheckEntry> layer_grad_suite(std::uint64_t seed, std::size_t points = 3);

/// Joint loss of a full model on a `frames`-frame random utterance;
/// directional checks on `samples` parameter tensors drawn evenly across
/// the model's partitions.
std::vector<GradCheckEntry> model_grad_check(const ModelConfig& config, std::uint64_t seed, std::size_t frames = 3,
                                             std::size_t samples = 8);

}  // namespace spn

#endif  // SPN_GRADCHECK_HPP
