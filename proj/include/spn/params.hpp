// SPDX-License-Identifier: Apache-2.0

#ifndef SPN_PARAMS_HPP
#define SPN_PARAMS_HPP

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "spn/tensor.hpp"

namespace spn {

/// Sub-network a parameter belongs to; the unit of freezing and checkpointing.
enum class Partition : std::uint8_t {
  kSpeech = 0,
  kFusion = 1,
  kPhoneme = 2,
  kInversion = 3,
};

std::string_view partition_name(Partition partition);
Partition partition_from_name(std::string_view name);

struct NamedParam {
  std::string name;
  Partition partition;
  Tensor tensor;
};

/// Ordered, uniquely named collection of parameter handles. Handles share
/// storage with the owning layers.
class ParamSet {
 public:
  void add(std::string name, Partition partition, Tensor tensor);
  void append(const ParamSet& other);

  const std::vector<NamedParam>& entries() const { return entries_; }
  std::vector<NamedParam>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const NamedParam* find(std::string_view name) const;
  std::size_t scalar_count() const;

  void zero_grad();
  /// Gradient tracking on or off for every parameter of one partition.
  void set_trainable(Partition partition, bool trainable);

 private:
  std::vector<NamedParam> entries_;
};

using Rng = std::mt19937_64;

/// Leaf tensor filled with uniform(-bound, bound) and requires_grad set.
Tensor uniform_param(Shape shape, double bound, Rng& rng);

}  // namespace spn

#endif  // SPN_PARAMS_HPP
