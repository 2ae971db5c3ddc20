// SPDX-License-Identifier: Apache-2.0

#include "spn/params.hpp"

#include <algorithm>

#include "spn/errors.hpp"

namespace spn {

std::string_view partition_name(Partition partition) {
  switch (partition) {
    case Partition::kSpeech: return "speech";
    case Partition::kFusion: return "fusion";
    case Partition::kPhoneme: return "phoneme";
    case Partition::kInversion: return "inversion";
  }
  return "unknown";
}

Partition partition_from_name(std::string_view name) {
  for (Partition p : {Partition::kSpeech, Partition::kFusion, Partition::kPhoneme, Partition::kInversion}) {
    if (partition_name(p) == name) return p;
  }
  throw ConfigError("unknown partition '" + std::string(name) + "'");
}

void ParamSet::add(std::string name, Partition partition, Tensor tensor) {
  if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  entries_.push_back({std::move(name), partition, std::move(tensor)});
}

void ParamSet::append(const ParamSet& other) {
  for (const NamedParam& p : other.entries_) add(p.name, p.partition, p.tensor);
}

const NamedParam* ParamSet::find(std::string_view name) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const NamedParam& p) { return p.name == name; });
  return it == entries_.end() ? nullptr : &*it;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const NamedParam& p : entries_) n += p.tensor.numel();
  return n;
}

void ParamSet::zero_grad() {
  for (NamedParam& p : entries_) p.tensor.zero_grad();
}

void ParamSet::set_trainable(Partition partition, bool trainable) {
  for (NamedParam& p : entries_) {
    if (p.partition == partition) p.tensor.set_requires_grad(trainable);
  }
}

Tensor uniform_param(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace spn
