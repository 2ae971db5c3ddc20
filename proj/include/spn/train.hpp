// SPDX-License-Identifier: Apache-2.0
//
// Training scenarios and the optimisation loop.
//
//   S1  phoneme stream only, phoneme loss term only
//   S2  phoneme stream loaded from a pretrained checkpoint and frozen;
//       speech, fusion and inversion trained on the SPN loss term
//   S3  everything trained on both terms

#ifndef SPN_TRAIN_HPP
#define SPN_TRAIN_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spn/checkpoint.hpp"
#include "spn/dataset.hpp"
#include "spn/model.hpp"

namespace spn {

enum class Scenario { kS1, kS2, kS3 };

std::string scenario_name(Scenario s);
Scenario scenario_from_name(const std::string& name);

struct ScenarioConfig {
  Scenario id = Scenario::kS3;
  std::optional<std::filesystem::path> pretrained;
  LossWeights weights;

  /// The configured weights with the terms the scenario excludes set to 0.
  LossWeights effective_weights() const;
  void validate(const ModelConfig& model) const;
};

/// Marks partitions trainable or frozen for `config`. For S2 the phoneme
/// partition is first overwritten from `pretrained`, which is required.
void apply_scenario(const ScenarioConfig& config, SpnModel& model, const Checkpoint* pretrained);

/// Per-channel z-scoring of EMA targets, fitted on a training fold.
struct TargetNorm {
  std::array<double, kEmaChannels> mean{};
  std::array<double, kEmaChannels> scale{};

  static TargetNorm identity();
  static TargetNorm fit(const std::vector<const Utterance*>& utterances);
  Matrix apply(const Matrix& ema) const;
  Matrix invert(const Matrix& normalized) const;

  void store(Checkpoint& checkpoint) const;
  static std::optional<TargetNorm> load(const Checkpoint& checkpoint);
  friend bool operator==(const TargetNorm&, const TargetNorm&) = default;
};

struct TrainHyper {
  std::size_t epochs = 20;
  double learning_rate = 1e-4;
  std::size_t batch = 5;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  /// NaN when no validation utterances were given.
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> trace;
  TargetNorm norm;
  std::size_t skipped = 0;
};

/// Called after every epoch; may be empty.
using EpochCallback = std::function<void(const EpochStats&)>;

/// Seeded per-epoch shuffle; each batch runs utterances one by one,
/// accumulates gradients of the batch-mean loss and takes one Adam step.
/// Utterance losses are frame means of the joint loss on z-scored targets.
/// `norm` overrides fitting the target normalisation on `train_set`.
TrainResult train_model(SpnModel& model, const ScenarioConfig& scenario, const std::vector<const Utterance*>& train_set,
                        const std::vector<const Utterance*>& val_set, const TrainHyper& hyper,
                        std::optional<TargetNorm> norm = std::nullopt, const EpochCallback& on_epoch = {});

/// Mean per-utterance loss without recording gradients.
double evaluate_loss(const SpnModel& model, const ScenarioConfig& scenario, const std::vector<const Utterance*>& set,
                     const TargetNorm& norm);

struct Prediction {
  Matrix spn;      // [T x 12] mm; empty for S1
  Matrix phoneme;  // [T x 12] mm; empty without phoneme stream
};

Prediction predict(const SpnModel& model, const Utterance& utterance, const TargetNorm& norm,
                   bool include_spn = true);

/// Parameters, target normalisation and run metadata in one container.
Checkpoint make_checkpoint(const SpnModel& model, const ScenarioConfig& scenario, const TrainHyper& hyper,
                           const TargetNorm& norm, std::uint64_t feature_hash);
/// Rebuilds a model from a checkpoint written by make_checkpoint.
std::unique_ptr<SpnModel> model_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace spn

#endif  // SPN_TRAIN_HPP
