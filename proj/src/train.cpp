// SPDX-License-Identifier: Apache-2.0

#include "spn/train.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "spn/adam.hpp"
#include "spn/errors.hpp"
#include "spn/log.hpp"

namespace spn {

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::kS1: return "S1";
    case Scenario::kS2: return "S2";
    case Scenario::kS3: return "S3";
  }
  return "?";
}

Scenario scenario_from_name(const std::string& name) {
  if (name == "S1" || name == "s1") return Scenario::kS1;
  if (name == "S2" || name == "s2") return Scenario::kS2;
  if (name == "S3" || name == "s3") return Scenario::kS3;
  throw ConfigError("unknown scenario '" + name + "' (expected S1, S2 or S3)");
}

LossWeights ScenarioConfig::effective_weights() const {
  LossWeights w = weights;
  if (id == Scenario::kS1) w.spn = 0.0;
  if (id == Scenario::kS2) w.phoneme = 0.0;
  return w;
}

void ScenarioConfig::validate(const ModelConfig& model) const {
  if (weights.spn < 0.0 || weights.phoneme < 0.0) throw ConfigError("loss weights must be non-negative");
  if (id != Scenario::kS3 && !model.use_phoneme_stream) {
    throw ConfigError(scenario_name(id) + " needs the phoneme stream");
  }
  if (id == Scenario::kS2 && !pretrained) throw ConfigError("scenario S2 requires a pretrained checkpoint");
  if (!model.use_phoneme_stream && weights.spn == 0.0) {
    throw ConfigError("without the phoneme stream the spn loss weight must be positive");
  }
  const LossWeights w = effective_weights();
  if (w.spn == 0.0 && w.phoneme == 0.0) {
    throw ConfigError("scenario " + scenario_name(id) + " has no positive loss term");
  }
}

void apply_scenario(const ScenarioConfig& config, SpnModel& model, const Checkpoint* pretrained) {
  config.validate(model.config());
  ParamSet& params = model.params();
  switch (config.id) {
    case Scenario::kS1:
      params.set_trainable(Partition::kSpeech, false);
      params.set_trainable(Partition::kFusion, false);
      params.set_trainable(Partition::kInversion, false);
      params.set_trainable(Partition::kPhoneme, true);
      break;
    case Scenario::kS2:
      if (!pretrained) throw ConfigError("scenario S2 requires a pretrained checkpoint");
      restore_params(params, *pretrained, Partition::kPhoneme);
      params.set_trainable(Partition::kSpeech, true);
      params.set_trainable(Partition::kFusion, true);
      params.set_trainable(Partition::kInversion, true);
      params.set_trainable(Partition::kPhoneme, false);
      break;
    case Scenario::kS3:
      for (Partition p : {Partition::kSpeech, Partition::kFusion, Partition::kPhoneme, Partition::kInversion}) {
        params.set_trainable(p, true);
      }
      break;
  }
}

// ---- target normalisation ---------------------------------------------------

TargetNorm TargetNorm::identity() {
  TargetNorm n;
  n.mean.fill(0.0);
  n.scale.fill(1.0);
  return n;
}

TargetNorm TargetNorm::fit(const std::vector<const Utterance*>& utterances) {
  TargetNorm n = identity();
  std::array<double, kEmaChannels> sum{}, sq{};
  double frames = 0.0;
  for (const Utterance* u : utterances) {
    for (std::size_t t = 0; t < u->ema.rows; ++t) {
      for (std::size_t c = 0; c < kEmaChannels; ++c) sum[c] += u->ema(t, c);
    }
    frames += static_cast<double>(u->ema.rows);
  }
  if (frames == 0.0) return n;
  for (std::size_t c = 0; c < kEmaChannels; ++c) n.mean[c] = sum[c] / frames;
  for (const Utterance* u : utterances) {
    for (std::size_t t = 0; t < u->ema.rows; ++t) {
      for (std::size_t c = 0; c < kEmaChannels; ++c) sq[c] += (u->ema(t, c) - n.mean[c]) * (u->ema(t, c) - n.mean[c]);
    }
  }
  for (std::size_t c = 0; c < kEmaChannels; ++c) {
    const double sd = std::sqrt(sq[c] / frames);
    n.scale[c] = sd > 1e-9 ? sd : 1.0;
  }
  return n;
}

Matrix TargetNorm::apply(const Matrix& ema) const {
  Matrix out(ema.rows, ema.cols);
  for (std::size_t t = 0; t < ema.rows; ++t) {
    for (std::size_t c = 0; c < ema.cols; ++c) out(t, c) = (ema(t, c) - mean[c]) / scale[c];
  }
  return out;
}

Matrix TargetNorm::invert(const Matrix& normalized) const {
  Matrix out(normalized.rows, normalized.cols);
  for (std::size_t t = 0; t < normalized.rows; ++t) {
    for (std::size_t c = 0; c < normalized.cols; ++c) out(t, c) = normalized(t, c) * scale[c] + mean[c];
  }
  return out;
}

void TargetNorm::store(Checkpoint& checkpoint) const {
  checkpoint.arrays.push_back({"target_norm.mean", kStatisticTag, {kEmaChannels}, {mean.begin(), mean.end()}});
  checkpoint.arrays.push_back({"target_norm.scale", kStatisticTag, {kEmaChannels}, {scale.begin(), scale.end()}});
}

std::optional<TargetNorm> TargetNorm::load(const Checkpoint& checkpoint) {
  const CheckpointArray* m = checkpoint.find("target_norm.mean");
  const CheckpointArray* s = checkpoint.find("target_norm.scale");
  if (!m || !s) return std::nullopt;
  if (m->values.size() != kEmaChannels || s->values.size() != kEmaChannels) {
    throw CheckpointIncompatibleError("target normalisation arrays must have 12 entries");
  }
  TargetNorm n;
  std::copy(m->values.begin(), m->values.end(), n.mean.begin());
  std::copy(s->values.begin(), s->values.end(), n.scale.begin());
  return n;
}

nlohmann::json TrainHyper::to_json() const {
  return {{"epochs", epochs}, {"learning_rate", learning_rate}, {"batch", batch}, {"seed", seed}};
}

// ---- training ------------------------------------------------------------------

namespace {

struct Prepared {
  const Utterance* source;
  Tensor features;
  Tensor phonemes;
  Tensor target;
};

std::vector<Prepared> prepare(const std::vector<const Utterance*>& set, const TargetNorm& norm) {
  std::vector<Prepared> out;
  out.reserve(set.size());
  for (const Utterance* u : set) {
    out.push_back({u, u->features.to_tensor(), u->phonemes.to_tensor(), norm.apply(u->ema).to_tensor()});
  }
  return out;
}

Tensor utterance_loss(const SpnModel& model, const ScenarioConfig& scenario, const Prepared& p) {
  LossWeights w = scenario.effective_weights();
  if (!model.config().use_phoneme_stream) w.phoneme = 0.0;
  if (scenario.id == Scenario::kS1) {
    return joint_loss(Tensor(), model.forward_phoneme(p.phonemes), p.target, w, LossReduction::kFrameMean);
  }
  const SpnOutput out = model.forward(p.features, p.phonemes);
  return joint_loss(out.spn_pred, out.phoneme_pred, p.target, w, LossReduction::kFrameMean);
}

std::vector<const Utterance*> drop_empty(const std::vector<const Utterance*>& set, std::size_t* skipped) {
  std::vector<const Utterance*> kept;
  for (const Utterance* u : set) {
    if (u->frames() == 0) {
      log_warning("skipping utterance '" + u->id + "' with no frames");
      if (skipped) ++*skipped;
      continue;
    }
    kept.push_back(u);
  }
  return kept;
}

Rng shuffle_rng(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x73687566u};
  return Rng(seq);
}

}  // namespace

TrainResult train_model(SpnModel& model, const ScenarioConfig& scenario, const std::vector<const Utterance*>& train_set,
                        const std::vector<const Utterance*>& val_set, const TrainHyper& hyper,
                        std::optional<TargetNorm> norm, const EpochCallback& on_epoch) {
  scenario.validate(model.config());
  if (hyper.batch == 0) throw ConfigError("batch size must be positive");
  if (!(hyper.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");

  TrainResult result;
  const auto kept = drop_empty(train_set, &result.skipped);
  if (kept.empty()) throw DataError("no trainable utterances (all skipped or none given)");
  const auto val_kept = drop_empty(val_set, nullptr);

  result.norm = norm ? *norm : TargetNorm::fit(kept);
  const auto train_data = prepare(kept, result.norm);

  ParamSet& params = model.params();
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = hyper.learning_rate;
  AdamState state(params, adam_cfg);
  Rng rng = shuffle_rng(hyper.seed);

  std::vector<std::size_t> order(train_data.size());
  for (std::size_t epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    // Fisher-Yates with a plain modulus so the order is identical across
    // standard libraries.
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch) {
      const std::size_t end = std::min(order.size(), start + hyper.batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const Prepared& p = train_data[order[k]];
        const Tensor loss = utterance_loss(model, scenario, p);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw NumericalError("non-finite training loss on utterance '" + p.source->id + "' in epoch " +
                               std::to_string(epoch));
        }
        total += value;
        backward(scale(loss, inv));
      }
      adam_step(params, state);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = total / static_cast<double>(train_data.size());
    stats.val_loss = val_kept.empty() ? std::numeric_limits<double>::quiet_NaN()
                                      : evaluate_loss(model, scenario, val_kept, result.norm);
    result.trace.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

double evaluate_loss(const SpnModel& model, const ScenarioConfig& scenario, const std::vector<const Utterance*>& set,
                     const TargetNorm& norm) {
  NoGradGuard guard;
  const auto kept = drop_empty(set, nullptr);
  if (kept.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const Prepared& p : prepare(kept, norm)) total += utterance_loss(model, scenario, p).item();
  return total / static_cast<double>(kept.size());
}

Prediction predict(const SpnModel& model, const Utterance& utterance, const TargetNorm& norm, bool include_spn) {
  NoGradGuard guard;
  Prediction out;
  const Tensor phonemes = utterance.phonemes.to_tensor();
  if (include_spn) {
    const SpnOutput o = model.forward(utterance.features.to_tensor(), phonemes);
    out.spn = norm.invert(Matrix::from_tensor(o.spn_pred));
    if (o.phoneme_pred.defined()) out.phoneme = norm.invert(Matrix::from_tensor(o.phoneme_pred));
  } else if (model.config().use_phoneme_stream) {
    out.phoneme = norm.invert(Matrix::from_tensor(model.forward_phoneme(phonemes)));
  }
  for (const Matrix* m : {&out.spn, &out.phoneme}) {
    for (double v : m->data) {
      if (!std::isfinite(v)) throw NumericalError("non-finite prediction for utterance '" + utterance.id + "'");
    }
  }
  return out;
}

Checkpoint make_checkpoint(const SpnModel& model, const ScenarioConfig& scenario, const TrainHyper& hyper,
                           const TargetNorm& norm, std::uint64_t feature_hash) {
  Checkpoint ck;
  ck.feature_hash = feature_hash;
  ck.meta = {{"scenario", scenario_name(scenario.id)},
             {"loss_weights", {{"spn", scenario.weights.spn}, {"phoneme", scenario.weights.phoneme}}},
             {"hyper", hyper.to_json()},
             {"model", model.config().to_json()}};
  capture_params(model.params(), ck);
  norm.store(ck);
  return ck;
}

std::unique_ptr<SpnModel> model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.meta.contains("model")) throw CheckpointIncompatibleError("checkpoint has no model configuration");
  auto model = std::make_unique<SpnModel>(ModelConfig::from_json(checkpoint.meta.at("model")), 0);
  restore_params(model->params(), checkpoint);
  return model;
}

}  // namespace spn
