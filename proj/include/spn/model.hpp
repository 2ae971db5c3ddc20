// SPDX-License-Identifier: Apache-2.0
//
// The speech/phoneme two-stream inversion model.
//
//   phoneme one-hots --PhonemeStreamNet--> P [T x 12]
//   MFCC --SpeechStreamNet--> S [T x 300] --FusionNet--> F [T x 300]
//   [F ; P] --InversionNet--> EMA estimate [T x 12]
//
// FusionNet and InversionNet are small recurrent stand-ins for the fusion
// and inversion sub-networks, whose internals are not specified. With
// use_phoneme_stream off (the SPN-S ablation) InversionNet consumes F only
// and the phoneme partition is empty.

#ifndef SPN_MODEL_HPP
#define SPN_MODEL_HPP

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "spn/layers.hpp"
#include "spn/params.hpp"
#include "spn/tensor.hpp"

namespace spn {

struct ModelConfig {
  std::size_t feature_dim = 39;
  std::size_t phoneme_dim = 39;
  std::size_t output_dim = 12;
  std::size_t conv_channels = 64;
  std::vector<std::size_t> kernel_sizes{1, 3, 5, 7, 9};
  std::size_t model_dim = 512;
  std::size_t heads = 8;
  std::size_t head_dim = 64;
  std::size_t attention_layers = 6;
  std::size_t speech_dense = 300;
  std::size_t phoneme_hidden = 150;
  std::size_t phoneme_layers = 3;
  std::size_t phoneme_dense = 300;
  std::size_t fusion_hidden = 150;
  std::size_t fusion_dense = 300;
  std::size_t inversion_hidden = 150;
  bool use_phoneme_stream = true;

  /// Full-width architecture.
  static ModelConfig full();
  /// Reduced widths for single-core runs; same topology.
  static ModelConfig desk();
  static ModelConfig from_name(const std::string& name);

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

class SpeechStreamNet {
 public:
  SpeechStreamNet(const ModelConfig& cfg, Rng& rng);
  /// [T x feature_dim] -> [T x speech_dense]
  Tensor forward(const Tensor& mfcc, std::vector<Tensor>* attention = nullptr) const;
  void register_params(const std::string& prefix, ParamSet& params) const;
  ConvBank& conv_bank() { return conv_; }

 private:
  ConvBank conv_;
  DenseLayer projection_;
  AttentionStack attention_;
  DenseLayer dense1_, dense2_;
};

class PhonemeStreamNet {
 public:
  PhonemeStreamNet(const ModelConfig& cfg, Rng& rng);
  /// [T x phoneme_dim] -> [T x output_dim]
  Tensor forward(const Tensor& phonemes) const;
  void register_params(const std::string& prefix, ParamSet& params) const;
  std::vector<BLSTMLayer>& blstms() { return blstms_; }

 private:
  std::vector<BLSTMLayer> blstms_;
  DenseLayer dense_, output_;
};

class FusionNet {
 public:
  FusionNet(const ModelConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& speech) const;
  void register_params(const std::string& prefix, ParamSet& params) const;

 private:
  BLSTMLayer blstm_;
  DenseLayer dense_;
};

class InversionNet {
 public:
  InversionNet(const ModelConfig& cfg, Rng& rng);
  /// `phoneme_features` may be undefined when the phoneme stream is disabled.
  Tensor forward(const Tensor& fused, const Tensor& phoneme_features) const;
  void register_params(const std::string& prefix, ParamSet& params) const;

 private:
  bool with_phonemes_;
  BLSTMLayer blstm_;
  DenseLayer output_;
};

struct SpnOutput {
  Tensor spn_pred;      // [T x output_dim]; undefined when skipped
  Tensor phoneme_pred;  // [T x output_dim]; undefined without phoneme stream
};

/// Owns all four sub-networks. Parameters are initialised from `seed` in a
/// fixed order so equal seeds give bitwise-equal models. Not copyable: the
/// ParamSet shares storage with the layers.
class SpnModel {
 public:
  SpnModel(const ModelConfig& cfg, std::uint64_t seed);
  SpnModel(const SpnModel&) = delete;
  SpnModel& operator=(const SpnModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// Full forward pass. Inputs must share T.
  SpnOutput forward(const Tensor& mfcc, const Tensor& phonemes) const;
  /// Phoneme stream only (the speech path is not evaluated).
  Tensor forward_phoneme(const Tensor& phonemes) const;

  SpeechStreamNet& speech() { return *speech_; }
  PhonemeStreamNet& phoneme() { return *phoneme_; }

 private:
  ModelConfig config_;
  std::unique_ptr<SpeechStreamNet> speech_;
  std::unique_ptr<PhonemeStreamNet> phoneme_;
  std::unique_ptr<FusionNet> fusion_;
  std::unique_ptr<InversionNet> inversion_;
  ParamSet params_;
};

struct LossWeights {
  double spn = 1.0;      // w_m
  double phoneme = 1.0;  // w_n
};

enum class LossReduction {
  kSum,        // sum over frames and channels
  kFrameMean,  // sum over channels, mean over frames
};

/// w_m * ||spn_pred - target||^2 + w_n * ||phoneme_pred - target||^2.
/// A term with zero weight is skipped and its prediction may be undefined.
Tensor joint_loss(const Tensor& spn_pred, const Tensor& phoneme_pred, const Tensor& target,
                  const LossWeights& weights, LossReduction reduction = LossReduction::kSum);

}  // namespace spn

#endif  // SPN_MODEL_HPP
