// SPDX-License-Identifier: Apache-2.0

#include "spn/model.hpp"

#include "spn/errors.hpp"

namespace spn {

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.conv_channels = 8;
  c.model_dim = 16;
  c.heads = 2;
  c.head_dim = 8;
  c.attention_layers = 1;
  c.speech_dense = 32;
  c.phoneme_hidden = 16;
  c.phoneme_dense = 32;
  c.fusion_hidden = 16;
  c.fusion_dense = 32;
  c.inversion_hidden = 16;
  return c;
}

ModelConfig ModelConfig::from_name(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  throw ConfigError("unknown model preset '" + name + "' (expected full or desk)");
}

void ModelConfig::validate() const {
  const std::size_t dims[] = {feature_dim,  phoneme_dim,    output_dim,     conv_channels, model_dim,
                              heads,        head_dim,       attention_layers, speech_dense, phoneme_hidden,
                              phoneme_layers, phoneme_dense, fusion_hidden,  fusion_dense,  inversion_hidden};
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("model dimensions and layer counts must be positive");
  }
  if (kernel_sizes.empty()) throw ConfigError("conv bank needs at least one kernel size");
  for (std::size_t k : kernel_sizes) {
    if (k % 2 == 0) throw ConfigError("conv kernel sizes must be odd, got " + std::to_string(k));
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"feature_dim", feature_dim},
          {"phoneme_dim", phoneme_dim},
          {"output_dim", output_dim},
          {"conv_channels", conv_channels},
          {"kernel_sizes", kernel_sizes},
          {"model_dim", model_dim},
          {"heads", heads},
          {"head_dim", head_dim},
          {"attention_layers", attention_layers},
          {"speech_dense", speech_dense},
          {"phoneme_hidden", phoneme_hidden},
          {"phoneme_layers", phoneme_layers},
          {"phoneme_dense", phoneme_dense},
          {"fusion_hidden", fusion_hidden},
          {"fusion_dense", fusion_dense},
          {"inversion_hidden", inversion_hidden},
          {"use_phoneme_stream", use_phoneme_stream}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.feature_dim = j.at("feature_dim");
    c.phoneme_dim = j.at("phoneme_dim");
    c.output_dim = j.at("output_dim");
    c.conv_channels = j.at("conv_channels");
    c.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
    c.model_dim = j.at("model_dim");
    c.heads = j.at("heads");
    c.head_dim = j.at("head_dim");
    c.attention_layers = j.at("attention_layers");
    c.speech_dense = j.at("speech_dense");
    c.phoneme_hidden = j.at("phoneme_hidden");
    c.phoneme_layers = j.at("phoneme_layers");
    c.phoneme_dense = j.at("phoneme_dense");
    c.fusion_hidden = j.at("fusion_hidden");
    c.fusion_dense = j.at("fusion_dense");
    c.inversion_hidden = j.at("inversion_hidden");
    c.use_phoneme_stream = j.at("use_phoneme_stream");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- sub-networks -----------------------------------------------------------

SpeechStreamNet::SpeechStreamNet(const ModelConfig& cfg, Rng& rng)
    : conv_(cfg.feature_dim, cfg.conv_channels, cfg.kernel_sizes, rng),
      projection_(cfg.feature_dim, cfg.model_dim, Activation::kNone, rng),
      attention_(cfg.model_dim, cfg.heads, cfg.head_dim, cfg.attention_layers, rng),
      dense1_(conv_.out_dim() + cfg.model_dim, cfg.speech_dense, Activation::kTanh, rng),
      dense2_(cfg.speech_dense, cfg.speech_dense, Activation::kTanh, rng) {}

Tensor SpeechStreamNet::forward(const Tensor& mfcc, std::vector<Tensor>* attention) const {
  const Tensor local = conv_.forward(mfcc);
  const Tensor global = attention_.forward(projection_.forward(mfcc), attention);
  return dense2_.forward(dense1_.forward(concat_cols({local, global})));
}

void SpeechStreamNet::register_params(const std::string& prefix, ParamSet& params) const {
  conv_.register_params(prefix + ".conv", Partition::kSpeech, params);
  projection_.register_params(prefix + ".projection", Partition::kSpeech, params);
  attention_.register_params(prefix + ".attention", Partition::kSpeech, params);
  dense1_.register_params(prefix + ".dense1", Partition::kSpeech, params);
  dense2_.register_params(prefix + ".dense2", Partition::kSpeech, params);
}

namespace {

std::vector<BLSTMLayer> make_phoneme_blstms(const ModelConfig& cfg, Rng& rng) {
  std::vector<BLSTMLayer> layers;
  for (std::size_t i = 0; i < cfg.phoneme_layers; ++i) {
    layers.emplace_back(i == 0 ? cfg.phoneme_dim : 2 * cfg.phoneme_hidden, cfg.phoneme_hidden, rng);
  }
  return layers;
}

}  // namespace

PhonemeStreamNet::PhonemeStreamNet(const ModelConfig& cfg, Rng& rng)
    : blstms_(make_phoneme_blstms(cfg, rng)),
      dense_(2 * cfg.phoneme_hidden, cfg.phoneme_dense, Activation::kTanh, rng),
      output_(cfg.phoneme_dense, cfg.output_dim, Activation::kNone, rng) {}

Tensor PhonemeStreamNet::forward(const Tensor& phonemes) const {
  Tensor h = phonemes;
  for (const BLSTMLayer& layer : blstms_) h = layer.forward(h);
  return output_.forward(dense_.forward(h));
}

void PhonemeStreamNet::register_params(const std::string& prefix, ParamSet& params) const {
  for (std::size_t i = 0; i < blstms_.size(); ++i) {
    blstms_[i].register_params(prefix + ".blstm" + std::to_string(i), Partition::kPhoneme, params);
  }
  dense_.register_params(prefix + ".dense", Partition::kPhoneme, params);
  output_.register_params(prefix + ".output", Partition::kPhoneme, params);
}

FusionNet::FusionNet(const ModelConfig& cfg, Rng& rng)
    : blstm_(cfg.speech_dense, cfg.fusion_hidden, rng),
      dense_(2 * cfg.fusion_hidden, cfg.fusion_dense, Activation::kTanh, rng) {}

Tensor FusionNet::forward(const Tensor& speech) const { return dense_.forward(blstm_.forward(speech)); }

void FusionNet::register_params(const std::string& prefix, ParamSet& params) const {
  blstm_.register_params(prefix + ".blstm", Partition::kFusion, params);
  dense_.register_params(prefix + ".dense", Partition::kFusion, params);
}

InversionNet::InversionNet(const ModelConfig& cfg, Rng& rng)
    : with_phonemes_(cfg.use_phoneme_stream),
      blstm_(cfg.fusion_dense + (cfg.use_phoneme_stream ? cfg.output_dim : 0), cfg.inversion_hidden, rng),
      output_(2 * cfg.inversion_hidden, cfg.output_dim, Activation::kNone, rng) {}

Tensor InversionNet::forward(const Tensor& fused, const Tensor& phoneme_features) const {
  if (with_phonemes_ && !phoneme_features.defined()) {
    throw ConfigError("inversion network expects phoneme features");
  }
  const Tensor input = with_phonemes_ ? concat_cols({fused, phoneme_features}) : fused;
  return output_.forward(blstm_.forward(input));
}

void InversionNet::register_params(const std::string& prefix, ParamSet& params) const {
  blstm_.register_params(prefix + ".blstm", Partition::kInversion, params);
  output_.register_params(prefix + ".output", Partition::kInversion, params);
}

// ---- model --------------------------------------------------------------------

SpnModel::SpnModel(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
  config_.validate();
  Rng rng(seed);
  speech_ = std::make_unique<SpeechStreamNet>(config_, rng);
  if (config_.use_phoneme_stream) phoneme_ = std::make_unique<PhonemeStreamNet>(config_, rng);
  fusion_ = std::make_unique<FusionNet>(config_, rng);
  inversion_ = std::make_unique<InversionNet>(config_, rng);
  speech_->register_params("speech", params_);
  if (phoneme_) phoneme_->register_params("phoneme", params_);
  fusion_->register_params("fusion", params_);
  inversion_->register_params("inversion", params_);
}

SpnOutput SpnModel::forward(const Tensor& mfcc, const Tensor& phonemes) const {
  if (mfcc.rank() != 2 || mfcc.cols() != config_.feature_dim) {
    throw ShapeError("speech input must be [T x " + std::to_string(config_.feature_dim) + "], got " +
                     shape_str(mfcc.shape()));
  }
  SpnOutput out;
  if (phoneme_) {
    if (phonemes.rank() != 2 || phonemes.rows() != mfcc.rows()) {
      throw ShapeError("speech input " + shape_str(mfcc.shape()) + " and phoneme input " +
                       shape_str(phonemes.shape()) + " must share T");
    }
    out.phoneme_pred = phoneme_->forward(phonemes);
  }
  const Tensor fused = fusion_->forward(speech_->forward(mfcc));
  out.spn_pred = inversion_->forward(fused, out.phoneme_pred);
  return out;
}

Tensor SpnModel::forward_phoneme(const Tensor& phonemes) const {
  if (!phoneme_) throw ConfigError("model has no phoneme stream");
  if (phonemes.rank() != 2 || phonemes.cols() != config_.phoneme_dim) {
    throw ShapeError("phoneme input must be [T x " + std::to_string(config_.phoneme_dim) + "], got " +
                     shape_str(phonemes.shape()));
  }
  return phoneme_->forward(phonemes);
}

Tensor joint_loss(const Tensor& spn_pred, const Tensor& phoneme_pred, const Tensor& target,
                  const LossWeights& weights, LossReduction reduction) {
  if (weights.spn < 0.0 || weights.phoneme < 0.0) throw ConfigError("loss weights must be non-negative");
  if (weights.spn == 0.0 && weights.phoneme == 0.0) throw ConfigError("at least one loss weight must be positive");
  const double frames = static_cast<double>(target.rows());
  const double norm = reduction == LossReduction::kFrameMean ? 1.0 / frames : 1.0;
  auto term = [&](const Tensor& pred, double w, const char* which) {
    if (!pred.defined()) throw ConfigError(std::string(which) + " prediction missing for a weighted loss term");
    if (pred.shape() != target.shape()) {
      throw ShapeError(std::string("joint_loss: ") + which + " prediction " + shape_str(pred.shape()) +
                       " vs target " + shape_str(target.shape()));
    }
    return scale(sum(square(sub(pred, target))), w * norm);
  };
  if (weights.phoneme == 0.0) return term(spn_pred, weights.spn, "spn");
  if (weights.spn == 0.0) return term(phoneme_pred, weights.phoneme, "phoneme");
  return add(term(spn_pred, weights.spn, "spn"), term(phoneme_pred, weights.phoneme, "phoneme"));
}

}  // namespace spn
