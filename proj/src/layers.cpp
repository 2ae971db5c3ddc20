// SPDX-License-Identifier: Apache-2.0

#include "spn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "spn/errors.hpp"

namespace spn {

namespace {

double init_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

void require_features(const char* layer, const Tensor& x, std::size_t dim) {
  if (x.rank() != 2 || x.shape()[1] != dim) {
    throw ShapeError(std::string(layer) + ": expected [T x " + std::to_string(dim) + "], got " +
                     shape_str(x.shape()));
  }
}

}  // namespace

// ---- Conv1DLayer ---------------------------------------------------------

Conv1DLayer::Conv1DLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                         Rng& rng)
    : in_(in_channels), out_(out_channels), kernel_size_(kernel_size) {
  if (kernel_size == 0 || kernel_size % 2 == 0) {
    throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(kernel_size));
  }
  const double bound = init_bound(in_channels * kernel_size);
  weight_ = uniform_param({out_channels, in_channels, kernel_size}, bound, rng);
  bias_ = uniform_param({out_channels}, bound, rng);
}

Tensor Conv1DLayer::forward(const Tensor& x) const {
  require_features("conv1d", x, in_);
  return conv1d_same(x, weight_, bias_);
}

void Conv1DLayer::register_params(const std::string& prefix, Partition partition,
                                  ParamSet& params) const {
  params.add(prefix + ".weight", partition, weight_);
  params.add(prefix + ".bias", partition, bias_);
}

// ---- ConvBank ------------------------------------------------------------

ConvBank::ConvBank(std::size_t in_channels, std::size_t channels_per_branch,
                   std::vector<std::size_t> kernel_sizes, Rng& rng)
    : channels_(channels_per_branch) {
  if (kernel_sizes.empty()) throw ConfigError("conv bank: no kernel sizes");
  std::sort(kernel_sizes.begin(), kernel_sizes.end());
  for (std::size_t k : kernel_sizes) branches_.emplace_back(in_channels, channels_per_branch, k, rng);
}

Tensor ConvBank::forward(const Tensor& x) const {
  if (x.rank() != 2) throw ShapeError("conv bank: expected [T x D], got " + shape_str(x.shape()));
  std::vector<Tensor> outputs;
  outputs.reserve(branches_.size());
  for (const Conv1DLayer& branch : branches_) outputs.push_back(branch.forward(x));
  return concat_cols(outputs);
}

void ConvBank::register_params(const std::string& prefix, Partition partition,
                               ParamSet& params) const {
  for (const Conv1DLayer& branch : branches_) {
    branch.register_params(prefix + ".k" + std::to_string(branch.kernel_size()), partition, params);
  }
}

// ---- DenseLayer ----------------------------------------------------------

DenseLayer::DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation activation, Rng& rng)
    : in_(in_dim), out_(out_dim), activation_(activation) {
  const double bound = init_bound(in_dim);
  weight_ = uniform_param({out_dim, in_dim}, bound, rng);
  bias_ = uniform_param({out_dim}, bound, rng);
}

Tensor DenseLayer::forward(const Tensor& x) const {
  require_features("dense", x, in_);
  Tensor y = add(matmul_nt(x, weight_), broadcast_rows(bias_, x.shape()[0]));
  switch (activation_) {
    case Activation::kNone: return y;
    case Activation::kTanh: return tanh(y);
    case Activation::kRelu: return relu(y);
  }
  return y;
}

void DenseLayer::register_params(const std::string& prefix, Partition partition,
                                 ParamSet& params) const {
  params.add(prefix + ".weight", partition, weight_);
  params.add(prefix + ".bias", partition, bias_);
}

// ---- LayerNorm -----------------------------------------------------------

LayerNorm::LayerNorm(std::size_t dim)
    : dim_(dim), gain_(Tensor::full({dim}, 1.0, true)), offset_(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const {
  require_features("layer_norm", x, dim_);
  const std::size_t steps = x.shape()[0];
  return add(mul(layer_norm_rows(x, kEpsilon), broadcast_rows(gain_, steps)),
             broadcast_rows(offset_, steps));
}

void LayerNorm::register_params(const std::string& prefix, Partition partition,
                                ParamSet& params) const {
  params.add(prefix + ".gain", partition, gain_);
  params.add(prefix + ".offset", partition, offset_);
}

// ---- MultiHeadAttentionLayer ---------------------------------------------

MultiHeadAttentionLayer::MultiHeadAttentionLayer(std::size_t model_dim, std::size_t heads,
                                                 std::size_t head_dim, Rng& rng)
    : model_dim_(model_dim), heads_(heads), head_dim_(head_dim) {
  if (heads == 0 || head_dim == 0) throw ConfigError("attention: heads and head_dim must be positive");
  const std::size_t inner = heads * head_dim;
  const double in_bound = init_bound(model_dim);
  wq_ = uniform_param({model_dim, inner}, in_bound, rng);
  bq_ = uniform_param({inner}, in_bound, rng);
  wk_ = uniform_param({model_dim, inner}, in_bound, rng);
  wv_ = uniform_param({model_dim, inner}, in_bound, rng);
  bv_ = uniform_param({inner}, in_bound, rng);
  const double out_bound = init_bound(inner);
  wo_ = uniform_param({inner, model_dim}, out_bound, rng);
  bo_ = uniform_param({model_dim}, out_bound, rng);
}

Tensor MultiHeadAttentionLayer::forward(const Tensor& x, std::vector<Tensor>* attention) const {
  require_features("attention", x, model_dim_);
  const std::size_t steps = x.shape()[0];
  const Tensor q = add(matmul(x, wq_), broadcast_rows(bq_, steps));
  const Tensor k = matmul(x, wk_);
  const Tensor v = add(matmul(x, wv_), broadcast_rows(bv_, steps));
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim_));

  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const std::size_t lo = h * head_dim_, hi = lo + head_dim_;
    const Tensor scores = scale(matmul_nt(slice_cols(q, lo, hi), slice_cols(k, lo, hi)), inv_scale);
    const Tensor weights = softmax(scores);
    if (attention) attention->push_back(weights);
    head_outputs.push_back(matmul(weights, slice_cols(v, lo, hi)));
  }
  const Tensor mixed = heads_ == 1 ? head_outputs.front() : concat_cols(head_outputs);
  const Tensor projected = add(matmul(mixed, wo_), broadcast_rows(bo_, steps));
  return add(x, projected);
}

void MultiHeadAttentionLayer::register_params(const std::string& prefix, Partition partition,
                                              ParamSet& params) const {
  params.add(prefix + ".query.weight", partition, wq_);
  params.add(prefix + ".query.bias", partition, bq_);
  params.add(prefix + ".key.weight", partition, wk_);
  params.add(prefix + ".value.weight", partition, wv_);
  params.add(prefix + ".value.bias", partition, bv_);
  params.add(prefix + ".output.weight", partition, wo_);
  params.add(prefix + ".output.bias", partition, bo_);
}

// ---- AttentionStack ------------------------------------------------------

AttentionStack::AttentionStack(std::size_t model_dim, std::size_t heads, std::size_t head_dim,
                               std::size_t layers, Rng& rng)
    : model_dim_(model_dim), norm_(model_dim) {
  for (std::size_t i = 0; i < layers; ++i) layers_.emplace_back(model_dim, heads, head_dim, rng);
}

Tensor AttentionStack::forward(const Tensor& x, std::vector<Tensor>* attention) const {
  require_features("attention stack", x, model_dim_);
  Tensor h = x;
  for (const MultiHeadAttentionLayer& layer : layers_) h = layer.forward(h, attention);
  return norm_.forward(h);
}

void AttentionStack::register_params(const std::string& prefix, Partition partition,
                                     ParamSet& params) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].register_params(prefix + ".layer" + std::to_string(i), partition, params);
  }
  norm_.register_params(prefix + ".norm", partition, params);
}

// ---- LSTM ----------------------------------------------------------------

Tensor lstm_direction_forward(const LstmDirection& cell, const Tensor& x, bool reverse) {
  if (x.rank() != 2) throw ShapeError("lstm: expected [T x D], got " + shape_str(x.shape()));
  const std::size_t steps = x.shape()[0];
  if (cell.input_weight.shape()[0] != x.shape()[1]) {
    throw ShapeError("lstm: input " + shape_str(x.shape()) + " does not match input weight " +
                     shape_str(cell.input_weight.shape()));
  }
  // Input contributions for all frames at once: [T x 4H].
  const Tensor projected = add(matmul(x, cell.input_weight), broadcast_rows(cell.bias, steps));
  return lstm_recurrence(projected, cell.recurrent_weight, reverse);
}

BLSTMLayer::BLSTMLayer(std::size_t input_dim, std::size_t hidden, Rng& rng)
    : input_dim_(input_dim), hidden_(hidden) {
  const double bound = init_bound(hidden);
  for (LstmDirection* cell : {&fwd_, &bwd_}) {
    cell->input_weight = uniform_param({input_dim, 4 * hidden}, bound, rng);
    cell->recurrent_weight = uniform_param({hidden, 4 * hidden}, bound, rng);
    cell->bias = uniform_param({4 * hidden}, bound, rng);
  }
}

Tensor BLSTMLayer::forward(const Tensor& x) const {
  require_features("blstm", x, input_dim_);
  return concat_cols({lstm_direction_forward(fwd_, x, false), lstm_direction_forward(bwd_, x, true)});
}

void BLSTMLayer::register_params(const std::string& prefix, Partition partition,
                                 ParamSet& params) const {
  params.add(prefix + ".fwd.input_weight", partition, fwd_.input_weight);
  params.add(prefix + ".fwd.recurrent_weight", partition, fwd_.recurrent_weight);
  params.add(prefix + ".fwd.bias", partition, fwd_.bias);
  params.add(prefix + ".bwd.input_weight", partition, bwd_.input_weight);
  params.add(prefix + ".bwd.recurrent_weight", partition, bwd_.recurrent_weight);
  params.add(prefix + ".bwd.bias", partition, bwd_.bias);
}

}  // namespace spn
