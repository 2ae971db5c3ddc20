// SPDX-License-Identifier: Apache-2.0
//
// Parametric layers. Every layer maps a [T x D_in] sequence to a
// [T x D_out] sequence, frame-major, and exposes its parameters through
// register_params() under a caller-supplied name prefix.

#ifndef SPN_LAYERS_HPP
#define SPN_LAYERS_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "spn/params.hpp"
#include "spn/tensor.hpp"

namespace spn {

/// Same-padded 1D convolution: y_j = b_j + sum_c W[j, c, :] (*) x_c.
class Conv1DLayer {
 public:
  Conv1DLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void register_params(const std::string& prefix, Partition partition, ParamSet& params) const;

  std::size_t kernel_size() const { return kernel_size_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  std::size_t in_, out_, kernel_size_;
  Tensor weight_;  // [out x in x kernel]
  Tensor bias_;    // [out]
};

/// Parallel multi-scale bank; branch outputs are concatenated along the
/// feature axis in ascending kernel order.
class ConvBank {
 public:
  ConvBank(std::size_t in_channels, std::size_t channels_per_branch,
           std::vector<std::size_t> kernel_sizes, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void register_params(const std::string& prefix, Partition partition, ParamSet& params) const;

  std::size_t out_dim() const { return branches_.size() * channels_; }
  std::vector<Conv1DLayer>& branches() { return branches_; }

 private:
  std::size_t channels_;
  std::vector<Conv1DLayer> branches_;
};

enum class Activation { kNone, kTanh, kRelu };

/// Frame-wise affine map V x + c followed by an optional activation.
class DenseLayer {
 public:
  DenseLayer(std::size_t in_dim, std::size_t out_dim, Activation activation, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void register_params(const std::string& prefix, Partition partition, ParamSet& params) const;

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

 private:
  std::size_t in_, out_;
  Activation activation_;
  Tensor weight_;  // [out x in]
  Tensor bias_;    // [out]
};

class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-5;

  explicit LayerNorm(std::size_t dim);

  Tensor forward(const Tensor& x) const;
  void register_params(const std::string& prefix, Partition partition, ParamSet& params) const;

  Tensor& gain() { return gain_; }
  Tensor& offset() { return offset_; }

 private:
  std::size_t dim_;
  Tensor gain_;
  Tensor offset_;
};

/// One self-attention layer with `heads` scaled dot-product heads of width
/// d_k, an output projection back to model_dim and a residual connection.
/// Query/key/value projections are stored as [model_dim x heads*d_k]
/// matrices whose column block h belongs to head h. Keys carry no bias: a
/// shared key offset shifts every score in a row equally and cancels in the
/// softmax.
class MultiHeadAttentionLayer {
 public:
  MultiHeadAttentionLayer(std::size_t model_dim, std::size_t heads, std::size_t head_dim, Rng& rng);

  /// When `attention` is non-null it receives one [T x T] weight matrix per head.
  Tensor forward(const Tensor& x, std::vector<Tensor>* attention = nullptr) const;
  void register_params(const std::string& prefix, Partition partition, ParamSet& params) const;

  std::size_t model_dim() const { return model_dim_; }
  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return head_dim_; }

 private:
  std::size_t model_dim_, heads_, head_dim_;
  Tensor wq_, wk_, wv_;  // [model_dim x heads*head_dim]
  Tensor bq_, bv_;       // [heads*head_dim]
  Tensor wo_;            // [heads*head_dim x model_dim]
  Tensor bo_;            // [model_dim]
};

/// Chained attention layers followed by a single LayerNorm.
class AttentionStack {
 public:
  AttentionStack(std::size_t model_dim, std::size_t heads, std::size_t head_dim, std::size_t layers,
                 Rng& rng);

  /// `attention`, when given, collects every head of every layer in order.
  Tensor forward(const Tensor& x, std::vector<Tensor>* attention = nullptr) const;
  void register_params(const std::string& prefix, Partition partition, ParamSet& params) const;

  std::size_t model_dim() const { return model_dim_; }
  LayerNorm& norm() { return norm_; }

 private:
  std::size_t model_dim_;
  std::vector<MultiHeadAttentionLayer> layers_;
  LayerNorm norm_;
};

/// Parameters of one LSTM direction. Gate blocks are ordered
/// input, forget, candidate, output along the 4*hidden axis.
struct LstmDirection {
  Tensor input_weight;      // U: [in x 4H]
  Tensor recurrent_weight;  // W: [H x 4H]
  Tensor bias;              // b: [4H]
};

/// Runs one gated LSTM direction over x [T x D]; returns states [T x H] in
/// input order. `reverse` consumes frames T-1 .. 0.
Tensor lstm_direction_forward(const LstmDirection& cell, const Tensor& x, bool reverse);

/// Bidirectional LSTM; frame i output is [s_i ; s'_i].
class BLSTMLayer {
 public:
  BLSTMLayer(std::size_t input_dim, std::size_t hidden, Rng& rng);

  Tensor forward(const Tensor& x) const;
  void register_params(const std::string& prefix, Partition partition, ParamSet& params) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t out_dim() const { return 2 * hidden_; }
  LstmDirection& forward_cell() { return fwd_; }
  LstmDirection& backward_cell() { return bwd_; }
  const LstmDirection& forward_cell() const { return fwd_; }
  const LstmDirection& backward_cell() const { return bwd_; }

 private:
  std::size_t input_dim_, hidden_;
  LstmDirection fwd_, bwd_;
};

}  // namespace spn

#endif  // SPN_LAYERS_HPP
