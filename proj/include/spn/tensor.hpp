// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a graph node. Every primitive op records
// its inputs and an adjoint closure on the node it creates; backward() walks
// the reachable nodes in reverse creation order and accumulates gradients
// into every node that requires them. Leaf tensors created with
// requires_grad = true own a gradient buffer for their whole lifetime, so
// repeated backward() calls accumulate until zero_grad().

#ifndef SPN_TENSOR_HPP
#define SPN_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace spn {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major [rows x cols] matrix from nested initializer data.
  static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);
  static Tensor vector(const std::vector<double>& values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Extent of the leading axis of a rank-2 tensor.
  std::size_t rows() const;
  /// Extent of the last axis (1 for scalars).
  std::size_t cols() const;

  std::span<const double> data() const;
  /// Direct write access. Only meaningful on leaves between forward passes
  /// (optimizer updates, finite-difference probes).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  /// Toggle gradient tracking on a leaf. Enabling allocates a zeroed buffer.
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Value copy with no history.
  Tensor detach() const;
  /// Name of the op that produced this tensor ("leaf" for leaves).
  const std::string& op() const;

  detail::Node* node() const { return node_.get(); }

 private:
  friend Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> adjoint);
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::string op = "leaf";
  std::vector<Tensor> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> adjoint;

  std::vector<double>& ensure_grad();
};
}  // namespace detail

/// Creates an op result. Parents and adjoint are dropped when no parent
/// requires a gradient or when recording is disabled.
Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents, std::function<void(detail::Node&)> adjoint);

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Reverse-ordered record of the graph reachable from one root.
class Tape {
 public:
  explicit Tape(const Tensor& root);
  std::size_t size() const { return nodes_.size(); }
  /// Op names in replay order (root first).
  std::vector<std::string> ops() const;
  /// Seeds root.grad with `seed` and replays every adjoint.
  void replay(double seed = 1.0);

 private:
  std::vector<detail::Node*> nodes_;
  Tensor root_;
};

/// d(loss)/d(p) for every reachable p with requires_grad. Accumulates.
void backward(const Tensor& loss);

// ---- primitives ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
/// [m x k] . [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m x k] . [n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// Cross-correlation of x [T x C_in] with weight [C_out x C_in x K] plus
/// bias [C_out], zero-padded by `pad` frames on both sides. Output length
/// is T + 2*pad - K + 1.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad);
/// conv1d with pad = K/2 (K odd), preserving T.
Tensor conv1d_same(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// One LSTM direction over precomputed input gates `projected` [T x 4H]
/// (gate order i, f, g, o) with recurrent weight [H x 4H]. Zero initial
/// state; `reverse` runs from the last frame. Returns h [T x H] in frame order.
Tensor lstm_recurrence(const Tensor& projected, const Tensor& recurrent_weight, bool reverse);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
/// Softmax over the last axis.
Tensor softmax(const Tensor& a);
/// Per-row standardization over the last axis: (x - mean) / sqrt(var + eps).
Tensor layer_norm_rows(const Tensor& a, double eps);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

/// Concatenate rank-2 tensors along the feature (last) axis.
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Concatenate rank-2 tensors along the time (first) axis.
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// Repeat a vector [N] (or [1 x N]) over `steps` rows -> [steps x N].
Tensor broadcast_rows(const Tensor& v, std::size_t steps);

// ---- verification --------------------------------------------------------

/// Max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-12)
/// for a scalar function of one tensor argument.
double grad_check(const std::function<Tensor(const Tensor&)>& function, const Tensor& point,
                  double step);

struct ParamProbe {
  Tensor param;
  std::size_t index;
};

/// Same metric over selected coordinates of existing leaf tensors that feed a
/// zero-argument loss. The loss must be deterministic. Gradients of the probed
/// leaves are zeroed before the analytic pass.
double grad_check_params(const std::function<Tensor()>& loss, const std::vector<ParamProbe>& probes,
                         double step);

/// Directional variant: compares <grad, direction> with the central
/// difference of the loss along `direction` applied to `leaf`. Same relative
/// error metric as grad_check. The leaf's values are restored bit-exactly.
double grad_check_directional(const std::function<Tensor()>& loss, Tensor leaf,
                              std::span<const double> direction, double step);

}  // namespace spn

#endif  // SPN_TENSOR_HPP
