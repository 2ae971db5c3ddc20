// SPDX-License-Identifier: Apache-2.0

#include "spn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <sstream>
#include <unordered_set>

#include "spn/errors.hpp"

namespace spn {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  for (std::size_t extent : shape) {
    if (extent == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  if (requires_grad) {
    node->requires_grad = true;
    node->ensure_grad();
  }
  return node;
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << " x ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::vector<double>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

// ---- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node({}, {value}, requires_grad));
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
  if (rows.empty()) throw ShapeError("tensor: empty matrix literal");
  const std::size_t cols = rows.front().size();
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& row : rows) {
    if (row.size() != cols) throw ShapeError("tensor: ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from({rows.size(), cols}, std::move(values), requires_grad);
}

Tensor Tensor::vector(const std::vector<double>& values, bool requires_grad) {
  return from({values.size()}, values, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows: expected rank 2, got " + shape_str(shape()));
  return shape()[0];
}

std::size_t Tensor::cols() const { return shape().empty() ? 1 : shape().back(); }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2 || r >= shape()[0] || c >= shape()[1]) {
    throw ShapeError("at: index out of range for " + shape_str(shape()));
  }
  return node_->value[r * shape()[1] + c];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_->parents.empty()) throw ConfigError("set_requires_grad: only leaves can be toggled");
  node_->requires_grad = on;
  if (on) {
    node_->ensure_grad();
  } else {
    node_->grad.clear();
  }
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::zero_grad() {
  if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }
const std::string& Tensor::op() const { return node_->op; }

// ---- recording -----------------------------------------------------------

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tensor make_result(std::string op, Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents, std::function<void(detail::Node&)> adjoint) {
  auto node = new_node(std::move(shape), std::move(values), false);
  node->op = std::move(op);
  const bool track = t_grad_enabled && std::any_of(parents.begin(), parents.end(), [](const Tensor& p) {
                       return p.requires_grad();
                     });
  if (track) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->adjoint = std::move(adjoint);
  }
  return Tensor(std::move(node));
}

Tape::Tape(const Tensor& root) : root_(root) {
  if (!root.defined()) throw ConfigError("tape: undefined root");
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack;
  if (root.requires_grad()) {
    stack.push_back(root.node());
    seen.insert(root.node());
  }
  // Iterative: recurrent graphs are deep.
  while (!stack.empty()) {
    detail::Node* node = stack.back();
    stack.pop_back();
    nodes_.push_back(node);
    for (const Tensor& parent : node->parents) {
      detail::Node* p = parent.node();
      if (p->requires_grad && seen.insert(p).second) stack.push_back(p);
    }
  }
  // Parents are always created before children, so descending creation
  // order is a valid reverse topological order.
  std::sort(nodes_.begin(), nodes_.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });
}

std::vector<std::string> Tape::ops() const {
  std::vector<std::string> names;
  names.reserve(nodes_.size());
  for (const detail::Node* node : nodes_) names.push_back(node->op);
  return names;
}

void Tape::replay(double seed) {
  if (nodes_.empty()) return;
  for (detail::Node* node : nodes_) node->ensure_grad();
  for (double& g : root_.node()->grad) g += seed;
  for (detail::Node* node : nodes_) {
    if (node->adjoint) node->adjoint(*node);
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  Tape tape(loss);
  tape.replay(1.0);
}

// ---- primitives ----------------------------------------------------------

namespace {

[[noreturn]] void mismatch(const std::string& op, const Tensor& a, const Tensor& b) {
  throw ShapeError(op + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                   " do not conform");
}

void require_rank2(const std::string& op, const Tensor& a) {
  if (a.rank() != 2) throw ShapeError(op + ": expected rank-2 operand, got " + shape_str(a.shape()));
}

// Parent grad buffer if it participates, else nullptr.
double* parent_grad(detail::Node& self, std::size_t i) {
  detail::Node* p = self.parents[i].node();
  return p->requires_grad ? p->ensure_grad().data() : nullptr;
}

const double* parent_value(detail::Node& self, std::size_t i) {
  return self.parents[i].node()->value.data();
}

template <typename Forward, typename Derivative>
Tensor unary(const std::string& op, const Tensor& a, Forward forward, Derivative derivative) {
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [derivative](detail::Node& self) {
    double* ga = parent_grad(self, 0);
    if (!ga) return;
    const double* x = parent_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * derivative(x[i], self.value[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = parent_grad(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const double* av = parent_value(self, 0);
    const double* bv = parent_value(self, 1);
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return factor * x; },
      [factor](double, double) { return factor; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("sum", {}, {total}, {a}, [](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0].numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result("mean", {}, {total / n}, {a}, [n](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      const double g = self.grad[0] / n;
      for (std::size_t i = 0; i < self.parents[0].numel(); ++i) ga[i] += g;
    }
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2("matmul", a);
  require_rank2("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) mismatch("matmul", a, b);
  std::vector<double> out(m * n, 0.0);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double* brow = bv + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* av = parent_value(self, 0);
    const double* bv = parent_value(self, 1);
    const double* g = self.grad.data();
    if (double* ga = parent_grad(self, 0)) {
      // dA = dC . B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = bv + p * n;
          const double* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (double* gb = parent_grad(self, 1)) {
      // dB = A^T . dC
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double s = av[i * k + p];
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
      }
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2("matmul_nt", a);
  require_rank2("matmul_nt", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) mismatch("matmul_nt", a, b);
  std::vector<double> out(m * n);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += av[i * k + p] * bv[j * k + p];
      out[i * n + j] = acc;
    }
  }
  return make_result("matmul_nt", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    const double* av = parent_value(self, 0);
    const double* bv = parent_value(self, 1);
    const double* g = self.grad.data();
    if (double* ga = parent_grad(self, 0)) {
      // dA = dC . B
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double s = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += s * bv[j * k + p];
        }
      }
    }
    if (double* gb = parent_grad(self, 1)) {
      // dB = dC^T . A
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double s = g[i * n + j];
          for (std::size_t p = 0; p < k; ++p) gb[j * k + p] += s * av[i * k + p];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank2("transpose", a);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  }
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
      }
    }
  });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t pad) {
  require_rank2("conv1d", x);
  if (weight.rank() != 3) {
    throw ShapeError("conv1d: weight must be [out x in x kernel], got " + shape_str(weight.shape()));
  }
  const std::size_t steps = x.shape()[0], in = x.shape()[1];
  const std::size_t out_ch = weight.shape()[0], kernel = weight.shape()[2];
  if (weight.shape()[1] != in) mismatch("conv1d", x, weight);
  if (bias.numel() != out_ch || bias.rank() != 1) mismatch("conv1d", weight, bias);
  if (steps + 2 * pad < kernel) {
    throw ShapeError("conv1d: input " + shape_str(x.shape()) + " shorter than kernel " +
                     shape_str(weight.shape()));
  }
  const std::size_t out_steps = steps + 2 * pad - kernel + 1;
  const double* xv = x.data().data();
  const double* wv = weight.data().data();
  const double* bv = bias.data().data();
  std::vector<double> out(out_steps * out_ch);
  for (std::size_t t = 0; t < out_steps; ++t) {
    for (std::size_t o = 0; o < out_ch; ++o) {
      double acc = bv[o];
      for (std::size_t k = 0; k < kernel; ++k) {
        // Padded index t + k maps to input row t + k - pad.
        if (t + k < pad || t + k - pad >= steps) continue;
        const double* xrow = xv + (t + k - pad) * in;
        const double* wrow = wv + o * in * kernel + k;
        for (std::size_t c = 0; c < in; ++c) acc += wrow[c * kernel] * xrow[c];
      }
      out[t * out_ch + o] = acc;
    }
  }
  return make_result(
      "conv1d", {out_steps, out_ch}, std::move(out), {x, weight, bias},
      [steps, in, out_ch, kernel, pad, out_steps](detail::Node& self) {
        const double* xv = parent_value(self, 0);
        const double* wv = parent_value(self, 1);
        double* gx = parent_grad(self, 0);
        double* gw = parent_grad(self, 1);
        double* gb = parent_grad(self, 2);
        for (std::size_t t = 0; t < out_steps; ++t) {
          for (std::size_t o = 0; o < out_ch; ++o) {
            const double g = self.grad[t * out_ch + o];
            if (gb) gb[o] += g;
            for (std::size_t k = 0; k < kernel; ++k) {
              if (t + k < pad || t + k - pad >= steps) continue;
              const std::size_t row = (t + k - pad) * in;
              const std::size_t wbase = o * in * kernel + k;
              for (std::size_t c = 0; c < in; ++c) {
                if (gx) gx[row + c] += g * wv[wbase + c * kernel];
                if (gw) gw[wbase + c * kernel] += g * xv[row + c];
              }
            }
          }
        }
      });
}

Tensor lstm_recurrence(const Tensor& projected, const Tensor& recurrent_weight, bool reverse) {
  require_rank2("lstm_recurrence", projected);
  require_rank2("lstm_recurrence", recurrent_weight);
  const std::size_t steps = projected.shape()[0];
  const std::size_t hidden = recurrent_weight.shape()[0];
  const std::size_t width = 4 * hidden;
  if (recurrent_weight.shape()[1] != width || projected.shape()[1] != width) {
    mismatch("lstm_recurrence", projected, recurrent_weight);
  }
  const double* pv = projected.data().data();
  const double* wv = recurrent_weight.data().data();
  // Activated gates and cell states per frame, kept for the backward pass.
  auto gates = std::make_shared<std::vector<double>>(steps * width);
  auto cells = std::make_shared<std::vector<double>>(steps * hidden);
  std::vector<double> h(steps * hidden, 0.0);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t n = 0; n < steps; ++n) {
    const std::size_t t = reverse ? steps - 1 - n : n;
    double* g = gates->data() + t * width;
    std::copy(pv + t * width, pv + (t + 1) * width, g);
    const double* c_prev = nullptr;
    if (n > 0) {
      const std::size_t tp = reverse ? t + 1 : t - 1;
      const double* hp = h.data() + tp * hidden;
      c_prev = cells->data() + tp * hidden;
      for (std::size_t k = 0; k < hidden; ++k) {
        const double hk = hp[k];
        const double* wr = wv + k * width;
        for (std::size_t j = 0; j < width; ++j) g[j] += hk * wr[j];
      }
    }
    double* c = cells->data() + t * hidden;
    double* ht = h.data() + t * hidden;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double i = sig(g[j]);
      const double f = sig(g[hidden + j]);
      const double cand = std::tanh(g[2 * hidden + j]);
      const double o = sig(g[3 * hidden + j]);
      g[j] = i;
      g[hidden + j] = f;
      g[2 * hidden + j] = cand;
      g[3 * hidden + j] = o;
      c[j] = i * cand + (c_prev ? f * c_prev[j] : 0.0);
      ht[j] = o * std::tanh(c[j]);
    }
  }
  return make_result(
      "lstm_recurrence", {steps, hidden}, std::move(h), {projected, recurrent_weight},
      [steps, hidden, width, reverse, gates, cells](detail::Node& self) {
        double* gp = parent_grad(self, 0);
        double* gw = parent_grad(self, 1);
        if (!gp && !gw) return;
        const double* wv = parent_value(self, 1);
        std::vector<double> dh_rec(hidden, 0.0), dc_next(hidden, 0.0), dgates(width);
        for (std::size_t m = steps; m-- > 0;) {
          const std::size_t t = reverse ? steps - 1 - m : m;
          const double* g = gates->data() + t * width;
          const double* c = cells->data() + t * hidden;
          const double* c_prev = nullptr;
          const double* h_prev = nullptr;
          if (m > 0) {
            const std::size_t tp = reverse ? t + 1 : t - 1;
            c_prev = cells->data() + tp * hidden;
            h_prev = self.value.data() + tp * hidden;
          }
          for (std::size_t j = 0; j < hidden; ++j) {
            const double i = g[j], f = g[hidden + j], cand = g[2 * hidden + j], o = g[3 * hidden + j];
            const double tc = std::tanh(c[j]);
            const double dh = self.grad[t * hidden + j] + dh_rec[j];
            const double dc = dh * o * (1.0 - tc * tc) + dc_next[j];
            dgates[j] = dc * cand * i * (1.0 - i);
            dgates[hidden + j] = c_prev ? dc * c_prev[j] * f * (1.0 - f) : 0.0;
            dgates[2 * hidden + j] = dc * i * (1.0 - cand * cand);
            dgates[3 * hidden + j] = dh * tc * o * (1.0 - o);
            dc_next[j] = dc * f;
          }
          if (gp) {
            double* row = gp + t * width;
            for (std::size_t j = 0; j < width; ++j) row[j] += dgates[j];
          }
          std::fill(dh_rec.begin(), dh_rec.end(), 0.0);
          if (!h_prev) continue;
          for (std::size_t k = 0; k < hidden; ++k) {
            const double* wr = wv + k * width;
            double acc = 0.0;
            for (std::size_t j = 0; j < width; ++j) acc += wr[j] * dgates[j];
            dh_rec[k] = acc;
            if (gw) {
              double* gr = gw + k * width;
              const double hk = h_prev[k];
              for (std::size_t j = 0; j < width; ++j) gr[j] += hk * dgates[j];
            }
          }
        }
      });
}

Tensor conv1d_same(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 3 || weight.shape()[2] % 2 == 0) {
    throw ShapeError("conv1d_same: kernel extent must be odd, weight " + shape_str(weight.shape()));
  }
  return conv1d(x, weight, bias, weight.shape()[2] / 2);
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: scalar operand");
  const std::size_t width = a.cols();
  const std::size_t rows = a.numel() / width;
  std::vector<double> out(a.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = a.data().data() + r * width;
    double* y = out.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) total += (y[j] = std::exp(in[j] - peak));
    for (std::size_t j = 0; j < width; ++j) y[j] /= total;
  }
  return make_result("softmax", a.shape(), std::move(out), {a}, [rows, width](detail::Node& self) {
    double* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * width;
      const double* g = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  if (a.rank() == 0) throw ShapeError("layer_norm_rows: scalar operand");
  const std::size_t width = a.cols();
  const std::size_t rows = a.numel() / width;
  std::vector<double> out(a.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += x[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = (x[j] - mu) * inv_std[r];
  }
  return make_result("layer_norm", a.shape(), std::move(out), {a},
                     [rows, width, inv_std = std::move(inv_std)](detail::Node& self) {
                       double* ga = parent_grad(self, 0);
                       if (!ga) return;
                       const double n = static_cast<double>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* xhat = self.value.data() + r * width;
                         const double* g = self.grad.data() + r * width;
                         double g_mean = 0.0, gx_mean = 0.0;
                         for (std::size_t j = 0; j < width; ++j) {
                           g_mean += g[j];
                           gx_mean += g[j] * xhat[j];
                         }
                         g_mean /= n;
                         gx_mean /= n;
                         for (std::size_t j = 0; j < width; ++j) {
                           ga[r * width + j] += inv_std[r] * (g[j] - g_mean - xhat[j] * gx_mean);
                         }
                       }
                     });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  for (const Tensor& p : parts) require_rank2("concat_cols", p);
  const std::size_t rows = parts.front().shape()[0];
  std::vector<std::size_t> offsets;
  std::size_t width = 0;
  for (const Tensor& p : parts) {
    if (p.shape()[0] != rows) mismatch("concat_cols", parts.front(), p);
    offsets.push_back(width);
    width += p.shape()[1];
  }
  std::vector<double> out(rows * width);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t w = parts[k].shape()[1];
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(parts[k].data().data() + r * w, w, out.data() + r * width + offsets[k]);
    }
  }
  return make_result("concat_cols", {rows, width}, std::move(out), parts,
                     [rows, width, offsets](detail::Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         double* g = parent_grad(self, k);
                         if (!g) continue;
                         const std::size_t w = self.parents[k].shape()[1];
                         for (std::size_t r = 0; r < rows; ++r) {
                           const double* src = self.grad.data() + r * width + offsets[k];
                           for (std::size_t j = 0; j < w; ++j) g[r * w + j] += src[j];
                         }
                       }
                     });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  for (const Tensor& p : parts) require_rank2("concat_rows", p);
  const std::size_t width = parts.front().shape()[1];
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    if (p.shape()[1] != width) mismatch("concat_rows", parts.front(), p);
    rows += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(rows * width);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result("concat_rows", {rows, width}, std::move(out), parts, [](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t n = self.parents[k].numel();
      if (double* g = parent_grad(self, k)) {
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2("slice_rows", a);
  if (begin >= end || end > a.shape()[0]) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  }
  const std::size_t width = a.shape()[1];
  std::vector<double> out(a.data().begin() + begin * width, a.data().begin() + end * width);
  return make_result("slice_rows", {end - begin, width}, std::move(out), {a},
                     [begin, width](detail::Node& self) {
                       if (double* g = parent_grad(self, 0)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           g[begin * width + i] += self.grad[i];
                         }
                       }
                     });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_rank2("slice_cols", a);
  if (begin >= end || end > a.shape()[1]) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_str(a.shape()));
  }
  const std::size_t rows = a.shape()[0], width = a.shape()[1], w = end - begin;
  std::vector<double> out(rows * w);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.data().data() + r * width + begin, w, out.data() + r * w);
  }
  return make_result("slice_cols", {rows, w}, std::move(out), {a},
                     [rows, width, begin, w](detail::Node& self) {
                       if (double* g = parent_grad(self, 0)) {
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t j = 0; j < w; ++j) {
                             g[r * width + begin + j] += self.grad[r * w + j];
                           }
                         }
                       }
                     });
}

Tensor broadcast_rows(const Tensor& v, std::size_t steps) {
  const bool vector_like = v.rank() == 1 || (v.rank() == 2 && v.shape()[0] == 1);
  if (!vector_like) {
    throw ShapeError("broadcast_rows: expected [N] or [1 x N], got " + shape_str(v.shape()));
  }
  if (steps == 0) throw ShapeError("broadcast_rows: zero steps");
  const std::size_t width = v.numel();
  std::vector<double> out;
  out.reserve(steps * width);
  for (std::size_t t = 0; t < steps; ++t) out.insert(out.end(), v.data().begin(), v.data().end());
  return make_result("broadcast_rows", {steps, width}, std::move(out), {v},
                     [steps, width](detail::Node& self) {
                       if (double* g = parent_grad(self, 0)) {
                         for (std::size_t t = 0; t < steps; ++t) {
                           for (std::size_t j = 0; j < width; ++j) g[j] += self.grad[t * width + j];
                         }
                       }
                     });
}

// ---- verification --------------------------------------------------------

namespace {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

void check_step(double step) {
  if (!(step > 0.0 && step <= 1e-3)) {
    throw ConfigError("grad_check: step must lie in (0, 1e-3], got " + std::to_string(step));
  }
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& function, const Tensor& point,
                  double step) {
  check_step(step);
  const std::vector<double> base(point.data().begin(), point.data().end());
  Tensor x = Tensor::from(point.shape(), base, true);
  const Tensor y = function(x);
  backward(y);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    std::vector<double> probe = base;
    probe[i] = base[i] + step;
    const double f_plus = function(Tensor::from(point.shape(), probe)).item();
    probe[i] = base[i] - step;
    const double f_minus = function(Tensor::from(point.shape(), probe)).item();
    const double numeric = (f_plus - f_minus) / (2.0 * step);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      throw NumericalError("grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& loss, const std::vector<ParamProbe>& probes,
                         double step) {
  check_step(step);
  for (const ParamProbe& probe : probes) {
    if (!probe.param.requires_grad()) throw ConfigError("grad_check_params: probe on frozen tensor");
    if (probe.index >= probe.param.numel()) throw ConfigError("grad_check_params: probe index out of range");
    Tensor p = probe.param;
    p.zero_grad();
  }
  backward(loss());
  std::vector<double> analytic;
  for (const ParamProbe& probe : probes) analytic.push_back(probe.param.grad()[probe.index]);

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < probes.size(); ++k) {
    Tensor p = probes[k].param;
    double& slot = p.mutable_data()[probes[k].index];
    const double original = slot;
    slot = original + step;
    const double f_plus = loss().item();
    slot = original - step;
    const double f_minus = loss().item();
    slot = original;
    const double numeric = (f_plus - f_minus) / (2.0 * step);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[k])) {
      throw NumericalError("grad_check_params: non-finite value at probe " + std::to_string(k));
    }
    worst = std::max(worst, relative_error(analytic[k], numeric));
  }
  return worst;
}

double grad_check_directional(const std::function<Tensor()>& loss, Tensor leaf,
                              std::span<const double> direction, double step) {
  check_step(step);
  if (!leaf.requires_grad()) throw ConfigError("grad_check_directional: leaf is frozen");
  if (direction.size() != leaf.numel()) {
    throw ShapeError("grad_check_directional: direction of length " + std::to_string(direction.size()) +
                     " for tensor " + shape_str(leaf.shape()));
  }
  leaf.zero_grad();
  backward(loss());
  double analytic = 0.0;
  for (std::size_t i = 0; i < direction.size(); ++i) analytic += leaf.grad()[i] * direction[i];

  NoGradGuard no_grad;
  const std::vector<double> base(leaf.data().begin(), leaf.data().end());
  auto values = leaf.mutable_data();
  for (std::size_t i = 0; i < base.size(); ++i) values[i] = base[i] + step * direction[i];
  const double f_plus = loss().item();
  for (std::size_t i = 0; i < base.size(); ++i) values[i] = base[i] - step * direction[i];
  const double f_minus = loss().item();
  std::copy(base.begin(), base.end(), values.begin());
  const double numeric = (f_plus - f_minus) / (2.0 * step);
  if (!std::isfinite(numeric) || !std::isfinite(analytic)) {
    throw NumericalError("grad_check_directional: non-finite directional derivative");
  }
  return relative_error(analytic, numeric);
}

}  // namespace spn
