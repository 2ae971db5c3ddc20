// SPDX-License-Identifier: Apache-2.0

#include "spn/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <random>

#include "spn/layers.hpp"

namespace spn {

namespace {

std::vector<double> draw(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

Tensor draw_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  const std::size_t n = shape_numel(shape);
  return Tensor::from(std::move(shape), draw(n, rng, lo, hi), requires_grad);
}

Tensor weighted(const Tensor& y, const std::vector<double>& w) {
  return sum(mul(y, Tensor::from(y.shape(), w)));
}

using Op1 = std::function<Tensor(const Tensor&)>;
using Op2 = std::function<Tensor(const Tensor&, const Tensor&)>;

double unary_error(const Op1& op, const Shape& shape, Rng& rng) {
  const Tensor point = draw_tensor(shape, rng, -1.5, 1.5);
  const auto w = draw(op(point).numel(), rng);
  return grad_check([&](const Tensor& x) { return weighted(op(x), w); }, point, kGradCheckStep);
}

double binary_error(const Op2& op, const Shape& lhs, const Shape& rhs, Rng& rng) {
  const Tensor a = draw_tensor(lhs, rng, -1.5, 1.5);
  const Tensor b = draw_tensor(rhs, rng, -1.5, 1.5);
  const auto w = draw(op(a, b).numel(), rng);
  const double ea = grad_check([&](const Tensor& x) { return weighted(op(x, b), w); }, a, kGradCheckStep);
  const double eb = grad_check([&](const Tensor& x) { return weighted(op(a, x), w); }, b, kGradCheckStep);
  return std::max(ea, eb);
}

template <typename Layer>
double layer_error(const Layer& layer, const Shape& input, Rng& rng) {
  ParamSet params;
  layer.register_params("layer", Partition::kSpeech, params);
  Tensor x = draw_tensor(input, rng, -1.0, 1.0, true);
  const auto w = draw(layer.forward(x).numel(), rng);
  auto loss = [&] { return weighted(layer.forward(x), w); };
  double worst = grad_check_directional(loss, x, draw(x.numel(), rng), kGradCheckStep);
  for (const NamedParam& p : params.entries()) {
    worst = std::max(worst, grad_check_directional(loss, p.tensor, draw(p.tensor.numel(), rng), kGradCheckStep));
  }
  return worst;
}

}  // namespace

std::vector<GradCheckEntry> layer_grad_suite(std::uint64_t seed, std::size_t points) {
  Rng rng(seed);
  std::vector<std::pair<std::string, std::function<double(Rng&)>>> checks;
  auto unary = [&](const char* name, Shape shape, Op1 op) {
    checks.emplace_back(name, [shape, op](Rng& r) { return unary_error(op, shape, r); });
  };
  auto binary = [&](const char* name, Shape lhs, Shape rhs, Op2 op) {
    checks.emplace_back(name, [lhs, rhs, op](Rng& r) { return binary_error(op, lhs, rhs, r); });
  };

  binary("add", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return add(a, b); });
  binary("sub", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return sub(a, b); });
  binary("mul", {3, 4}, {3, 4}, [](const Tensor& a, const Tensor& b) { return mul(a, b); });
  binary("matmul", {3, 4}, {4, 2}, [](const Tensor& a, const Tensor& b) { return matmul(a, b); });
  binary("matmul_nt", {3, 4}, {5, 4}, [](const Tensor& a, const Tensor& b) { return matmul_nt(a, b); });
  binary("concat_cols", {3, 2}, {3, 4}, [](const Tensor& a, const Tensor& b) { return concat_cols({a, b}); });
  binary("concat_rows", {2, 3}, {4, 3}, [](const Tensor& a, const Tensor& b) { return concat_rows({a, b}); });
  unary("scale", {3, 4}, [](const Tensor& x) { return scale(x, -0.7); });
  unary("sigmoid", {3, 4}, [](const Tensor& x) { return sigmoid(x); });
  unary("tanh", {3, 4}, [](const Tensor& x) { return tanh(x); });
  unary("square", {3, 4}, [](const Tensor& x) { return square(x); });
  unary("softmax", {3, 5}, [](const Tensor& x) { return softmax(x); });
  unary("layer_norm_rows", {3, 6}, [](const Tensor& x) { return layer_norm_rows(x, 1e-5); });
  unary("sum", {3, 4}, [](const Tensor& x) { return sum(x); });
  unary("mean", {3, 4}, [](const Tensor& x) { return mean(x); });
  unary("transpose", {3, 4}, [](const Tensor& x) { return transpose(x); });
  unary("slice_rows", {5, 3}, [](const Tensor& x) { return slice_rows(x, 1, 4); });
  unary("slice_cols", {3, 5}, [](const Tensor& x) { return slice_cols(x, 2, 5); });
  unary("broadcast_rows", {4}, [](const Tensor& x) { return broadcast_rows(x, 3); });
  checks.emplace_back("conv1d", [](Rng& r) {
    const Tensor x = draw_tensor({6, 3}, r);
    const Tensor w = draw_tensor({2, 3, 5}, r);
    const Tensor b = draw_tensor({2}, r);
    const auto wt = draw(12, r);
    return std::max({grad_check([&](const Tensor& t) { return weighted(conv1d_same(t, w, b), wt); }, x, kGradCheckStep),
                     grad_check([&](const Tensor& t) { return weighted(conv1d_same(x, t, b), wt); }, w, kGradCheckStep),
                     grad_check([&](const Tensor& t) { return weighted(conv1d_same(x, w, t), wt); }, b, kGradCheckStep)});
  });
  checks.emplace_back("lstm_recurrence", [](Rng& r) {
    const Tensor p = draw_tensor({4, 12}, r);
    const Tensor w = draw_tensor({3, 12}, r);
    const auto wt = draw(12, r);
    double worst = 0.0;
    for (bool rev : {false, true}) {
      worst = std::max({worst,
                        grad_check([&](const Tensor& t) { return weighted(lstm_recurrence(t, w, rev), wt); }, p,
                                   kGradCheckStep),
                        grad_check([&](const Tensor& t) { return weighted(lstm_recurrence(p, t, rev), wt); }, w,
                                   kGradCheckStep)});
    }
    return worst;
  });
  // Kept away from the kink: |x| >= 0.1.
  checks.emplace_back("relu", [](Rng& r) {
    auto v = draw(12, r, 0.1, 1.5);
    for (std::size_t i = 0; i < v.size(); i += 2) v[i] = -v[i];
    const Tensor point = Tensor::from({3, 4}, v);
    const auto w = draw(12, r);
    return grad_check([&](const Tensor& x) { return weighted(relu(x), w); }, point, kGradCheckStep);
  });

  checks.emplace_back("layer:conv_bank", [](Rng& r) {
    const ConvBank layer(5, 4, {1, 3, 5, 7, 9}, r);
    return layer_error(layer, {6, 5}, r);
  });
  checks.emplace_back("layer:dense_tanh", [](Rng& r) {
    const DenseLayer layer(6, 4, Activation::kTanh, r);
    return layer_error(layer, {5, 6}, r);
  });
  checks.emplace_back("layer:dense_linear", [](Rng& r) {
    const DenseLayer layer(6, 4, Activation::kNone, r);
    return layer_error(layer, {5, 6}, r);
  });
  checks.emplace_back("layer:layer_norm", [](Rng& r) {
    LayerNorm layer(6);
    auto g = layer.gain().mutable_data();
    auto o = layer.offset().mutable_data();
    const auto gv = draw(6, r, 0.5, 1.5), ov = draw(6, r);
    std::copy(gv.begin(), gv.end(), g.begin());
    std::copy(ov.begin(), ov.end(), o.begin());
    return layer_error(layer, {4, 6}, r);
  });
  checks.emplace_back("layer:attention", [](Rng& r) {
    const MultiHeadAttentionLayer layer(8, 2, 4, r);
    return layer_error(layer, {5, 8}, r);
  });
  checks.emplace_back("layer:attention_stack", [](Rng& r) {
    const AttentionStack layer(8, 2, 4, 2, r);
    return layer_error(layer, {4, 8}, r);
  });
  checks.emplace_back("layer:blstm", [](Rng& r) {
    const BLSTMLayer layer(4, 3, r);
    return layer_error(layer, {5, 4}, r);
  });

  std::vector<GradCheckEntry> out;
  for (const auto& [name, fn] : checks) {
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) worst = std::max(worst, fn(rng));
    out.push_back({name, worst, kLayerGradTolerance});
  }
  return out;
}

std::vector<GradCheckEntry> model_grad_check(const ModelConfig& config, std::uint64_t seed, std::size_t frames,
                                             std::size_t samples) {
  SpnModel model(config, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  const Tensor mfcc = draw_tensor({frames, config.feature_dim}, rng);
  std::vector<double> onehot(frames * config.phoneme_dim, 0.0);
  for (std::size_t t = 0; t < frames; ++t) onehot[t * config.phoneme_dim + rng() % config.phoneme_dim] = 1.0;
  const Tensor phonemes = Tensor::from({frames, config.phoneme_dim}, onehot);
  const Tensor target = draw_tensor({frames, config.output_dim}, rng);
  const LossWeights weights{1.0, config.use_phoneme_stream ? 1.0 : 0.0};
  auto loss = [&] {
    const SpnOutput out = model.forward(mfcc, phonemes);
    return joint_loss(out.spn_pred, out.phoneme_pred, target, weights);
  };

  // Round-robin over partitions, picking distinct tensors at random.
  std::map<Partition, std::vector<const NamedParam*>> pools;
  for (const NamedParam& p : model.params().entries()) pools[p.partition].push_back(&p);
  std::vector<const NamedParam*> picked;
  while (picked.size() < samples) {
    bool any = false;
    for (auto& [partition, pool] : pools) {
      if (pool.empty() || picked.size() >= samples) continue;
      const std::size_t i = rng() % pool.size();
      picked.push_back(pool[i]);
      pool.erase(pool.begin() + static_cast<long>(i));
      any = true;
    }
    if (!any) break;
  }

  std::vector<GradCheckEntry> out;
  for (const NamedParam* p : picked) {
    const double err = grad_check_directional(loss, p->tensor, draw(p->tensor.numel(), rng), kGradCheckStep);
    out.push_back({"model:" + std::string(partition_name(p->partition)) + ":" + p->name, err, kModelGradTolerance});
  }
  return out;
}

}  // namespace spn
