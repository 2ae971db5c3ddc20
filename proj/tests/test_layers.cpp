// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "spn/adam.hpp"
#include "spn/errors.hpp"
#include "spn/layers.hpp"
#include "test_support.hpp"

using namespace spn;
using spn::testing::random_tensor;
using spn::testing::random_values;
using spn::testing::weighted_sum;

namespace {

void fill(Tensor t, double value) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), value);
}

void fill_all(ParamSet& params, double value) {
  for (NamedParam& p : params.entries()) fill(p.tensor, value);
}

template <typename Layer>
ParamSet collect(const Layer& layer) {
  ParamSet params;
  layer.register_params("layer", Partition::kSpeech, params);
  return params;
}

Tensor param(const ParamSet& params, const std::string& name) {
  const NamedParam* p = params.find(name);
  REQUIRE(p != nullptr);
  return p->tensor;
}

/// Max gradient-check error of `layer` along a random unit-scale direction
/// for its input and for every parameter tensor, at `points` random inputs.
template <typename Layer>
double layer_grad_error(const Layer& layer, Shape input, std::size_t points, std::mt19937_64& rng) {
  ParamSet params = collect(layer);
  double worst = 0.0;
  for (std::size_t n = 0; n < points; ++n) {
    Tensor x = random_tensor(input, rng, -1, 1, true);
    const auto weights = random_values(layer.forward(x).numel(), rng);
    auto loss = [&] { return weighted_sum(layer.forward(x), weights); };
    worst = std::max(worst, grad_check_directional(loss, x, random_values(x.numel(), rng), 1e-6));
    for (const NamedParam& p : params.entries()) {
      worst = std::max(worst, grad_check_directional(loss, p.tensor, random_values(p.tensor.numel(), rng), 1e-6));
    }
  }
  return worst;
}

}  // namespace

// ---- conv bank -----------------------------------------------------------

TEST_CASE("conv bank on an all-ones input with all-ones kernels") {
  Rng rng(0);
  ConvBank bank(1, 1, {1, 3, 5, 7, 9}, rng);
  ParamSet params = collect(bank);
  for (NamedParam& p : params.entries()) fill(p.tensor, p.name.ends_with(".bias") ? 0.0 : 1.0);
  const Tensor y = bank.forward(Tensor::full({9, 1}, 1.0));
  REQUIRE(y.shape() == Shape{9, 5});

  const std::vector<std::vector<double>> ones(9, std::vector<double>{1.0});
  const std::size_t kernels[] = {1, 3, 5, 7, 9};
  for (std::size_t b = 0; b < 5; ++b) {
    const std::size_t k = kernels[b];
    const auto oracle = spn::testing::brute_conv1d(
        ones, {{std::vector<double>(k, 1.0)}}, {0.0}, k / 2);
    for (std::size_t t = 0; t < 9; ++t) CHECK(y.at(t, b) == oracle[t][0]);
  }
  for (std::size_t t = 0; t < 9; ++t) CHECK(y.at(t, 0) == 1.0);
  CHECK(y.at(0, 1) == 2.0);
  CHECK(y.at(8, 1) == 2.0);
  for (std::size_t t = 1; t < 8; ++t) CHECK(y.at(t, 1) == 3.0);
}

TEST_CASE("conv bank with zero weights is zero") {
  Rng rng(1);
  ConvBank bank(3, 2, {1, 3, 5, 7, 9}, rng);
  ParamSet params = collect(bank);
  fill_all(params, 0.0);
  std::mt19937_64 data_rng(2);
  const Tensor y = bank.forward(random_tensor({6, 3}, data_rng));
  CHECK(y.shape() == Shape{6, 10});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("conv bank shape and gradients on 39-dim input") {
  Rng rng(3);
  ConvBank bank(39, 4, {1, 3, 5, 7, 9}, rng);
  std::mt19937_64 data_rng(4);
  CHECK(bank.forward(random_tensor({7, 39}, data_rng)).shape() == Shape{7, 20});

  ConvBank small(5, 4, {1, 3, 5, 7, 9}, rng);
  CHECK(layer_grad_error(small, {6, 5}, 3, data_rng) < 1e-5);
}

TEST_CASE("conv bank rejects even kernels and empty input") {
  Rng rng(5);
  CHECK_THROWS_AS(ConvBank(3, 2, {1, 4}, rng), ConfigError);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
  ConvBank bank(3, 2, {1, 3}, rng);
  CHECK_THROWS_AS(bank.forward(Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("conv bank branches match the brute-force oracle on random instances") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t steps = 1 + rng() % 12, in = 1 + rng() % 5, ch = 1 + rng() % 3;
    Rng init(rng());
    ConvBank bank(in, ch, {1, 3, 5, 7, 9}, init);
    const Tensor x = random_tensor({steps, in}, rng);
    const Tensor y = bank.forward(x);
    for (std::size_t b = 0; b < bank.branches().size(); ++b) {
      Conv1DLayer& conv = bank.branches()[b];
      const std::size_t k = conv.kernel_size();
      std::vector<std::vector<std::vector<double>>> w(ch, std::vector<std::vector<double>>(in, std::vector<double>(k)));
      for (std::size_t o = 0; o < ch; ++o)
        for (std::size_t c = 0; c < in; ++c)
          for (std::size_t j = 0; j < k; ++j) w[o][c][j] = conv.weight().data()[(o * in + c) * k + j];
      const auto oracle = spn::testing::brute_conv1d(
          spn::testing::to_rows(x), w, {conv.bias().data().begin(), conv.bias().data().end()}, k / 2);
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t o = 0; o < ch; ++o) CHECK(std::abs(y.at(t, b * ch + o) - oracle[t][o]) < 1e-10);
    }
  }
}

TEST_CASE("conv bank is shift-equivariant away from the padding boundary") {
  Rng rng(7);
  ConvBank bank(2, 3, {1, 3, 5, 7, 9}, rng);
  std::mt19937_64 data_rng(8);
  // Support strictly inside a 40-frame window.
  std::vector<double> base(40 * 2, 0.0);
  for (std::size_t t = 10; t < 25; ++t) {
    base[t * 2] = random_values(1, data_rng)[0];
    base[t * 2 + 1] = random_values(1, data_rng)[0];
  }
  std::vector<double> shifted(40 * 2, 0.0);
  std::copy(base.begin(), base.end() - 2, shifted.begin() + 2);
  const Tensor y = bank.forward(Tensor::from({40, 2}, base));
  const Tensor ys = bank.forward(Tensor::from({40, 2}, shifted));
  for (std::size_t t = 5; t < 34; ++t)
    for (std::size_t c = 0; c < 15; ++c) CHECK(ys.at(t + 1, c) == y.at(t, c));
}

// ---- attention -----------------------------------------------------------

TEST_CASE("attention on a single frame reduces to the value path plus residual") {
  Rng rng(10);
  MultiHeadAttentionLayer layer(8, 2, 4, rng);
  ParamSet params = collect(layer);
  std::mt19937_64 data_rng(11);
  const Tensor x = random_tensor({1, 8}, data_rng);
  std::vector<Tensor> attention;
  const Tensor y = layer.forward(x, &attention);
  REQUIRE(attention.size() == 2);
  for (const Tensor& a : attention) {
    CHECK(a.shape() == Shape{1, 1});
    CHECK(a.item() == 1.0);
  }
  const Tensor v = add(matmul(x, param(params, "layer.value.weight")),
                       broadcast_rows(param(params, "layer.value.bias"), 1));
  const Tensor expected = add(x, add(matmul(v, param(params, "layer.output.weight")),
                                     broadcast_rows(param(params, "layer.output.bias"), 1)));
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(y.at(0, j) - expected.at(0, j)) < 1e-12);
}

TEST_CASE("attention stack maps identical frames to identical frames") {
  Rng rng(12);
  AttentionStack stack(16, 4, 4, 3, rng);
  std::mt19937_64 data_rng(13);
  const auto frame = random_values(16, data_rng);
  std::vector<double> repeated;
  for (int t = 0; t < 6; ++t) repeated.insert(repeated.end(), frame.begin(), frame.end());
  const Tensor y = stack.forward(Tensor::from({6, 16}, repeated));
  for (std::size_t t = 1; t < 6; ++t)
    for (std::size_t j = 0; j < 16; ++j) CHECK(std::abs(y.at(t, j) - y.at(0, j)) < 1e-12);
}

TEST_CASE("full-size attention stack: every head's rows sum to one") {
  Rng rng(14);
  AttentionStack stack(512, 8, 64, 6, rng);
  std::mt19937_64 data_rng(15);
  std::vector<Tensor> attention;
  const Tensor y = stack.forward(random_tensor({5, 512}, data_rng), &attention);
  CHECK(y.shape() == Shape{5, 512});
  REQUIRE(attention.size() == 48);
  for (const Tensor& a : attention) {
    for (std::size_t r = 0; r < 5; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(a.at(r, c) >= 0.0);
        total += a.at(r, c);
      }
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
  }
  CHECK_THROWS_AS(stack.forward(Tensor::zeros({5, 500})), ShapeError);
}

TEST_CASE("attention stack is permutation-equivariant") {
  Rng rng(16);
  AttentionStack stack(12, 3, 4, 2, rng);
  std::mt19937_64 data_rng(17);
  const Tensor x = random_tensor({7, 12}, data_rng);
  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), data_rng);
  std::vector<Tensor> rows;
  for (std::size_t t : perm) rows.push_back(slice_rows(x, t, t + 1));
  const Tensor y = stack.forward(x);
  const Tensor yp = stack.forward(concat_rows(rows));
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 12; ++j) CHECK(std::abs(yp.at(i, j) - y.at(perm[i], j)) < 1e-12);
}

TEST_CASE("attention layers pass the gradient check") {
  Rng rng(18);
  std::mt19937_64 data_rng(19);
  MultiHeadAttentionLayer layer(6, 2, 3, rng);
  CHECK(layer_grad_error(layer, {4, 6}, 3, data_rng) < 1e-5);
  AttentionStack stack(6, 2, 3, 2, rng);
  CHECK(layer_grad_error(stack, {4, 6}, 3, data_rng) < 1e-5);
}

// ---- layer norm ----------------------------------------------------------

TEST_CASE("layer norm with unit gain standardizes each frame") {
  LayerNorm norm(32);
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor y = norm.forward(random_tensor({5, 32}, rng, -20, 20));
    for (std::size_t r = 0; r < 5; ++r) {
      double mu = 0.0, var = 0.0;
      for (std::size_t c = 0; c < 32; ++c) mu += y.at(r, c);
      mu /= 32;
      for (std::size_t c = 0; c < 32; ++c) var += (y.at(r, c) - mu) * (y.at(r, c) - mu);
      var /= 32;
      CHECK(std::abs(mu) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("layer norm passes the gradient check") {
  LayerNorm norm(5);
  std::mt19937_64 rng(21);
  fill(norm.gain(), 0.0);
  auto gain = norm.gain().mutable_data();
  for (std::size_t i = 0; i < 5; ++i) gain[i] = 0.5 + 0.2 * static_cast<double>(i);
  CHECK(layer_grad_error(norm, {3, 5}, 3, rng) < 1e-5);
}

// ---- dense ---------------------------------------------------------------

TEST_CASE("dense layer computes activation(Vx + c) per frame") {
  Rng rng(22);
  DenseLayer dense(3, 2, Activation::kTanh, rng);
  std::mt19937_64 data_rng(23);
  const Tensor x = random_tensor({4, 3}, data_rng);
  const Tensor y = dense.forward(x);
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t o = 0; o < 2; ++o) {
      double acc = dense.bias().data()[o];
      for (std::size_t i = 0; i < 3; ++i) acc += dense.weight().data()[o * 3 + i] * x.at(t, i);
      CHECK(std::abs(y.at(t, o) - std::tanh(acc)) < 1e-14);
    }
  }
  DenseLayer linear(4, 3, Activation::kNone, rng);
  CHECK(layer_grad_error(linear, {3, 4}, 3, data_rng) < 1e-5);
  CHECK(layer_grad_error(dense, {3, 3}, 3, data_rng) < 1e-5);
}

// ---- BLSTM ---------------------------------------------------------------

namespace {

std::vector<std::vector<double>> as_rows(const Tensor& t) {
  std::vector<std::vector<double>> rows(t.shape()[0], std::vector<double>(t.shape()[1]));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) rows[r][c] = t.data()[r * t.shape()[1] + c];
  return rows;
}

std::vector<std::vector<double>> lstm_oracle(const LstmDirection& cell, const Tensor& x, bool reverse) {
  return spn::testing::brute_lstm(spn::testing::to_rows(x), as_rows(cell.input_weight),
                                  as_rows(cell.recurrent_weight),
                                  {cell.bias.data().begin(), cell.bias.data().end()}, reverse);
}

}  // namespace

TEST_CASE("BLSTM with zero parameters outputs zeros") {
  Rng rng(30);
  BLSTMLayer layer(4, 3, rng);
  ParamSet params = collect(layer);
  fill_all(params, 0.0);
  std::mt19937_64 data_rng(31);
  const Tensor y = layer.forward(random_tensor({5, 4}, data_rng));
  CHECK(y.shape() == Shape{5, 6});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("BLSTM on a single frame concatenates both directions of that frame") {
  Rng rng(32);
  BLSTMLayer layer(3, 2, rng);
  std::mt19937_64 data_rng(33);
  const Tensor x = random_tensor({1, 3}, data_rng);
  const Tensor y = layer.forward(x);
  REQUIRE(y.shape() == Shape{1, 4});
  const auto fwd = lstm_oracle(layer.forward_cell(), x, false);
  const auto bwd = lstm_oracle(layer.backward_cell(), x, true);
  CHECK(std::abs(y.at(0, 0) - fwd[0][0]) < 1e-12);
  CHECK(std::abs(y.at(0, 1) - fwd[0][1]) < 1e-12);
  CHECK(std::abs(y.at(0, 2) - bwd[0][0]) < 1e-12);
  CHECK(std::abs(y.at(0, 3) - bwd[0][1]) < 1e-12);
}

TEST_CASE("BLSTM matches the scalar per-gate oracle") {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t steps = trial == 0 ? 3 : 1 + rng() % 6;
    const std::size_t in = trial == 0 ? 3 : 1 + rng() % 4;
    const std::size_t hidden = trial == 0 ? 2 : 1 + rng() % 4;
    Rng init(rng());
    BLSTMLayer layer(in, hidden, init);
    const Tensor x = random_tensor({steps, in}, rng, -2, 2);
    const Tensor y = layer.forward(x);
    const auto fwd = lstm_oracle(layer.forward_cell(), x, false);
    const auto bwd = lstm_oracle(layer.backward_cell(), x, true);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t k = 0; k < hidden; ++k) {
        CHECK(std::abs(y.at(t, k) - fwd[t][k]) < 1e-10);
        CHECK(std::abs(y.at(t, hidden + k) - bwd[t][k]) < 1e-10);
      }
    }
  }
}

TEST_CASE("backward direction equals a forward run on the reversed sequence") {
  Rng rng(35);
  BLSTMLayer layer(3, 4, rng);
  std::mt19937_64 data_rng(36);
  const Tensor x = random_tensor({6, 3}, data_rng);
  std::vector<Tensor> reversed_rows;
  for (std::size_t t = 6; t-- > 0;) reversed_rows.push_back(slice_rows(x, t, t + 1));
  const Tensor reversed = concat_rows(reversed_rows);
  const Tensor states = lstm_direction_forward(layer.backward_cell(), reversed, false);
  const Tensor y = layer.forward(x);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t k = 0; k < 4; ++k) CHECK(y.at(t, 4 + k) == states.at(5 - t, k));
}

TEST_CASE("BLSTM passes the gradient check") {
  Rng rng(37);
  BLSTMLayer layer(3, 2, rng);
  std::mt19937_64 data_rng(38);
  CHECK(layer_grad_error(layer, {4, 3}, 3, data_rng) < 1e-5);
}

// ---- Adam ----------------------------------------------------------------

TEST_CASE("adam leaves a parameter with zero gradient unchanged and decays moments") {
  ParamSet params;
  Tensor w = Tensor::vector({0.5, -0.25}, true);
  params.add("w", Partition::kSpeech, w);
  AdamState state(params, {});
  adam_step(params, state);
  CHECK(w.data()[0] == 0.5);
  CHECK(w.data()[1] == -0.25);
  CHECK(state.first_moment[0][0] == 0.0);
  CHECK(state.step == 1);

  state.first_moment[0] = {1.0, 1.0};
  state.second_moment[0] = {1.0, 1.0};
  adam_step(params, state);
  CHECK(state.first_moment[0][0] == 0.9);
  CHECK(state.second_moment[0][0] == 0.999);
  CHECK(state.step == 2);
}

TEST_CASE("adam first step with unit gradient moves by the learning rate") {
  ParamSet params;
  Tensor w = Tensor::vector({2.0}, true);
  params.add("w", Partition::kSpeech, w);
  AdamState state(params, {});
  w.mutable_grad()[0] = 1.0;
  adam_step(params, state);
  // m_hat = v_hat = 1, so the step is lr / (1 + eps).
  const double expected = 2.0 - 1e-4 / (1.0 + 1e-8);
  CHECK(w.data()[0] == expected);
  CHECK(std::abs((2.0 - w.data()[0]) - 1e-4) < 1e-11);
}

TEST_CASE("adam two-step recurrence") {
  ParamSet params;
  Tensor w = Tensor::vector({0.0}, true);
  params.add("w", Partition::kSpeech, w);
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState state(params, cfg);
  const double g1 = 0.5, g2 = -2.0;

  // Closed-form oracle.
  double p = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    m = 0.9 * m + (1.0 - 0.9) * g;
    v = 0.999 * v + (1.0 - 0.999) * g * g;
    const double m_hat = m / (1 - std::pow(0.9, t));
    const double v_hat = v / (1 - std::pow(0.999, t));
    p -= 0.01 * m_hat / (std::sqrt(v_hat) + 1e-8);
  }

  w.mutable_grad()[0] = g1;
  adam_step(params, state);
  w.zero_grad();
  w.mutable_grad()[0] = g2;
  adam_step(params, state);
  CHECK(w.data()[0] == p);
  CHECK(state.step == 2);
}

TEST_CASE("adam skips frozen parameters and rejects a mismatched state") {
  ParamSet params;
  Tensor frozen = Tensor::vector({1.0});
  Tensor live = Tensor::vector({1.0}, true);
  params.add("frozen", Partition::kPhoneme, frozen);
  params.add("live", Partition::kSpeech, live);
  AdamState state(params, {});
  live.mutable_grad()[0] = 1.0;
  adam_step(params, state);
  CHECK(frozen.data()[0] == 1.0);
  CHECK(live.data()[0] < 1.0);

  ParamSet other;
  other.add("x", Partition::kSpeech, Tensor::vector({1.0}, true));
  CHECK_THROWS_AS(adam_step(other, state), ConfigError);
}

TEST_CASE("set_trainable toggles gradient tracking per partition") {
  ParamSet params;
  params.add("a", Partition::kPhoneme, Tensor::vector({1.0}, true));
  params.add("b", Partition::kSpeech, Tensor::vector({1.0}, true));
  params.set_trainable(Partition::kPhoneme, false);
  CHECK_FALSE(params.find("a")->tensor.requires_grad());
  CHECK(params.find("b")->tensor.requires_grad());
  CHECK_THROWS_AS(params.add("a", Partition::kSpeech, Tensor::vector({1.0})), ConfigError);
}
