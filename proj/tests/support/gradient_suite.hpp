// SPDX-License-Identifier: Apache-2.0
// Central finite-difference checks for every differentiable operation.
// Shared by the unit tests (a few instances) and the acceptance suite.
#pragma once

#include <string>
#include <vector>

#include "gradcheck.hpp"

namespace m21::testing {

struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  ScalarFn fn;
};

// Inputs for kinked operations (abs, leaky_relu) keep |x| >= 0.05 so the
// +-1e-3 stencil never straddles the kink.
inline std::vector<GradCase> make_op_cases(unsigned seed) {
  std::mt19937 rng(seed);
  auto rt = [&](Shape s, float lo = -1.0f, float hi = 1.0f, float min_mag = 0.0f) {
    return random_tensor(rng, std::move(s), lo, hi, min_mag);
  };
  std::uniform_int_distribution<int> pick(1, 3);
  const std::int64_t n = pick(rng) + 1, h = 2 * pick(rng), w = 2 * pick(rng), c = pick(rng) + 1;
  const unsigned proj = seed * 7919u + 1u;
  auto P = [proj](const Tensor& y) { return random_projection(y, proj); };

  std::vector<GradCase> cases;
  auto add_case = [&](std::string name, std::vector<Tensor> in, ScalarFn fn) {
    cases.push_back(GradCase{std::move(name), std::move(in), std::move(fn)});
  };
  using V = const std::vector<Tensor>&;

  add_case("add", {rt({n, c}), rt({n, c})}, [P](Tape&, V x) { return P(add(x[0], x[1])); });
  add_case("sub", {rt({n, c}), rt({n, c})}, [P](Tape&, V x) { return P(sub(x[0], x[1])); });
  add_case("mul", {rt({n, c}), rt({n, c})}, [P](Tape&, V x) { return P(mul(x[0], x[1])); });
  add_case("add_scalar", {rt({n, c})}, [P](Tape&, V x) { return P(add_scalar(x[0], 0.3f)); });
  add_case("mul_scalar", {rt({n, c})}, [P](Tape&, V x) { return P(mul_scalar(x[0], -1.7f)); });
  add_case("square", {rt({n, c})}, [P](Tape&, V x) { return P(square(x[0])); });
  add_case("abs", {rt({n, c}, -1, 1, 0.05f)}, [P](Tape&, V x) { return P(abs(x[0])); });
  add_case("leaky_relu", {rt({n, h, w, c}, -1, 1, 0.05f)}, [P](Tape&, V x) { return P(leaky_relu(x[0])); });
  add_case("tanh", {rt({n, c}, -2, 2)}, [P](Tape&, V x) { return P(tanh(x[0])); });
  add_case("sigmoid", {rt({n, c}, -3, 3)}, [P](Tape&, V x) { return P(sigmoid(x[0])); });
  add_case("softplus", {rt({n, c}, -3, 3)}, [P](Tape&, V x) { return P(softplus(x[0])); });
  add_case("rsqrt", {rt({n, c}, 0.5f, 2.0f)}, [P](Tape&, V x) { return P(rsqrt(x[0])); });
  add_case("sum", {rt({n, h, c})}, [](Tape&, V x) { return mul_scalar(sum(x[0]), 0.5f); });
  add_case("mean", {rt({n, h, c})}, [](Tape&, V x) { return square(mean(x[0])); });
  add_case("expand", {rt({})}, [P, n, c](Tape&, V x) { return P(expand(x[0], {n, c})); });
  add_case("reshape", {rt({n, h, c})}, [P, n, h, c](Tape&, V x) { return P(reshape(x[0], {n * h, c})); });
  for (int t = 0; t < 4; ++t) {
    const bool ta = t & 1, tb = t & 2;
    const std::int64_t m = n, k = c + 1, q = h;
    add_case("matmul_t" + std::to_string(t), {rt(ta ? Shape{k, m} : Shape{m, k}), rt(tb ? Shape{q, k} : Shape{k, q})},
             [P, ta, tb](Tape&, V x) { return P(matmul(x[0], x[1], ta, tb)); });
  }
  add_case("add_row_bias", {rt({n, c}), rt({c})}, [P](Tape&, V x) { return P(add_row_bias(x[0], x[1])); });
  add_case("sum_rows", {rt({n, c})}, [P](Tape&, V x) { return P(sum_rows(x[0])); });
  add_case("repeat_rows", {rt({c})}, [P, n](Tape&, V x) { return P(repeat_rows(x[0], n)); });
  std::vector<int> idx;
  for (std::int64_t i = 0; i < n; ++i) idx.push_back(static_cast<int>((i + seed) % 2));
  add_case("gather_blocks", {rt({n, 2 * c})}, [P, idx, c](Tape&, V x) { return P(gather_blocks(x[0], idx, c)); });
  add_case("scatter_blocks", {rt({n, c})}, [P, idx](Tape&, V x) { return P(scatter_blocks(x[0], idx, 2)); });
  add_case("slice_batch", {rt({n + 1, c})}, [P, n](Tape&, V x) { return P(slice_batch(x[0], 1, n + 1)); });
  add_case("concat_batch", {rt({n, h, c}), rt({1, h, c})}, [P](Tape&, V x) { return P(concat_batch({x[0], x[1]})); });
  add_case("channel_scale", {rt({n, h, w, c}), rt({n, c})}, [P](Tape&, V x) { return P(channel_scale(x[0], x[1])); });
  add_case("channel_shift", {rt({n, h, w, c}), rt({n, c})}, [P](Tape&, V x) { return P(channel_shift(x[0], x[1])); });
  add_case("spatial_sum", {rt({n, h, w, c})}, [P](Tape&, V x) { return P(spatial_sum(x[0])); });
  add_case("spatial_broadcast", {rt({n, c})}, [P, h, w](Tape&, V x) { return P(spatial_broadcast(x[0], h, w)); });
  add_case("conv2d_3x3_pad1", {rt({n, h, w, c}), rt({3, 3, c, c + 1})},
           [P](Tape&, V x) { return P(conv2d(x[0], x[1], 1, 1)); });
  add_case("conv2d_stride2", {rt({n, h + 1, w + 1, c}), rt({3, 3, c, 2})},
           [P](Tape&, V x) { return P(conv2d(x[0], x[1], 2, 0)); });
  add_case("conv2d_1x1", {rt({n, h, w, c}), rt({1, 1, c, 3})}, [P](Tape&, V x) { return P(conv2d(x[0], x[1])); });
  {
    const Shape in_shape{n, h, w, c};
    add_case("conv2d_grad_input", {rt({n, h, w, 2}), rt({3, 3, c, 2})},
             [P, in_shape](Tape&, V x) { return P(conv2d_grad_input(x[0], x[1], in_shape, 1, 1)); });
    add_case("conv2d_grad_kernel", {rt({n, h, w, c}), rt({n, h, w, 2})},
             [P, c](Tape&, V x) { return P(conv2d_grad_kernel(x[0], x[1], {3, 3, c, 2}, 1, 1)); });
  }
  add_case("avg_pool2", {rt({n, h, w, c})}, [P](Tape&, V x) { return P(avg_pool2(x[0])); });
  add_case("upsample2", {rt({n, h, w, c})}, [P](Tape&, V x) { return P(upsample2(x[0])); });
  add_case("dense", {rt({n, c}), rt({c, 3}), rt({3})}, [P](Tape&, V x) { return P(dense(x[0], x[1], x[2])); });
  add_case("conv2d_bias", {rt({n, h, w, c}), rt({3, 3, c, 2}), rt({2})},
           [P](Tape&, V x) { return P(conv2d_bias(x[0], x[1], x[2], 1, 1)); });
  add_case("demod_conv", {rt({n, h, w, c}), rt({3, 3, c, 2}), rt({n, c}, 0.5f, 1.5f)},
           [P](Tape&, V x) { return P(demod_conv(x[0], x[1], x[2])); });
  add_case("instance_norm", {rt({n, h, w, c}), rt({c}), rt({c})},
           [P](Tape&, V x) { return P(instance_norm(x[0], x[1], x[2])); });
  add_case("l1_loss", {rt({n, c}, -1, 1, 0.05f), Tensor({n, c}, 0.0f)}, [](Tape&, V x) { return l1_loss(x[0], x[1]); });
  add_case("mse_loss", {rt({n, c}), rt({n, c})}, [](Tape&, V x) { return mse_loss(x[0], x[1]); });
  // Second order: gradient-norm penalty of a small conv net, differentiated
  // with respect to the net's kernel and the input.
  add_case("double_backward_grad_norm", {rt({n, h, w, c}), rt({3, 3, c, 2}, -0.5f, 0.5f)}, [](Tape& tape, V x) {
    Tensor y = sum(avg_pool2(tanh(conv2d(x[0], x[1], 1, 1))));
    Tensor g = tape.grad(y, {x[0]}, true)[0];
    return mul_scalar(sum(square(g)), 0.5f);
  });
  return cases;
}

}  // namespace m21::testing
