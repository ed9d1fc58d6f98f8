// SPDX-License-Identifier: Apache-2.0
#include <string>

#include "kernels.hpp"
#include "m21/ops.hpp"

namespace m21 {

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  return add_row_bias(matmul(input, weight), bias);
}

Tensor conv2d_bias(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  Tensor y = conv2d(x, kernel, stride, padding);
  return channel_shift(y, repeat_rows(bias, y.dim(0)));
}

Tensor demod_conv(const Tensor& x, const Tensor& kernel, const Tensor& scale, float eps, int padding) {
  if (!(eps > 0.0f)) throw ContractError("demod_conv: eps must be positive, got " + std::to_string(eps));
  kernels::require_rank("demod_conv", kernel, 4, "kernel");
  kernels::require_rank("demod_conv", scale, 2, "scale");
  const auto kh = kernel.dim(0), kw = kernel.dim(1), cin = kernel.dim(2), cout = kernel.dim(3);
  if (x.rank() != 4 || scale.dim(0) != x.dim(0) || scale.dim(1) != cin) {
    throw ShapeError("demod_conv: scale " + shape_str(scale.shape()) + " must be [N,Cin] for input " +
                     shape_str(x.shape()) + " and kernel " + shape_str(kernel.shape()));
  }
  const int pad = padding < 0 ? static_cast<int>(kh / 2) : padding;

  // Scaling the input per channel is the same as scaling the kernel's input
  // channels, so the modulated convolution runs as one batched conv2d.
  Tensor y = conv2d(channel_scale(x, scale), kernel, 1, pad);
  // sum_{ky,kx,i} (w[ky,kx,i,o] s[n,i])^2 = sum_i s[n,i]^2 sum_{ky,kx} w[ky,kx,i,o]^2
  Tensor tap_energy = reshape(sum_rows(reshape(square(kernel), {kh * kw, cin * cout})), {cin, cout});
  Tensor demod = rsqrt(add_scalar(matmul(square(scale), tap_energy), eps));
  return channel_scale(y, demod);
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  kernels::require_rank("instance_norm", x, 4, "input");
  const auto n = x.dim(0);
  const float inv_hw = 1.0f / static_cast<float>(x.dim(1) * x.dim(2));
  Tensor mu = mul_scalar(spatial_sum(x), inv_hw);
  Tensor centered = channel_shift(x, neg(mu));
  Tensor var = mul_scalar(spatial_sum(square(centered)), inv_hw);
  Tensor y = channel_scale(centered, rsqrt(add_scalar(var, eps)));
  if (gamma.defined()) y = channel_scale(y, repeat_rows(gamma, n));
  if (beta.defined()) y = channel_shift(y, repeat_rows(beta, n));
  return y;
}

Tensor l1_loss(const Tensor& a, const Tensor& b) { return mean(abs(sub(a, b))); }

Tensor mse_loss(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

}  // namespace m21
