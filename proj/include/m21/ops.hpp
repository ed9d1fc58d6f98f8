// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "m21/tape.hpp"
#include "m21/tensor.hpp"

// Differentiable operations. Every backward rule is itself written with these
// operations, so gradients can be differentiated again (Tape::grad with
// create_graph). Images use the N,H,W,C layout; kernels are [kh,kw,Cin,Cout].
// Element-wise binary operations require identical shapes (no broadcasting).
namespace m21 {

// ---- element-wise ---------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float c);
Tensor mul_scalar(const Tensor& a, float c);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
/// |a|; the subgradient at 0 is 0.
Tensor abs(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope = 0.2f);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// log(1 + exp(a)), evaluated stably.
Tensor softplus(const Tensor& a);
/// 1/sqrt(a); a must be positive.
Tensor rsqrt(const Tensor& a);

// ---- reductions (64-bit accumulation) ---------------------------------------
/// Sum of all elements as a rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Rank-0 tensor broadcast to `shape`.
Tensor expand(const Tensor& scalar, const Shape& shape);
Tensor reshape(const Tensor& a, const Shape& shape);

// ---- matrices ---------------------------------------------------------------
/// op(a)·op(b) for rank-2 tensors, op = transpose when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
/// y[n,:] + bias for y [N,D], bias [D].
Tensor add_row_bias(const Tensor& y, const Tensor& bias);
/// Column sums of [N,D] -> [D].
Tensor sum_rows(const Tensor& y);
/// [D] -> [N,D] by repetition.
Tensor repeat_rows(const Tensor& v, std::int64_t rows);
/// Per-sample block selection: out[n,:] = x[n, idx[n]*D : idx[n]*D+D] for x [N,K*D].
Tensor gather_blocks(const Tensor& x, const std::vector<int>& idx, std::int64_t block);
/// Adjoint of gather_blocks: places g [N,D] into block idx[n] of a zero [N,K*D].
Tensor scatter_blocks(const Tensor& g, const std::vector<int>& idx, std::int64_t num_blocks);
/// Rows [begin, end) of the leading axis.
Tensor slice_batch(const Tensor& x, std::int64_t begin, std::int64_t end);
/// Concatenation along the leading axis.
Tensor concat_batch(const std::vector<Tensor>& parts);

// ---- NHWC channel broadcasting ------------------------------------------------
/// x[n,h,w,c] * s[n,c].
Tensor channel_scale(const Tensor& x, const Tensor& s);
/// x[n,h,w,c] + b[n,c].
Tensor channel_shift(const Tensor& x, const Tensor& b);
/// Sum over H and W: [N,H,W,C] -> [N,C].
Tensor spatial_sum(const Tensor& x);
/// [N,C] -> [N,H,W,C] by repetition.
Tensor spatial_broadcast(const Tensor& v, std::int64_t height, std::int64_t width);

// ---- convolution and resampling ----------------------------------------------
/// Cross-correlation of x [N,H,W,Cin] with kernel [kh,kw,Cin,Cout];
/// output extent (H + 2·padding − kh)/stride + 1. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride = 1, int padding = 0);
/// Gradient of conv2d with respect to its input (transposed convolution).
Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape,
                         int stride, int padding);
/// Gradient of conv2d with respect to its kernel.
Tensor conv2d_grad_kernel(const Tensor& x, const Tensor& grad_out, const Shape& kernel_shape,
                          int stride, int padding);
/// 2x2 average pooling, stride 2. H and W must be even.
Tensor avg_pool2(const Tensor& x);
/// 2x nearest-neighbour upsampling.
Tensor upsample2(const Tensor& x);

// ---- composites ---------------------------------------------------------------
/// input·weight + bias for input [N,Din], weight [Din,Dout], bias [Dout].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);
/// conv2d followed by a per-output-channel bias.
Tensor conv2d_bias(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride = 1,
                   int padding = 0);

/// Modulated convolution with weight demodulation. For every sample n the
/// kernel is scaled per input channel, w'[.,.,i,o] = w[.,.,i,o]·scale[n,i],
/// normalised per output channel, w'' = w' / sqrt(sum_{kh,kw,i} w'^2 + eps),
/// and applied with stride 1 and the given padding.
Tensor demod_conv(const Tensor& x, const Tensor& kernel, const Tensor& scale, float eps = 1e-8f,
                  int padding = -1);

/// Instance normalisation over H,W per sample and channel, with per-channel
/// affine parameters gamma/beta [C] (pass undefined tensors to skip the affine).
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps = 1e-5f);

/// mean |a - b|
Tensor l1_loss(const Tensor& a, const Tensor& b);
/// mean (a - b)^2
Tensor mse_loss(const Tensor& a, const Tensor& b);

}  // namespace m21
