// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <string>

#include "kernels.hpp"
#include "m21/ops.hpp"

namespace m21 {

using kernels::require_rank;
using kernels::require_same_shape;

namespace {

template <class F>
Tensor map_values(const Tensor& a, F f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor zip_values(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

}  // namespace

// ---- element-wise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  return record_op("add", zip_values(a, b, [](float x, float y) { return x + y; }), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  return record_op("sub", zip_values(a, b, [](float x, float y) { return x - y; }), {a, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, neg(g)}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  return record_op("mul", zip_values(a, b, [](float x, float y) { return x * y; }), {a, b},
                   [a, b](const Tensor& g) { return std::vector<Tensor>{mul(g, b), mul(g, a)}; });
}

Tensor add_scalar(const Tensor& a, float c) {
  return record_op("add_scalar", map_values(a, [c](float x) { return x + c; }), {a},
                   [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor mul_scalar(const Tensor& a, float c) {
  return record_op("mul_scalar", map_values(a, [c](float x) { return x * c; }), {a},
                   [c](const Tensor& g) { return std::vector<Tensor>{mul_scalar(g, c)}; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

Tensor square(const Tensor& a) {
  return record_op("square", map_values(a, [](float x) { return x * x; }), {a},
                   [a](const Tensor& g) { return std::vector<Tensor>{mul(g, mul_scalar(a, 2.0f))}; });
}

Tensor abs(const Tensor& a) {
  return record_op("abs", map_values(a, [](float x) { return std::fabs(x); }), {a},
                   [a](const Tensor& g) {
                     Tensor sign = map_values(a, [](float x) {
                       return x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f);
                     });
                     return std::vector<Tensor>{mul(g, sign)};
                   });
}

Tensor leaky_relu(const Tensor& a, float slope) {
  return record_op("leaky_relu", map_values(a, [slope](float x) { return x > 0.0f ? x : slope * x; }),
                   {a}, [a, slope](const Tensor& g) {
                     Tensor mask = map_values(a, [slope](float x) { return x > 0.0f ? 1.0f : slope; });
                     return std::vector<Tensor>{mul(g, mask)};
                   });
}

Tensor tanh(const Tensor& a) {
  Tensor y = map_values(a, [](float x) { return std::tanh(x); });
  return record_op("tanh", y, {a}, [y](const Tensor& g) {
    return std::vector<Tensor>{mul(g, add_scalar(neg(square(y)), 1.0f))};
  });
}

Tensor sigmoid(const Tensor& a) {
  Tensor y = map_values(a, [](float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
  });
  return record_op("sigmoid", y, {a}, [y](const Tensor& g) {
    return std::vector<Tensor>{mul(g, mul(y, add_scalar(neg(y), 1.0f)))};
  });
}

Tensor softplus(const Tensor& a) {
  return record_op("softplus", map_values(a, [](float x) {
                     return std::max(x, 0.0f) + std::log1p(std::exp(-std::fabs(x)));
                   }),
                   {a}, [a](const Tensor& g) { return std::vector<Tensor>{mul(g, sigmoid(a))}; });
}

Tensor rsqrt(const Tensor& a) {
  Tensor y = map_values(a, [](float x) { return 1.0f / std::sqrt(x); });
  return record_op("rsqrt", y, {a}, [y](const Tensor& g) {
    return std::vector<Tensor>{mul(g, mul_scalar(mul(y, square(y)), -0.5f))};
  });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  const Shape shape = a.shape();
  return record_op("sum", Tensor::scalar(static_cast<float>(acc)), {a},
                   [shape](const Tensor& g) { return std::vector<Tensor>{expand(g, shape)}; });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw ShapeError("mean of an empty tensor");
  return mul_scalar(sum(a), static_cast<float>(1.0 / static_cast<double>(a.numel())));
}

Tensor expand(const Tensor& scalar, const Shape& shape) {
  if (scalar.numel() != 1) throw ShapeError("expand: source must hold one value, got " + shape_str(scalar.shape()));
  const Shape src_shape = scalar.shape();
  return record_op("expand", Tensor(shape, scalar.item()), {scalar}, [src_shape](const Tensor& g) {
    return std::vector<Tensor>{reshape(sum(g), src_shape)};
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  Tensor out(shape, std::vector<float>(a.data().begin(), a.data().end()));
  const Shape src = a.shape();
  return record_op("reshape", out, {a}, [src](const Tensor& g) { return std::vector<Tensor>{reshape(g, src)}; });
}

// ---- matrices ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  require_rank("matmul", a, 2, "lhs");
  require_rank("matmul", b, 2, "rhs");
  const auto m = ta ? a.dim(1) : a.dim(0);
  const auto ka = ta ? a.dim(0) : a.dim(1);
  const auto kb = tb ? b.dim(1) : b.dim(0);
  const auto n = tb ? b.dim(0) : b.dim(1);
  if (ka != kb) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_str(a.shape()) + (ta ? "^T" : "") + " x " +
                     shape_str(b.shape()) + (tb ? "^T" : "") + ")");
  }
  Tensor out(Shape{m, n});
  kernels::gemm(ta, tb, m, n, ka, a.data().data(), b.data().data(), out.mutable_data().data(), false);
  return record_op("matmul", out, {a, b}, [a, b, ta, tb](const Tensor& g) {
    Tensor da = ta ? matmul(b, g, tb, true) : matmul(g, b, false, !tb);
    Tensor db = tb ? matmul(g, a, true, ta) : matmul(a, g, !ta, false);
    return std::vector<Tensor>{da, db};
  });
}

Tensor add_row_bias(const Tensor& y, const Tensor& bias) {
  require_rank("add_row_bias", y, 2, "input");
  require_rank("add_row_bias", bias, 1, "bias");
  if (bias.dim(0) != y.dim(1)) {
    throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(y.shape()));
  }
  Tensor out(y.shape());
  const auto rows = y.dim(0), cols = y.dim(1);
  auto src = y.data();
  auto bv = bias.data();
  auto dst = out.mutable_data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) dst[r * cols + c] = src[r * cols + c] + bv[c];
  return record_op("add_row_bias", out, {y, bias},
                   [](const Tensor& g) { return std::vector<Tensor>{g, sum_rows(g)}; });
}

Tensor sum_rows(const Tensor& y) {
  require_rank("sum_rows", y, 2, "input");
  const auto rows = y.dim(0), cols = y.dim(1);
  std::vector<double> acc(static_cast<std::size_t>(cols), 0.0);
  auto src = y.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) acc[c] += src[r * cols + c];
  Tensor out(Shape{cols});
  std::transform(acc.begin(), acc.end(), out.mutable_data().begin(), [](double v) { return static_cast<float>(v); });
  return record_op("sum_rows", out, {y}, [rows](const Tensor& g) { return std::vector<Tensor>{repeat_rows(g, rows)}; });
}

Tensor repeat_rows(const Tensor& v, std::int64_t rows) {
  require_rank("repeat_rows", v, 1, "input");
  const auto cols = v.dim(0);
  Tensor out(Shape{rows, cols});
  auto dst = out.mutable_data();
  for (std::int64_t r = 0; r < rows; ++r) std::copy(v.data().begin(), v.data().end(), dst.begin() + r * cols);
  return record_op("repeat_rows", out, {v}, [](const Tensor& g) { return std::vector<Tensor>{sum_rows(g)}; });
}

Tensor gather_blocks(const Tensor& x, const std::vector<int>& idx, std::int64_t block) {
  require_rank("gather_blocks", x, 2, "input");
  const auto n = x.dim(0), width = x.dim(1);
  if (static_cast<std::int64_t>(idx.size()) != n || block <= 0 || width % block != 0) {
    throw ShapeError("gather_blocks: " + std::to_string(idx.size()) + " indices / block " + std::to_string(block) +
                     " incompatible with " + shape_str(x.shape()));
  }
  const auto k = width / block;
  Tensor out(Shape{n, block});
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::int64_t r = 0; r < n; ++r) {
    if (idx[r] < 0 || idx[r] >= k) throw ShapeError("gather_blocks: block index out of range");
    std::copy_n(src.begin() + r * width + idx[r] * block, block, dst.begin() + r * block);
  }
  return record_op("gather_blocks", out, {x},
                   [idx, k](const Tensor& g) { return std::vector<Tensor>{scatter_blocks(g, idx, k)}; });
}

Tensor scatter_blocks(const Tensor& g, const std::vector<int>& idx, std::int64_t num_blocks) {
  require_rank("scatter_blocks", g, 2, "input");
  const auto n = g.dim(0), block = g.dim(1);
  if (static_cast<std::int64_t>(idx.size()) != n) throw ShapeError("scatter_blocks: index count mismatch");
  Tensor out(Shape{n, num_blocks * block});
  auto src = g.data();
  auto dst = out.mutable_data();
  for (std::int64_t r = 0; r < n; ++r) {
    if (idx[r] < 0 || idx[r] >= num_blocks) throw ShapeError("scatter_blocks: block index out of range");
    std::copy_n(src.begin() + r * block, block, dst.begin() + r * num_blocks * block + idx[r] * block);
  }
  return record_op("scatter_blocks", out, {g},
                   [idx, block](const Tensor& gg) { return std::vector<Tensor>{gather_blocks(gg, idx, block)}; });
}

Tensor slice_batch(const Tensor& x, std::int64_t begin, std::int64_t end) {
  if (x.rank() < 1 || begin < 0 || end < begin || end > x.dim(0)) {
    throw ShapeError("slice_batch: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  Shape shape = x.shape();
  const auto row = x.numel() / std::max<std::int64_t>(x.dim(0), 1);
  shape[0] = end - begin;
  Tensor out(shape, std::vector<float>(x.data().begin() + begin * row, x.data().begin() + end * row));
  const Shape full = x.shape();
  return record_op("slice_batch", out, {x}, [full, begin, end](const Tensor& g) {
    std::vector<Tensor> parts;
    Shape head = full, tail = full;
    head[0] = begin;
    tail[0] = full[0] - end;
    if (begin > 0) parts.emplace_back(head, 0.0f);
    parts.push_back(g);
    if (tail[0] > 0) parts.emplace_back(tail, 0.0f);
    return std::vector<Tensor>{concat_batch(parts)};
  });
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat_batch: rank-0 input");
  std::int64_t rows = 0;
  std::vector<float> values;
  for (const auto& p : parts) {
    Shape tail = p.shape();
    if (tail.size() != shape.size() || !std::equal(tail.begin() + 1, tail.end(), shape.begin() + 1)) {
      throw ShapeError("concat_batch: " + shape_str(p.shape()) + " incompatible with " + shape_str(shape));
    }
    rows += p.dim(0);
    values.insert(values.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  std::vector<std::int64_t> bounds;
  for (const auto& p : parts) bounds.push_back(p.dim(0));
  return record_op("concat_batch", Tensor(shape, std::move(values)), parts, [bounds](const Tensor& g) {
    std::vector<Tensor> grads;
    std::int64_t at = 0;
    for (auto b : bounds) {
      grads.push_back(slice_batch(g, at, at + b));
      at += b;
    }
    return grads;
  });
}

// ---- NHWC channel broadcasting ---------------------------------------------

namespace {

void require_nc_match(const char* op, const Tensor& x, const Tensor& v) {
  require_rank(op, x, 4, "input");
  require_rank(op, v, 2, "per-channel operand");
  if (v.dim(0) != x.dim(0) || v.dim(1) != x.dim(3)) {
    throw ShapeError(std::string(op) + ": operand " + shape_str(v.shape()) + " does not match " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor channel_scale(const Tensor& x, const Tensor& s) {
  require_nc_match("channel_scale", x, s);
  const auto n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor out(x.shape());
  auto src = x.data();
  auto sv = s.data();
  auto dst = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t k = 0; k < c; ++k) {
        const auto at = (i * hw + p) * c + k;
        dst[at] = src[at] * sv[i * c + k];
      }
  return record_op("channel_scale", out, {x, s}, [x, s](const Tensor& g) {
    return std::vector<Tensor>{channel_scale(g, s), spatial_sum(mul(g, x))};
  });
}

Tensor channel_shift(const Tensor& x, const Tensor& b) {
  require_nc_match("channel_shift", x, b);
  const auto n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor out(x.shape());
  auto src = x.data();
  auto bv = b.data();
  auto dst = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < hw; ++p)
      for (std::int64_t k = 0; k < c; ++k) {
        const auto at = (i * hw + p) * c + k;
        dst[at] = src[at] + bv[i * c + k];
      }
  return record_op("channel_shift", out, {x, b},
                   [](const Tensor& g) { return std::vector<Tensor>{g, spatial_sum(g)}; });
}

Tensor spatial_sum(const Tensor& x) {
  require_rank("spatial_sum", x, 4, "input");
  const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<double> acc(static_cast<std::size_t>(n * c), 0.0);
  auto src = x.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < h * w; ++p)
      for (std::int64_t k = 0; k < c; ++k) acc[i * c + k] += src[(i * h * w + p) * c + k];
  Tensor out(Shape{n, c});
  std::transform(acc.begin(), acc.end(), out.mutable_data().begin(), [](double v) { return static_cast<float>(v); });
  return record_op("spatial_sum", out, {x},
                   [h, w](const Tensor& g) { return std::vector<Tensor>{spatial_broadcast(g, h, w)}; });
}

Tensor spatial_broadcast(const Tensor& v, std::int64_t height, std::int64_t width) {
  require_rank("spatial_broadcast", v, 2, "input");
  const auto n = v.dim(0), c = v.dim(1);
  Tensor out(Shape{n, height, width, c});
  auto src = v.data();
  auto dst = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t p = 0; p < height * width; ++p)
      std::copy_n(src.begin() + i * c, c, dst.begin() + (i * height * width + p) * c);
  return record_op("spatial_broadcast", out, {v}, [](const Tensor& g) { return std::vector<Tensor>{spatial_sum(g)}; });
}

}  // namespace m21
