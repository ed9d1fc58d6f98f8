// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cstring>
#include <string>

#include "kernels.hpp"
#include "m21/ops.hpp"

namespace m21 {

using kernels::require_rank;

namespace {

struct ConvGeometry {
  std::int64_t n, h, w, cin;
  std::int64_t kh, kw, cout;
  std::int64_t oh, ow;
  int stride, pad;

  std::int64_t patch() const { return kh * kw * cin; }
  std::int64_t positions() const { return oh * ow; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

ConvGeometry geometry(const char* op, const Shape& x, const Shape& k, int stride, int pad) {
  if (x.size() != 4) throw ShapeError(std::string(op) + ": input must be [N,H,W,C], got " + shape_str(x));
  if (k.size() != 4) throw ShapeError(std::string(op) + ": kernel must be [kh,kw,Cin,Cout], got " + shape_str(k));
  if (k[2] != x[3]) {
    throw ShapeError(std::string(op) + ": kernel expects " + std::to_string(k[2]) + " input channels, input " +
                     shape_str(x) + " has " + std::to_string(x[3]));
  }
  if (k[0] < 1 || k[1] < 1) throw ShapeError(std::string(op) + ": kernel extents must be >= 1, got " + shape_str(k));
  if (stride < 1 || pad < 0) throw ShapeError(std::string(op) + ": stride must be >= 1 and padding >= 0");
  const auto ph = x[1] + 2 * pad - k[0];
  const auto pw = x[2] + 2 * pad - k[1];
  if (ph < 0 || pw < 0) {
    throw ShapeError(std::string(op) + ": kernel " + shape_str(k) + " does not fit padded input " + shape_str(x));
  }
  return ConvGeometry{x[0], x[1], x[2], x[3], k[0], k[1], k[3], ph / stride + 1, pw / stride + 1, stride, pad};
}

// col[p, (ky*kw + kx)*cin + c] = x[n, oy*s - pad + ky, ox*s - pad + kx, c]
void im2col(const ConvGeometry& g, const float* x, float* col) {
  const auto cin = g.cin;
  for (std::int64_t oy = 0; oy < g.oh; ++oy) {
    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
      float* dst = col + (oy * g.ow + ox) * g.patch();
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = oy * g.stride - g.pad + ky;
        for (std::int64_t kx = 0; kx < g.kw; ++kx, dst += cin) {
          const auto ix = ox * g.stride - g.pad + kx;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::fill_n(dst, cin, 0.0f);
          } else {
            std::memcpy(dst, x + (iy * g.w + ix) * cin, static_cast<std::size_t>(cin) * sizeof(float));
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const float* col, float* x) {
  const auto cin = g.cin;
  for (std::int64_t oy = 0; oy < g.oh; ++oy) {
    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
      const float* src = col + (oy * g.ow + ox) * g.patch();
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = oy * g.stride - g.pad + ky;
        for (std::int64_t kx = 0; kx < g.kw; ++kx, src += cin) {
          const auto ix = ox * g.stride - g.pad + kx;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) continue;
          float* dst = x + (iy * g.w + ix) * cin;
          for (std::int64_t c = 0; c < cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding) {
  const auto g = geometry("conv2d", x.shape(), kernel.shape(), stride, padding);
  Tensor out(Shape{g.n, g.oh, g.ow, g.cout});
  const float* w = kernel.data().data();
  float* y = out.mutable_data().data();
  if (g.pointwise()) {
    kernels::gemm(false, false, g.n * g.h * g.w, g.cout, g.cin, x.data().data(), w, y, false);
  } else {
    std::vector<float> col(static_cast<std::size_t>(g.positions() * g.patch()));
    for (std::int64_t i = 0; i < g.n; ++i) {
      im2col(g, x.data().data() + i * g.h * g.w * g.cin, col.data());
      kernels::gemm(false, false, g.positions(), g.cout, g.patch(), col.data(), w, y + i * g.positions() * g.cout,
                    false);
    }
  }
  const Shape in_shape = x.shape(), k_shape = kernel.shape();
  return record_op("conv2d", out, {x, kernel}, [x, kernel, in_shape, k_shape, stride, padding](const Tensor& gy) {
    return std::vector<Tensor>{conv2d_grad_input(gy, kernel, in_shape, stride, padding),
                               conv2d_grad_kernel(x, gy, k_shape, stride, padding)};
  });
}

Tensor conv2d_grad_input(const Tensor& grad_out, const Tensor& kernel, const Shape& input_shape, int stride,
                         int padding) {
  const auto g = geometry("conv2d_grad_input", input_shape, kernel.shape(), stride, padding);
  const Shape expect{g.n, g.oh, g.ow, g.cout};
  if (grad_out.shape() != expect) {
    throw ShapeError("conv2d_grad_input: gradient " + shape_str(grad_out.shape()) + ", expected " + shape_str(expect));
  }
  Tensor dx(input_shape, 0.0f);
  const float* w = kernel.data().data();
  const float* gy = grad_out.data().data();
  float* dxp = dx.mutable_data().data();
  if (g.pointwise()) {
    kernels::gemm(false, true, g.n * g.h * g.w, g.cin, g.cout, gy, w, dxp, false);
  } else {
    std::vector<float> col(static_cast<std::size_t>(g.positions() * g.patch()));
    for (std::int64_t i = 0; i < g.n; ++i) {
      kernels::gemm(false, true, g.positions(), g.patch(), g.cout, gy + i * g.positions() * g.cout, w, col.data(),
                    false);
      col2im_add(g, col.data(), dxp + i * g.h * g.w * g.cin);
    }
  }
  const Shape k_shape = kernel.shape();
  return record_op("conv2d_grad_input", dx, {grad_out, kernel},
                   [grad_out, kernel, k_shape, stride, padding](const Tensor& gg) {
                     return std::vector<Tensor>{conv2d(gg, kernel, stride, padding),
                                                conv2d_grad_kernel(gg, grad_out, k_shape, stride, padding)};
                   });
}

Tensor conv2d_grad_kernel(const Tensor& x, const Tensor& grad_out, const Shape& kernel_shape, int stride,
                          int padding) {
  const auto g = geometry("conv2d_grad_kernel", x.shape(), kernel_shape, stride, padding);
  const Shape expect{g.n, g.oh, g.ow, g.cout};
  if (grad_out.shape() != expect) {
    throw ShapeError("conv2d_grad_kernel: gradient " + shape_str(grad_out.shape()) + ", expected " +
                     shape_str(expect));
  }
  Tensor dw(kernel_shape, 0.0f);
  const float* gy = grad_out.data().data();
  float* dwp = dw.mutable_data().data();
  if (g.pointwise()) {
    kernels::gemm(true, false, g.cin, g.cout, g.n * g.h * g.w, x.data().data(), gy, dwp, false);
  } else {
    std::vector<float> col(static_cast<std::size_t>(g.positions() * g.patch()));
    for (std::int64_t i = 0; i < g.n; ++i) {
      im2col(g, x.data().data() + i * g.h * g.w * g.cin, col.data());
      kernels::gemm(true, false, g.patch(), g.cout, g.positions(), col.data(), gy + i * g.positions() * g.cout, dwp,
                    i > 0);
    }
  }
  const Shape in_shape = x.shape();
  return record_op("conv2d_grad_kernel", dw, {x, grad_out},
                   [x, grad_out, in_shape, stride, padding](const Tensor& gw) {
                     return std::vector<Tensor>{conv2d_grad_input(grad_out, gw, in_shape, stride, padding),
                                                conv2d(x, gw, stride, padding)};
                   });
}

Tensor avg_pool2(const Tensor& x) {
  require_rank("avg_pool2", x, 4, "input");
  const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: spatial extents must be even, got " + shape_str(x.shape()));
  const auto oh = h / 2, ow = w / 2;
  Tensor out(Shape{n, oh, ow, c});
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t xx = 0; xx < ow; ++xx)
        for (std::int64_t k = 0; k < c; ++k) {
          auto at = [&](std::int64_t yy, std::int64_t xc) { return src[((i * h + yy) * w + xc) * c + k]; };
          dst[((i * oh + y) * ow + xx) * c + k] =
              0.25f * (at(2 * y, 2 * xx) + at(2 * y, 2 * xx + 1) + at(2 * y + 1, 2 * xx) + at(2 * y + 1, 2 * xx + 1));
        }
  return record_op("avg_pool2", out, {x},
                   [](const Tensor& g) { return std::vector<Tensor>{mul_scalar(upsample2(g), 0.25f)}; });
}

Tensor upsample2(const Tensor& x) {
  require_rank("upsample2", x, 4, "input");
  const auto n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor out(Shape{n, 2 * h, 2 * w, c});
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t y = 0; y < 2 * h; ++y)
      for (std::int64_t xx = 0; xx < 2 * w; ++xx)
        std::copy_n(src.begin() + ((i * h + y / 2) * w + xx / 2) * c, c,
                    dst.begin() + ((i * 2 * h + y) * 2 * w + xx) * c);
  return record_op("upsample2", out, {x},
                   [](const Tensor& g) { return std::vector<Tensor>{mul_scalar(avg_pool2(g), 4.0f)}; });
}

}  // namespace m21
