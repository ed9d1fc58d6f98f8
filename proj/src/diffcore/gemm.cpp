// SPDX-License-Identifier: Apache-2.0
#include <Eigen/Core>

#include "kernels.hpp"

namespace m21::kernels {

namespace {

using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

template <class Lhs, class Rhs>
void assign(MutMap& c, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
  if (accumulate) {
    c.noalias() += lhs * rhs;
  } else {
    c.noalias() = lhs * rhs;
  }
}

}  // namespace

void gemm(bool transpose_a, bool transpose_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const float* a, const float* b, float* c, bool accumulate) {
  MutMap cm(c, m, n);
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  if (!transpose_a && !transpose_b) {
    assign(cm, ConstMap(a, m, k), ConstMap(b, k, n), accumulate);
  } else if (!transpose_a && transpose_b) {
    assign(cm, ConstMap(a, m, k), ConstMap(b, n, k).transpose(), accumulate);
  } else if (transpose_a && !transpose_b) {
    assign(cm, ConstMap(a, k, m).transpose(), ConstMap(b, k, n), accumulate);
  } else {
    assign(cm, ConstMap(a, k, m).transpose(), ConstMap(b, n, k).transpose(), accumulate);
  }
}

}  // namespace m21::kernels
