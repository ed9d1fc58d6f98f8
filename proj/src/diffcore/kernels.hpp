// SPDX-License-Identifier: Apache-2.0
// Raw float kernels shared by the differentiable operations.
#pragma once

#include <cstdint>
#include <string>

#include "m21/tensor.hpp"

namespace m21::kernels {

/// C (MxN) = op(A) · op(B) (+ C when accumulate). op(A) is MxK, op(B) is KxN;
/// A is stored MxK (or KxM when transposed), B KxN (or NxK), all row-major.
void gemm(bool transpose_a, bool transpose_b, std::int64_t m, std::int64_t n, std::int64_t k,
          const float* a, const float* b, float* c, bool accumulate);

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

inline void require_rank(const char* op, const Tensor& a, int rank, const char* what) {
  if (a.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_str(a.shape()));
  }
}

}  // namespace m21::kernels
