// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "m21/tensor.hpp"

namespace m21 {

/// Maps the gradient of an operation's output to one gradient per input.
/// Undefined entries mean "no contribution".
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

/// Attach `out` to the current tape as the result of `name(inputs...)`.
/// Nothing is recorded when no tape is active, gradient mode is off, or no
/// input is tracked; `out` is returned unchanged in that case.
Tensor record_op(const char* name, Tensor out, std::vector<Tensor> inputs, BackwardFn fn);

/// True when operations executed on this thread are being recorded.
bool recording_enabled();

/// Ordered record of executed operations. Constructing a Tape makes it the
/// current recording target for this thread until it is destroyed.
///
/// The tape is consumed by backward(); calling backward() again without
/// reset() is an error. grad() queries gradients without consuming the tape
/// and, with create_graph, records the gradient computation itself so that
/// the returned tensors can be differentiated again.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Accumulate dLoss/dLeaf into the grad() of every leaf used on this tape.
  /// Leaves that do not influence the loss receive an explicit zero gradient.
  void backward(const Tensor& loss);

  /// Gradients of the scalar `output` with respect to `inputs` (leaves or
  /// recorded intermediates). Leaf grad() buffers are left untouched.
  std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                           bool create_graph = false);

  /// Drop every recorded operation and clear the consumed flag.
  void reset();

  std::size_t size() const;
  bool consumed() const;
  std::string op_name(std::size_t index) const;
  /// Node indices visited by the most recent backward()/grad() call.
  const std::vector<std::int64_t>& last_visit_order() const;

 private:
  std::shared_ptr<TapeState> state_;
  Tape* previous_ = nullptr;
};

/// Scalar-loss convenience: runs backward on the tape the loss was recorded on.
void backward(const Tensor& loss);

/// Disables recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace m21
