// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace m21 {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor extents.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition (wrong domain, bad flag combination, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
class TapeState;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<float>> storage;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;
  // Set when the tensor is the output of an operation recorded on a tape.
  std::weak_ptr<TapeState> tape;
  std::int64_t node = -1;
};

}  // namespace detail

/// Row-major float32 n-d array. Copies share the underlying value; operations
/// never mutate their inputs, and mutable_data() is reserved for parameter
/// initialisation and optimiser updates.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor scalar(float value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  /// Extent along `axis`; negative axes count from the back.
  std::int64_t dim(int axis) const;
  std::int64_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  /// Value of a one-element tensor.
  float item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  /// Accumulated gradient; undefined until a backward pass reaches this leaf.
  Tensor grad() const;
  void zero_grad();
  /// True when the tensor participates in gradient tracking on a live tape.
  bool tracked() const;

  /// Same values, no gradient history.
  Tensor detach() const;
  /// Deep copy with no gradient history.
  Tensor clone() const;

  bool same_as(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend class TapeState;
  friend Tensor record_op(const char*, Tensor, std::vector<Tensor>,
                          std::function<std::vector<Tensor>(const Tensor&)>);
};

}  // namespace m21
