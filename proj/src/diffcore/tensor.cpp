// SPDX-License-Identifier: Apache-2.0
#include "m21/tensor.hpp"

#include <sstream>

namespace m21 {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) {
  auto impl = std::make_shared<detail::TensorImpl>();
  const auto n = shape_numel(shape);
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<std::vector<float>>(static_cast<std::size_t>(n), fill);
  impl_ = std::move(impl);
}

Tensor::Tensor(Shape shape, std::vector<float> values) {
  const auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(n) +
                     " values, got " + std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->storage = std::make_shared<std::vector<float>>(std::move(values));
  impl_ = std::move(impl);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl().storage->size()); }

std::span<const float> Tensor::data() const { return {impl().storage->data(), impl().storage->size()}; }

std::span<float> Tensor::mutable_data() { return {impl().storage->data(), impl().storage->size()}; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return (*impl().storage)[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (impl().node >= 0) throw ContractError("requires_grad can only be set on leaf tensors");
  impl().requires_grad = flag;
  return *this;
}

Tensor Tensor::grad() const {
  auto& g = impl().grad;
  return g ? Tensor(g) : Tensor();
}

void Tensor::zero_grad() { impl().grad.reset(); }

bool Tensor::tracked() const {
  const auto& i = impl();
  if (i.node >= 0) return !i.tape.expired();
  return i.requires_grad;
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape();
  impl->storage = impl_->storage;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return Tensor(shape(), std::vector<float>(data().begin(), data().end())); }

}  // namespace m21
