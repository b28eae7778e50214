#include "peft/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <sstream>

#include "peft/errors.hpp"

namespace peft {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << "x";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows, bool requires_grad) {
  std::vector<Scalar> values;
  std::size_t width = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != width) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from({rows.size(), width}, std::move(values), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("expected a 2-D tensor, got " + shape_str(shape()));
  return impl_->shape[1];
}

Scalar Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  if (!flag) impl_->grad.clear();
}

std::span<Scalar> Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0);
  return impl_->grad;
}

std::span<const Scalar> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

std::size_t total_elements(const NamedTensors& tensors) {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.tensor.numel();
  return n;
}

}  // namespace peft
