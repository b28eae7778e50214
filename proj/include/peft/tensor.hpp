#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace peft {

#ifdef PEFT_FORGE_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until the first gradient arrives
  bool requires_grad = false;
  // Index of the producing op in the tape that recorded it; -1 for leaves.
  long producer = -1;
};

/// Dense row-major tensor handle.
///
/// Copies share storage (like a reference); use clone() for a deep copy.
/// Gradients accumulate only when requires_grad is set.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);
  /// 2-D tensor from nested rows, mostly for tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows,
                       bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<Scalar> data() { return impl_->data; }
  std::span<const Scalar> data() const { return impl_->data; }
  Scalar* ptr() { return impl_->data.data(); }
  const Scalar* ptr() const { return impl_->data.data(); }

  Scalar& at(std::size_t i) { return impl_->data[i]; }
  Scalar at(std::size_t i) const { return impl_->data[i]; }
  Scalar& at(std::size_t r, std::size_t c) { return impl_->data[r * cols() + c]; }
  Scalar at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  Scalar item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag);

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<Scalar> grad();
  std::span<const Scalar> grad() const;
  void zero_grad();

  long producer() const { return impl_->producer; }
  void set_producer(long index) { impl_->producer = index; }

  /// Deep copy of data; the copy is a leaf and carries no gradient.
  Tensor clone() const;
  /// Same storage identity check.
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// Ordered (name, tensor) list. Order is the declaration order used by the
/// binary format.
struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using NamedTensors = std::vector<NamedTensor>;

std::size_t total_elements(const NamedTensors& tensors);

}  // namespace peft
