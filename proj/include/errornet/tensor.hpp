#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errornet/error.hpp"

namespace errornet {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

template <typename T>
struct Node;

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until the backward pass touches this tensor
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;  // producing operation, if recorded
};

// Dense N-d array with value semantics over a shared payload. Canonical
// layout for feature maps is N x C x H x W. Tensors are treated as immutable
// once produced by an operation; data_mut() is for leaves and test setup.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->value.assign(shape_numel(t.s_->shape), T(0));
    return t;
  }

  static Tensor full(Shape shape, T v) {
    Tensor t = zeros(std::move(shape));
    for (auto& x : t.s_->value) x = v;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> data) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    Tensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = std::move(shape);
    t.s_->value = std::move(data);
    return t;
  }

  static Tensor scalar(T v) { return full({1}, v); }

  bool defined() const { return static_cast<bool>(s_); }

  const Shape& shape() const { return storage().shape; }
  size_t ndim() const { return storage().shape.size(); }
  size_t dim(size_t i) const { return storage().shape.at(i); }
  size_t numel() const { return storage().value.size(); }

  std::span<const T> data() const { return storage().value; }
  std::span<T> data_mut() { return storage().value; }

  bool requires_grad() const { return defined() && s_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    storage().requires_grad = rg;
    if (!rg) storage().grad.clear();
    return *this;
  }

  bool has_grad() const { return defined() && !s_->grad.empty(); }
  std::span<const T> grad() const {
    if (!has_grad())
      throw UsageError("tensor has no gradient: " + shape_str(shape()));
    return s_->grad;
  }
  // Zero-initialized on first access.
  std::span<T> grad_mut() {
    auto& st = storage();
    if (st.grad.empty()) st.grad.assign(st.value.size(), T(0));
    return st.grad;
  }
  void zero_grad() { storage().grad.clear(); }

  T item() const {
    if (numel() != 1)
      throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return storage().value[0];
  }

  // Row-major multi-index accessor (test convenience).
  T at(std::initializer_list<size_t> idx) const {
    return storage().value[flat_index(idx)];
  }
  T grad_at(std::initializer_list<size_t> idx) const {
    if (!has_grad()) throw UsageError("grad_at on tensor without grad");
    return storage().grad[flat_index(idx)];
  }

  // Same values, no graph attachment, no gradient requirement.
  Tensor detach() const {
    Tensor t;
    t.s_ = std::make_shared<TensorStorage<T>>();
    t.s_->shape = storage().shape;
    t.s_->value = storage().value;
    return t;
  }

  Tensor clone() const {
    Tensor t = detach();
    t.s_->requires_grad = storage().requires_grad;
    return t;
  }

  bool all_finite() const {
    for (T v : storage().value)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::shared_ptr<TensorStorage<T>> storage_ptr() const { return s_; }
  TensorStorage<T>& storage() {
    if (!s_) throw UsageError("operation on undefined tensor");
    return *s_;
  }
  const TensorStorage<T>& storage() const {
    if (!s_) throw UsageError("operation on undefined tensor");
    return *s_;
  }

 private:
  size_t flat_index(std::initializer_list<size_t> idx) const {
    const Shape& sh = shape();
    if (idx.size() != sh.size())
      throw UsageError("index rank mismatch for " + shape_str(sh));
    size_t flat = 0;
    size_t i = 0;
    for (size_t v : idx) {
      if (v >= sh[i]) throw UsageError("index out of range");
      flat = flat * sh[i] + v;
      ++i;
    }
    return flat;
  }

  std::shared_ptr<TensorStorage<T>> s_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace errornet
