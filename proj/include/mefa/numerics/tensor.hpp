#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mefa/errors.hpp"

namespace mefa::num {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
class Tape;

namespace detail {

template <typename T>
struct Storage {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
};

}  // namespace detail

/// Dense row-major array with an optional gradient buffer.
///
/// A Tensor is a handle: copies share storage. Operations in ops.hpp produce new
/// tensors and, while a Tape is active on the calling thread, record how to
/// propagate gradients back to any input that requires them.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<detail::Storage<T>>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
    if (shape_size(shape) != values.size()) {
      throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                           std::to_string(values.size()) + " values");
    }
    impl_->shape = std::move(shape);
    impl_->value = std::move(values);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
  }
  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
  }
  static Tensor vector(std::vector<T> values, bool requires_grad = false) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values,
                       bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const noexcept { return static_cast<bool>(impl_); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->value.size(); }
  /// Rows of a matrix; a vector counts as one row.
  std::size_t rows() const { return rank() == 1 ? 1 : impl_->shape[0]; }
  /// Trailing dimension.
  std::size_t cols() const { return impl_->shape.back(); }

  std::span<const T> data() const { return impl_->value; }
  std::span<T> mutable_data() { return impl_->value; }
  T operator[](std::size_t i) const { return impl_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return impl_->value[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
    return impl_->value[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  /// Gradient buffer, allocated (zeroed) on first access. Const because the
  /// handle is shared: accumulation mutates storage, not the handle.
  std::span<T> grad_mut() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), T{0});
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.clear(); }

  /// Copy of the values with no gradient history.
  Tensor detach() const { return Tensor(shape(), impl_->value, false); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::Storage<T>> impl_;
};

/// Ordered record of differentiable operations executed while the tape is active.
///
/// Only one tape is active per thread (see TapeScope). Backward replays the
/// recorded entries newest-first, exactly once each.
template <typename T>
class Tape {
 public:
  struct Entry {
    const char* name;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const char* name, std::function<void()> backward) {
    entries_.push_back(Entry{name, std::move(backward)});
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable leaf.
  /// Returns the number of entries visited.
  std::size_t backward(Tensor<T> loss) {
    if (loss.size() != 1) {
      throw DimensionError("backward needs a scalar loss, got " + shape_string(loss.shape()));
    }
    loss.grad_mut()[0] += T{1};
    std::size_t visited = 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      it->backward();
      ++visited;
    }
    return visited;
  }

  void clear() { entries_.clear(); }

  static Tape* active() { return current_; }

 private:
  template <typename>
  friend class TapeScope;
  template <typename>
  friend class NoGradScope;
  static inline thread_local Tape* current_ = nullptr;
  std::vector<Entry> entries_;
};

/// Makes a tape the active recorder on this thread for the scope's lifetime.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::current_) { Tape<T>::current_ = &tape; }
  ~TapeScope() { Tape<T>::current_ = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording on this thread (inference paths).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::current_) { Tape<T>::current_ = nullptr; }
  ~NoGradScope() { Tape<T>::current_ = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

}  // namespace mefa::num
