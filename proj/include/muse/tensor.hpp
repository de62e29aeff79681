// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "muse/errors.hpp"

namespace muse {

using Shape = std::vector<std::size_t>;

// 64-byte aligned allocation. Vectorised kernels peel a different number of
// leading elements depending on buffer alignment, which changes summation
// order; fixed alignment keeps results bitwise reproducible within a process.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

// Dense row-major array. A Tensor is a handle: copies share storage, which is
// how parameters are referenced from both the model and the optimizer. Use
// clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor();
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> data);

  static Tensor scalar(T value);
  static Tensor vector(std::initializer_list<T> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor full(Shape shape, T value);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return s_->data.size(); }
  // Rank-2 accessors; throw ShapeError on other ranks.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<T> data() { return s_->data; }
  std::span<const T> data() const { return s_->data; }
  T* ptr() { return s_->data.data(); }
  const T* ptr() const { return s_->data.data(); }

  T& operator[](std::size_t i) { return s_->data[i]; }
  const T& operator[](std::size_t i) const { return s_->data[i]; }
  T& operator()(std::size_t r, std::size_t c) { return s_->data[r * s_->shape[1] + c]; }
  const T& operator()(std::size_t r, std::size_t c) const {
    return s_->data[r * s_->shape[1] + c];
  }
  T item() const;

  bool requires_grad() const { return s_ && s_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  // Storage identity; gradients are keyed by it.
  const void* id() const { return s_.get(); }

  // Deep copy; the copy never requires grad.
  Tensor clone() const;

 private:
  struct Storage {
    Shape shape;
    AlignedVector<T> data;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

// Gradients produced by one backward pass, keyed by tensor identity.
template <typename T>
class GradMap {
 public:
  // Gradient of `t`; zeros of the right shape when `t` did not participate.
  Tensor<T> operator()(const Tensor<T>& t) const;
  bool contains(const Tensor<T>& t) const { return grads_.count(t.id()) != 0; }
  // Accumulation buffer for `t`, created zero-filled on first use. Empty when
  // `t` does not require grad.
  std::span<T> sink(const Tensor<T>& t);
  // Existing gradient buffer, or empty when nothing flowed into `t`.
  std::span<const T> find(const Tensor<T>& t) const;

 private:
  std::unordered_map<const void*, Tensor<T>> grads_;
};

// Records local gradient rules during one forward pass. Ops take a Tape
// pointer; a null tape (or inputs that do not require grad) records nothing.
template <typename T>
class Tape {
 public:
  using Rule = std::function<void(GradMap<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor<T>& output, Rule rule);
  GradMap<T> backward(const Tensor<T>& loss);

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    const void* output;
    Rule rule;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// True when an op on `inputs` has to be recorded on `tape`.
template <typename T>
bool tracks(const Tape<T>* tape, std::initializer_list<const Tensor<T>*> inputs) {
  if (tape == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace muse
