// Copyright 2026 The MUSE Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "muse/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace muse {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

template <typename T>
Tensor<T>::Tensor() : Tensor(Shape{0}) {}

template <typename T>
Tensor<T>::Tensor(Shape shape) : s_(std::make_shared<Storage>()) {
  s_->data.assign(shape_numel(shape), T(0));
  s_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : s_(std::make_shared<Storage>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
  s_->shape = std::move(shape);
  s_->data.assign(data.begin(), data.end());
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::initializer_list<T> values) {
  return Tensor(Shape{values.size()}, std::vector<T>(values));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  std::fill(t.s_->data.begin(), t.s_->data.end(), value);
  return t;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  }
  return s_->shape[axis];
}

template <typename T>
std::size_t Tensor<T>::rows() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got shape " + shape_str(shape()));
  return s_->shape[0];
}

template <typename T>
std::size_t Tensor<T>::cols() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got shape " + shape_str(shape()));
  return s_->shape[1];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw ShapeError("item() on non-scalar tensor of shape " + shape_str(shape()));
  }
  return s_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  s_->requires_grad = on;
  return *this;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out;
  out.s_->shape = s_->shape;
  out.s_->data = s_->data;
  return out;
}

template <typename T>
Tensor<T> GradMap<T>::operator()(const Tensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return Tensor<T>(t.shape());
  return it->second;
}

template <typename T>
std::span<T> GradMap<T>::sink(const Tensor<T>& t) {
  if (!t.requires_grad()) return {};
  auto it = grads_.find(t.id());
  if (it == grads_.end()) it = grads_.emplace(t.id(), Tensor<T>(t.shape())).first;
  return it->second.data();
}

template <typename T>
std::span<const T> GradMap<T>::find(const Tensor<T>& t) const {
  auto it = grads_.find(t.id());
  if (it == grads_.end()) return {};
  return std::span<const T>(it->second.data());
}

template <typename T>
void Tape<T>::record(const Tensor<T>& output, Rule rule) {
  if (consumed_) throw UsageError("cannot record on a tape that was already consumed");
  entries_.push_back(Entry{output.id(), std::move(rule)});
}

template <typename T>
GradMap<T> Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw UsageError("tape already consumed by a previous backward pass");
  if (loss.size() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const bool on_tape = std::any_of(entries_.begin(), entries_.end(),
                                   [&](const Entry& e) { return e.output == loss.id(); });
  if (!on_tape) throw UsageError("loss was not produced on this tape");

  GradMap<T> grads;
  grads.sink(loss)[0] = T(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->rule(grads);
  consumed_ = true;
  entries_.clear();
  entries_.shrink_to_fit();
  return grads;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradMap<float>;
template class GradMap<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace muse
