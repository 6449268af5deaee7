#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uat/errors.hpp"

namespace uat {

using Shape = std::vector<int64_t>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) {
    if (e < 0) throw ShapeError("negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

// Dense row-major tensor. Storage is shared between copies; clone() makes it
// private. Element type is float for training and double for the
// verification paths.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    size_ = shape_size(shape_);
    data_ = std::shared_ptr<T[]>(new T[size_]());
  }

  Tensor(Shape shape, std::initializer_list<T> v) : Tensor(values(std::move(shape), std::vector<T>(v))) {}

  // Storage left uninitialized; for hot paths that fully overwrite it.
  static Tensor uninitialized(Shape shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = shape_size(t.shape_);
    t.data_ = std::shared_ptr<T[]>(new T[t.size_]);
    return t;
  }

  static Tensor full(Shape shape, T v) {
    Tensor t = uninitialized(std::move(shape));
    std::fill_n(t.data(), t.size(), v);
    return t;
  }

  static Tensor values(Shape shape, std::vector<T> v) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = shape_size(t.shape_);
    if (static_cast<int64_t>(v.size()) != t.size_)
      throw ShapeError("value count " + std::to_string(v.size()) + " does not fill shape " + shape_str(t.shape_));
    t.data_ = std::shared_ptr<T[]>(new T[t.size_]);
    std::copy(v.begin(), v.end(), t.data());
    return t;
  }

  // Wraps existing storage without copying.
  static Tensor adopt(Shape shape, std::shared_ptr<T[]> storage) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = shape_size(t.shape_);
    t.data_ = std::move(storage);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return size_; }
  bool defined() const { return data_ != nullptr; }

  int64_t extent(int64_t i) const {
    const int64_t r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("extent index out of range for shape " + shape_str(shape_));
    return shape_[static_cast<size_t>(i)];
  }

  T* data() { return data_.get(); }
  const T* data() const { return data_.get(); }
  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }
  T* begin() { return data_.get(); }
  T* end() { return data_.get() + size_; }
  const T* begin() const { return data_.get(); }
  const T* end() const { return data_.get() + size_; }

  std::shared_ptr<T[]> storage() const { return data_; }

  // Same storage, new shape. Sizes must agree.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size_)
      throw ShapeError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = size_;
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t = uninitialized(shape_);
    std::copy(begin(), end(), t.data());
    return t;
  }

  void fill(T v) { std::fill_n(data(), size_, v); }

 private:
  Shape shape_;
  std::shared_ptr<T[]> data_;
  int64_t size_ = 0;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace uat
