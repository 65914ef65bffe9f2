#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "caspgrid/errors.hpp"

namespace caspgrid {

/// Dense row-major n-d array. Axis names are optional metadata carried for
/// debugging and dump headers; arithmetic never depends on them.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> dims) : dims_(std::move(dims)) {
    data_.assign(numel_of(dims_), T(0));
  }

  Tensor(std::vector<int64_t> dims, std::vector<std::string> axes)
      : dims_(std::move(dims)), axes_(std::move(axes)) {
    data_.assign(numel_of(dims_), T(0));
    if (!axes_.empty() && axes_.size() != dims_.size())
      throw_error(ErrorKind::Shape, "axis name count does not match rank");
  }

  Tensor(std::initializer_list<int64_t> dims)
      : Tensor(std::vector<int64_t>(dims)) {}

  static Tensor zeros(std::vector<int64_t> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<int64_t> dims, T value) {
    Tensor t(std::move(dims));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  static Tensor from_data(std::vector<int64_t> dims, std::vector<T> data) {
    Tensor t;
    t.dims_ = std::move(dims);
    t.data_ = std::move(data);
    if (static_cast<int64_t>(t.data_.size()) != numel_of(t.dims_))
      throw_error(ErrorKind::Shape, "data size does not match extents");
    return t;
  }

  static Tensor uniform(std::vector<int64_t> dims, T lo, T hi, std::mt19937& rng) {
    Tensor t(std::move(dims));
    std::uniform_real_distribution<double> d(static_cast<double>(lo),
                                             static_cast<double>(hi));
    for (auto& v : t.data_) v = static_cast<T>(d(rng));
    return t;
  }

  const std::vector<int64_t>& dims() const { return dims_; }
  int64_t dim(size_t i) const { return dims_.at(i); }
  size_t rank() const { return dims_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  const std::vector<std::string>& axes() const { return axes_; }
  Tensor& set_axes(std::vector<std::string> axes) {
    if (!axes.empty() && axes.size() != dims_.size())
      throw_error(ErrorKind::Shape, "axis name count does not match rank");
    axes_ = std::move(axes);
    return *this;
  }

  /// Reinterpret extents without touching data. Element count must match.
  Tensor reshaped(std::vector<int64_t> dims) const {
    if (numel_of(dims) != numel())
      throw_error(ErrorKind::Shape, "reshape changes element count");
    Tensor t = *this;
    t.dims_ = std::move(dims);
    t.axes_.clear();
    return t;
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t;
    t = Tensor<U>::from_data(dims_, std::vector<U>(data_.begin(), data_.end()));
    t.set_axes(axes_);
    return t;
  }

  std::string shape_string() const {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) os << "x";
      if (i < axes_.size() && !axes_[i].empty()) os << axes_[i] << ":";
      os << dims_[i];
    }
    os << "]";
    return os.str();
  }

  static int64_t numel_of(const std::vector<int64_t>& dims) {
    int64_t n = 1;
    for (int64_t d : dims) {
      if (d < 0) throw_error(ErrorKind::Shape, "negative extent");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int64_t> dims_;
  std::vector<T> data_;
  std::vector<std::string> axes_;
};

using GridTensor = Tensor<float>;

template <typename T>
void check_same_dims(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_dims(b))
    throw_error(ErrorKind::Shape, std::string(where) + ": shape mismatch " +
                                      a.shape_string() + " vs " + b.shape_string());
}

}  // namespace caspgrid
