#pragma once

#include <complex>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "amfm/error.hpp"

namespace amfm {

using cfloat = std::complex<float>;
using cdouble = std::complex<double>;

/// Dense row-major 2-D image.
template <typename T>
class Image {
 public:
  using value_type = T;

  Image() = default;
  Image(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Image(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, "image data length does not match rows*cols");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using RealImage = Image<float>;
using ComplexImage = Image<cfloat>;
using IndexImage = Image<int>;

template <typename T, typename F>
auto map_image(const Image<T>& in, F&& f) {
  using R = std::invoke_result_t<F, const T&>;
  Image<R> out(in.rows(), in.cols());
  for (std::size_t i = 0; i < in.size(); ++i) out.data()[i] = f(in.data()[i]);
  return out;
}

/// N-dimensional row-major tensor.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, T fill = T{}) : dims_(std::move(dims)) {
    for (auto d : dims_) require(d >= 1, "tensor extents must be >= 1");
    data_.assign(count(dims_), fill);
  }
  Tensor(std::vector<std::size_t> dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    for (auto d : dims_) require(d >= 1, "tensor extents must be >= 1");
    require(count(dims_) == data_.size(), "tensor data length does not match dims");
  }

  static std::size_t count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
  }

  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

}  // namespace amfm
