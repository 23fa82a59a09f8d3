#pragma once

#include <cstddef>

#include "amfm/error.hpp"
#include "amfm/fft.hpp"
#include "amfm/image.hpp"

namespace amfm {

enum class AnalyticAxis { rows, cols };

namespace detail {

/// One-sided spectral weight for bin k of an n-point DFT.
inline double analytic_weight(std::size_t k, std::size_t n) {
  if (k == 0) return 1.0;
  if (n % 2 == 0) {
    if (k < n / 2) return 2.0;
    return k == n / 2 ? 1.0 : 0.0;
  }
  return k <= (n - 1) / 2 ? 2.0 : 0.0;
}

/// Analytic signal of each of `count` contiguous lines of length n, in place.
inline void analytic_lines(fft::Buffer& buf, std::size_t n, std::size_t count) {
  fft::PlanRows fwd(n, count, fft::Direction::forward);
  fft::PlanRows inv(n, count, fft::Direction::inverse);
  fwd.execute(buf);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t line = 0; line < count; ++line)
    for (std::size_t k = 0; k < n; ++k) buf[line * n + k] *= analytic_weight(k, n) * scale;
  inv.execute(buf);
}

}  // namespace detail

/// 1-D Hilbert extension of every row (default) or column of a real image.
/// The real part of the result reproduces the input.
template <typename T>
Image<cdouble> analytic_image_f64(const Image<T>& gray, AnalyticAxis axis = AnalyticAxis::rows) {
  require(!gray.empty(), "analytic_image: empty image");
  const std::size_t rows = gray.rows(), cols = gray.cols();
  const bool by_rows = axis == AnalyticAxis::rows;
  const std::size_t n = by_rows ? cols : rows;
  const std::size_t count = by_rows ? rows : cols;
  fft::Buffer buf(n * count);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      buf[by_rows ? r * cols + c : c * rows + r] = static_cast<double>(gray(r, c));
  detail::analytic_lines(buf, n, count);
  Image<cdouble> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = buf[by_rows ? r * cols + c : c * rows + r];
  return out;
}

template <typename T>
ComplexImage analytic_image(const Image<T>& gray, AnalyticAxis axis = AnalyticAxis::rows) {
  const auto z = analytic_image_f64(gray, axis);
  return map_image(z, [](const cdouble& v) { return cfloat(static_cast<float>(v.real()), static_cast<float>(v.imag())); });
}

}  // namespace amfm
