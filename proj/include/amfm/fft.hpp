#pragma once

// Thin RAII layer over FFTW (double precision). Plans are created with
// FFTW_ESTIMATE so repeated runs pick the same algorithm; the planner is not
// thread-safe, so creation is serialized.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>

#include "amfm/error.hpp"

namespace amfm::fft {

inline std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

/// fftw_malloc-backed complex buffer (alignment is fixed, so codelet choice is too).
class Buffer {
 public:
  explicit Buffer(std::size_t n)
      : n_(n), ptr_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n ? n : 1)))) {
    if (!ptr_) throw std::bad_alloc();
  }
  Buffer(const Buffer&) = delete;
  Buffer& operator=(const Buffer&) = delete;
  Buffer(Buffer&& o) noexcept : n_(o.n_), ptr_(o.ptr_) { o.ptr_ = nullptr; o.n_ = 0; }
  ~Buffer() { if (ptr_) fftw_free(ptr_); }

  std::size_t size() const noexcept { return n_; }
  fftw_complex* raw() noexcept { return ptr_; }
  std::complex<double>* data() noexcept { return reinterpret_cast<std::complex<double>*>(ptr_); }
  const std::complex<double>* data() const noexcept {
    return reinterpret_cast<const std::complex<double>*>(ptr_);
  }
  std::complex<double>& operator[](std::size_t i) noexcept { return data()[i]; }
  const std::complex<double>& operator[](std::size_t i) const noexcept { return data()[i]; }
  std::span<std::complex<double>> span() noexcept { return {data(), n_}; }

 private:
  std::size_t n_;
  fftw_complex* ptr_;
};

enum class Direction { forward = FFTW_FORWARD, inverse = FFTW_BACKWARD };

/// In-place complex 2-D transform of a rows x cols buffer. Unnormalized.
class Plan2d {
 public:
  Plan2d(std::size_t rows, std::size_t cols, Direction dir) : rows_(rows), cols_(cols), scratch_(rows * cols) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_2d(static_cast<int>(rows), static_cast<int>(cols), scratch_.raw(), scratch_.raw(),
                             static_cast<int>(dir), FFTW_ESTIMATE);
    if (!plan_) throw ParameterError("fftw could not plan a 2-D transform");
  }
  Plan2d(const Plan2d&) = delete;
  Plan2d& operator=(const Plan2d&) = delete;
  ~Plan2d() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  /// Thread-safe: fftw_execute_dft on a distinct aligned buffer.
  void execute(Buffer& buf) const {
    require(buf.size() == rows_ * cols_, "fft buffer size mismatch");
    fftw_execute_dft(plan_, buf.raw(), buf.raw());
  }

 private:
  std::size_t rows_, cols_;
  Buffer scratch_;
  fftw_plan plan_;
};

/// Batched in-place 1-D transforms over `count` contiguous rows of length n.
class PlanRows {
 public:
  PlanRows(std::size_t n, std::size_t count, Direction dir) : n_(n), count_(count), scratch_(n * count) {
    std::lock_guard lock(planner_mutex());
    int len = static_cast<int>(n);
    plan_ = fftw_plan_many_dft(1, &len, static_cast<int>(count), scratch_.raw(), nullptr, 1, len,
                               scratch_.raw(), nullptr, 1, len, static_cast<int>(dir), FFTW_ESTIMATE);
    if (!plan_) throw ParameterError("fftw could not plan a batched 1-D transform");
  }
  PlanRows(const PlanRows&) = delete;
  PlanRows& operator=(const PlanRows&) = delete;
  ~PlanRows() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }

  void execute(Buffer& buf) const {
    require(buf.size() == n_ * count_, "fft buffer size mismatch");
    fftw_execute_dft(plan_, buf.raw(), buf.raw());
  }

 private:
  std::size_t n_, count_;
  Buffer scratch_;
  fftw_plan plan_;
};

/// Smallest n' >= n whose only prime factors are 2, 3, 5, 7.
inline std::size_t good_size(std::size_t n) {
  for (std::size_t m = n < 1 ? 1 : n;; ++m) {
    std::size_t r = m;
    for (std::size_t p : {2u, 3u, 5u, 7u})
      while (r % p == 0) r /= p;
    if (r == 1) return m;
  }
}

}  // namespace amfm::fft
