#pragma once

// Dominant Component Analysis: filter the analytic image with every channel
// and keep, per pixel, the response with the largest magnitude.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <utility>
#include <vector>

#include "amfm/analytic.hpp"
#include "amfm/error.hpp"
#include "amfm/fft.hpp"
#include "amfm/filterbank.hpp"
#include "amfm/image.hpp"

namespace amfm {

enum class Boundary { zero, reflect };

struct DcaOptions {
  Boundary boundary = Boundary::reflect;
  AnalyticAxis axis = AnalyticAxis::rows;
  bool include_baseband = true;  // let scale-0 channels compete in the argmax
  bool include_bandpass = true;
};

struct AmFmDecomposition {
  RealImage ia;            // >= 0
  RealImage phase;         // (-pi, pi]
  IndexImage channel_index;
  RealImage fm;            // cos(phase)

  std::size_t rows() const noexcept { return ia.rows(); }
  std::size_t cols() const noexcept { return ia.cols(); }
};

inline std::vector<bool> channel_mask(const GaborFilterbank& fb, const DcaOptions& opt) {
  std::vector<bool> mask(fb.size());
  for (std::size_t i = 0; i < fb.size(); ++i)
    mask[i] = fb[i].scale == 0 ? opt.include_baseband : opt.include_bandpass;
  return mask;
}

/// FFT convolution engine for one image geometry; caches kernel spectra.
class ConvolutionEngine {
 public:
  ConvolutionEngine(const GaborFilterbank& fb, std::size_t rows, std::size_t cols, Boundary boundary)
      : rows_(rows), cols_(cols), half_(static_cast<std::size_t>(fb.kernel_size() / 2)), boundary_(boundary) {
    const std::size_t k = static_cast<std::size_t>(fb.kernel_size());
    require(rows >= k && cols >= k, "image smaller than filter kernel");
    prows_ = fft::good_size(rows + 2 * half_);
    pcols_ = fft::good_size(cols + 2 * half_);
    forward_ = std::make_unique<fft::Plan2d>(prows_, pcols_, fft::Direction::forward);
    inverse_ = std::make_unique<fft::Plan2d>(prows_, pcols_, fft::Direction::inverse);
    spectra_.reserve(fb.size());
    for (const auto& ch : fb.channels()) {
      fft::Buffer buf(prows_ * pcols_);
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = 0.0;
      // Kernel centre goes to (0,0); taps wrap around.
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c)
          buf[((r + prows_ - half_) % prows_) * pcols_ + (c + pcols_ - half_) % pcols_] = ch.kernel(r, c);
      forward_->execute(buf);
      spectra_.push_back(std::move(buf));
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t channels() const noexcept { return spectra_.size(); }

  /// Spectrum of the boundary-extended image.
  fft::Buffer transform(const ComplexImage& z) const {
    require(z.rows() == rows_ && z.cols() == cols_, "image geometry does not match engine");
    fft::Buffer buf(prows_ * pcols_);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = 0.0;
    const auto ext_r = rows_ + 2 * half_, ext_c = cols_ + 2 * half_;
    for (std::size_t r = 0; r < ext_r; ++r) {
      for (std::size_t c = 0; c < ext_c; ++c) {
        const long sr = static_cast<long>(r) - static_cast<long>(half_);
        const long sc = static_cast<long>(c) - static_cast<long>(half_);
        cfloat v;
        if (boundary_ == Boundary::reflect) {
          v = z(reflect(sr, rows_), reflect(sc, cols_));
        } else if (sr < 0 || sc < 0 || sr >= static_cast<long>(rows_) || sc >= static_cast<long>(cols_)) {
          v = 0.0f;
        } else {
          v = z(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc));
        }
        buf[r * pcols_ + c] = cdouble(v.real(), v.imag());
      }
    }
    forward_->execute(buf);
    return buf;
  }

  /// Same-size response of channel `ch` given the image spectrum.
  ComplexImage response(const fft::Buffer& spectrum, std::size_t ch) const {
    fft::Buffer buf(prows_ * pcols_);
    const auto& k = spectra_.at(ch);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = spectrum[i] * k[i];
    inverse_->execute(buf);
    const double scale = 1.0 / static_cast<double>(prows_ * pcols_);
    ComplexImage out(rows_, cols_);
    for (std::size_t r = 0; r < rows_; ++r) {
      for (std::size_t c = 0; c < cols_; ++c) {
        const cdouble v = buf[(r + half_) * pcols_ + c + half_] * scale;
        out(r, c) = cfloat(static_cast<float>(v.real()), static_cast<float>(v.imag()));
      }
    }
    return out;
  }

 private:
  static std::size_t reflect(long i, std::size_t n) {
    const long m = static_cast<long>(n);
    while (i < 0 || i >= m) i = i < 0 ? -i : 2 * (m - 1) - i;
    return static_cast<std::size_t>(i);
  }

  std::size_t rows_, cols_, half_;
  Boundary boundary_;
  std::size_t prows_ = 0, pcols_ = 0;
  std::unique_ptr<fft::Plan2d> forward_, inverse_;
  std::vector<fft::Buffer> spectra_;
};

/// Per-channel "same" complex convolution of z with each kernel.
inline std::vector<ComplexImage> channel_responses(const ComplexImage& z, const GaborFilterbank& fb,
                                                   Boundary boundary = Boundary::reflect) {
  ConvolutionEngine engine(fb, z.rows(), z.cols(), boundary);
  const auto spectrum = engine.transform(z);
  std::vector<ComplexImage> out;
  out.reserve(fb.size());
  for (std::size_t ch = 0; ch < fb.size(); ++ch) out.push_back(engine.response(spectrum, ch));
  return out;
}

namespace detail {

inline float wrap_phase(float p) { return p <= -std::numbers::pi_v<float> ? std::numbers::pi_v<float> : p; }

struct DominantAccumulator {
  AmFmDecomposition d;
  bool any = false;

  void init(std::size_t rows, std::size_t cols) {
    d.ia = RealImage(rows, cols, -1.0f);
    d.phase = RealImage(rows, cols, 0.0f);
    d.channel_index = IndexImage(rows, cols, -1);
    d.fm = RealImage(rows, cols, 1.0f);
  }

  // Strict '>' keeps the lowest channel index on ties.
  void update(const ComplexImage& r, int index) {
    any = true;
    auto& ia = d.ia.data();
    auto& ph = d.phase.data();
    auto& ci = d.channel_index.data();
    for (std::size_t i = 0; i < r.size(); ++i) {
      const float mag = std::abs(r.data()[i]);
      if (mag > ia[i]) {
        ia[i] = mag;
        ph[i] = wrap_phase(std::arg(r.data()[i]));
        ci[i] = index;
      }
    }
  }

  AmFmDecomposition finish() {
    for (std::size_t i = 0; i < d.fm.size(); ++i) d.fm.data()[i] = std::cos(d.phase.data()[i]);
    return std::move(d);
  }
};

}  // namespace detail

/// Argmax over channel magnitudes per pixel. `mask` (optional) removes channels
/// from the competition; channel_index always refers to the full list.
inline AmFmDecomposition dominant_component(const std::vector<ComplexImage>& responses,
                                            const std::vector<bool>& mask = {}) {
  if (responses.empty()) throw ParameterError("dominant_component: empty response list");
  require(mask.empty() || mask.size() == responses.size(), "channel mask length mismatch");
  const auto rows = responses.front().rows(), cols = responses.front().cols();
  detail::DominantAccumulator acc;
  acc.init(rows, cols);
  for (std::size_t ch = 0; ch < responses.size(); ++ch) {
    require(responses[ch].rows() == rows && responses[ch].cols() == cols, "response dims differ");
    if (mask.empty() || mask[ch]) acc.update(responses[ch], static_cast<int>(ch));
  }
  if (!acc.any) throw ParameterError("dominant_component: channel mask excludes every channel");
  return acc.finish();
}

/// Full front end on a real frame: analytic image, filtering and argmax,
/// streaming one channel at a time. Equivalent to
/// dominant_component(channel_responses(analytic_image(gray)), mask).
class DcaProcessor {
 public:
  DcaProcessor(const GaborFilterbank& fb, DcaOptions options = {})
      : fb_(fb), options_(options), mask_(channel_mask(fb, options)) {}

  const DcaOptions& options() const noexcept { return options_; }
  const GaborFilterbank& filterbank() const noexcept { return fb_; }

  AmFmDecomposition decompose(const RealImage& gray) const {
    return decompose_analytic(analytic_image(gray, options_.axis));
  }

  AmFmDecomposition decompose_analytic(const ComplexImage& z) const {
    const auto& engine = engine_for(z.rows(), z.cols());
    const auto spectrum = engine.transform(z);
    detail::DominantAccumulator acc;
    acc.init(z.rows(), z.cols());
    for (std::size_t ch = 0; ch < fb_.size(); ++ch)
      if (mask_[ch]) acc.update(engine.response(spectrum, ch), static_cast<int>(ch));
    if (!acc.any) throw ParameterError("DCA options exclude every channel");
    return acc.finish();
  }

 private:
  const ConvolutionEngine& engine_for(std::size_t rows, std::size_t cols) const {
    std::lock_guard lock(mutex_);
    auto key = std::make_pair(rows, cols);
    auto it = engines_.find(key);
    if (it == engines_.end())
      it = engines_.emplace(key, std::make_unique<ConvolutionEngine>(fb_, rows, cols, options_.boundary)).first;
    return *it->second;
  }

  GaborFilterbank fb_;
  DcaOptions options_;
  std::vector<bool> mask_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<std::size_t, std::size_t>, std::unique_ptr<ConvolutionEngine>> engines_;
};

/// IA scaled by its maximum; an all-zero IA stays zero.
inline RealImage ia_image_normalized(const AmFmDecomposition& d) {
  float peak = 0.0f;
  for (float v : d.ia.data()) peak = std::max(peak, v);
  if (peak <= 0.0f) return RealImage(d.ia.rows(), d.ia.cols(), 0.0f);
  return map_image(d.ia, [peak](float v) { return v / peak; });
}

/// cos(phase) remapped from [-1, 1] to [0, 1].
inline RealImage fm_image_unit(const AmFmDecomposition& d) {
  return map_image(d.fm, [](float v) { return std::clamp((v + 1.0f) * 0.5f, 0.0f, 1.0f); });
}

}  // namespace amfm
