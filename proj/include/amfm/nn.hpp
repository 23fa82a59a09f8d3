#pragma once

// Reduced LeNet block regressor written out by hand:
//   in 50x50xC -> conv 6@5x5 (valid, stride 1) + selu -> 46x46x6
//   -> maxpool 5x5 stride 2 -> 23x23x6 -> dense 40 + selu -> dense 24 + selu
//   -> dense 1 + sigmoid
// Parameters live in one flat vector so optimizers, gradient reduction and
// finite-difference checks can treat them uniformly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "amfm/error.hpp"
#include "amfm/image.hpp"
#include "amfm/rng.hpp"
#include "amfm/tensor_io.hpp"
#include "json.hpp"

namespace amfm::nn {

inline constexpr double kSeluLambda = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

template <typename T>
T selu(T x) {
  return x > T(0) ? T(kSeluLambda) * x : T(kSeluLambda * kSeluAlpha) * std::expm1(x);
}

/// Derivative in terms of the pre-activation.
template <typename T>
T selu_grad(T x) {
  return x > T(0) ? T(kSeluLambda) : T(kSeluLambda * kSeluAlpha) * std::exp(x);
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// ---------------------------------------------------------------------------
// Layers. Feature maps are channel-major (C, H, W). Backward passes accumulate
// (+=) into parameter gradients and overwrite input gradients.

struct ConvShape {
  std::size_t in_ch = 1, in_h = 50, in_w = 50, filters = 6, k = 5;
  std::size_t out_h() const { return in_h - k + 1; }
  std::size_t out_w() const { return in_w - k + 1; }
  std::size_t weight_count() const { return filters * in_ch * k * k; }
  std::size_t in_size() const { return in_ch * in_h * in_w; }
  std::size_t out_size() const { return filters * out_h() * out_w(); }
};

/// pre[f] = bias[f] + cross-correlation(x, w[f]); valid, stride 1.
template <typename T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> pre) {
  require(x.size() == s.in_size() && w.size() == s.weight_count() && b.size() == s.filters &&
              pre.size() == s.out_size(),
          "conv2d_forward: shape mismatch");
  const std::size_t oh = s.out_h(), ow = s.out_w();
  for (std::size_t f = 0; f < s.filters; ++f) {
    T* out = pre.data() + f * oh * ow;
    std::fill(out, out + oh * ow, b[f]);
    for (std::size_t c = 0; c < s.in_ch; ++c) {
      const T* in = x.data() + c * s.in_h * s.in_w;
      for (std::size_t ki = 0; ki < s.k; ++ki) {
        for (std::size_t kj = 0; kj < s.k; ++kj) {
          const T wv = w[((f * s.in_ch + c) * s.k + ki) * s.k + kj];
          for (std::size_t i = 0; i < oh; ++i) {
            T* orow = out + i * ow;
            const T* irow = in + (i + ki) * s.in_w + kj;
            for (std::size_t j = 0; j < ow; ++j) orow[j] += wv * irow[j];
          }
        }
      }
    }
  }
}

/// grad_x may be empty (skipped). Zero entries of grad_pre are skipped.
template <typename T>
void conv2d_backward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> grad_pre,
                     std::span<T> grad_x, std::span<T> grad_w, std::span<T> grad_b) {
  require(x.size() == s.in_size() && w.size() == s.weight_count() && grad_pre.size() == s.out_size() &&
              grad_w.size() == s.weight_count() && grad_b.size() == s.filters &&
              (grad_x.empty() || grad_x.size() == s.in_size()),
          "conv2d_backward: shape mismatch");
  const std::size_t oh = s.out_h(), ow = s.out_w(), kk = s.k * s.k;
  if (!grad_x.empty()) std::fill(grad_x.begin(), grad_x.end(), T(0));
  for (std::size_t f = 0; f < s.filters; ++f) {
    const T* g = grad_pre.data() + f * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const T gv = g[i * ow + j];
        if (gv == T(0)) continue;
        grad_b[f] += gv;
        for (std::size_t c = 0; c < s.in_ch; ++c) {
          const T* in = x.data() + c * s.in_h * s.in_w + i * s.in_w + j;
          T* gw = grad_w.data() + (f * s.in_ch + c) * kk;
          for (std::size_t ki = 0; ki < s.k; ++ki)
            for (std::size_t kj = 0; kj < s.k; ++kj) gw[ki * s.k + kj] += gv * in[ki * s.in_w + kj];
          if (!grad_x.empty()) {
            const T* wf = w.data() + (f * s.in_ch + c) * kk;
            T* gx = grad_x.data() + c * s.in_h * s.in_w + i * s.in_w + j;
            for (std::size_t ki = 0; ki < s.k; ++ki)
              for (std::size_t kj = 0; kj < s.k; ++kj) gx[ki * s.in_w + kj] += gv * wf[ki * s.k + kj];
          }
        }
      }
    }
  }
}

/// Max pooling with -inf padding of `pad` rows/cols at top/left; the output
/// extent fixes the bottom/right padding.
struct PoolShape {
  std::size_t ch = 6, in_h = 46, in_w = 46, window = 5, stride = 2, pad = 1, out_h = 23, out_w = 23;
  std::size_t in_size() const { return ch * in_h * in_w; }
  std::size_t out_size() const { return ch * out_h * out_w; }
};

/// argmax receives the flat input index of each output's maximum (lowest index on ties).
template <typename T>
void maxpool_forward(const PoolShape& s, std::span<const T> x, std::span<T> out, std::span<std::size_t> argmax) {
  require(x.size() == s.in_size() && out.size() == s.out_size() && argmax.size() == s.out_size(),
          "maxpool_forward: shape mismatch");
  struct Range { std::size_t lo, hi; };
  auto span_of = [&](std::size_t o, std::size_t n) {
    const long a = static_cast<long>(o * s.stride) - static_cast<long>(s.pad);
    const Range r{static_cast<std::size_t>(std::max(a, 0L)),
                  static_cast<std::size_t>(std::min(a + static_cast<long>(s.window), static_cast<long>(n)))};
    require(r.lo < r.hi, "maxpool_forward: window lies entirely in padding");
    return r;
  };
  std::vector<Range> rows(s.out_h), cols(s.out_w);
  for (std::size_t p = 0; p < s.out_h; ++p) rows[p] = span_of(p, s.in_h);
  for (std::size_t q = 0; q < s.out_w; ++q) cols[q] = span_of(q, s.in_w);
  // Separable: row-wise maxima first, then over rows. Strict '>' in both
  // passes selects the lowest row, then the lowest column: the lowest linear
  // index among tied maxima.
  std::vector<T> hmax(s.in_h * s.out_w);
  std::vector<std::size_t> harg(hmax.size());
  for (std::size_t c = 0; c < s.ch; ++c) {
    const std::size_t base = c * s.in_h * s.in_w;
    for (std::size_t r = 0; r < s.in_h; ++r) {
      const T* xr = x.data() + base + r * s.in_w;
      for (std::size_t q = 0; q < s.out_w; ++q) {
        std::size_t arg = cols[q].lo;
        T best = xr[arg];
        for (std::size_t cc = arg + 1; cc < cols[q].hi; ++cc) {
          const bool gt = xr[cc] > best;
          best = gt ? xr[cc] : best;
          arg = gt ? cc : arg;
        }
        hmax[r * s.out_w + q] = best;
        harg[r * s.out_w + q] = base + r * s.in_w + arg;
      }
    }
    for (std::size_t p = 0; p < s.out_h; ++p) {
      for (std::size_t q = 0; q < s.out_w; ++q) {
        std::size_t at = rows[p].lo * s.out_w + q;
        T best = hmax[at];
        for (std::size_t r = rows[p].lo + 1; r < rows[p].hi; ++r) {
          const std::size_t k = r * s.out_w + q;
          const bool gt = hmax[k] > best;
          best = gt ? hmax[k] : best;
          at = gt ? k : at;
        }
        const std::size_t o = (c * s.out_h + p) * s.out_w + q;
        out[o] = best;
        argmax[o] = harg[at];
      }
    }
  }
}

template <typename T>
void maxpool_backward(const PoolShape& s, std::span<const T> grad_out, std::span<const std::size_t> argmax,
                      std::span<T> grad_x) {
  require(grad_out.size() == s.out_size() && argmax.size() == s.out_size() && grad_x.size() == s.in_size(),
          "maxpool_backward: shape mismatch");
  std::fill(grad_x.begin(), grad_x.end(), T(0));
  for (std::size_t o = 0; o < grad_out.size(); ++o) grad_x[argmax[o]] += grad_out[o];
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  // Fixed 8-way split: vectorizable, and the summation order never changes.
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  T tail = T(0);
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

/// out = W x + b with W row-major (out_n x in_n).
template <typename T>
void dense_forward(std::size_t in_n, std::size_t out_n, std::span<const T> x, std::span<const T> w,
                   std::span<const T> b, std::span<T> out) {
  require(x.size() == in_n && w.size() == in_n * out_n && b.size() == out_n && out.size() == out_n,
          "dense_forward: shape mismatch");
  for (std::size_t o = 0; o < out_n; ++o) out[o] = b[o] + dot(w.data() + o * in_n, x.data(), in_n);
}

/// grad_x may be empty (skipped).
template <typename T>
void dense_backward(std::size_t in_n, std::size_t out_n, std::span<const T> x, std::span<const T> w,
                    std::span<const T> grad_out, std::span<T> grad_x, std::span<T> grad_w, std::span<T> grad_b) {
  require(x.size() == in_n && w.size() == in_n * out_n && grad_out.size() == out_n && grad_w.size() == in_n * out_n &&
              grad_b.size() == out_n && (grad_x.empty() || grad_x.size() == in_n),
          "dense_backward: shape mismatch");
  if (!grad_x.empty()) std::fill(grad_x.begin(), grad_x.end(), T(0));
  for (std::size_t o = 0; o < out_n; ++o) {
    const T g = grad_out[o];
    grad_b[o] += g;
    T* gw = grad_w.data() + o * in_n;
    for (std::size_t i = 0; i < in_n; ++i) gw[i] += g * x[i];
    if (!grad_x.empty()) {
      const T* wr = w.data() + o * in_n;
      for (std::size_t i = 0; i < in_n; ++i) grad_x[i] += g * wr[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Network.

/// padded: 5x5/2 pooling with 1 px top/left padding -> 23x23 (table geometry).
/// valid: unpadded 5x5/2 pooling -> 21x21.
enum class PoolGeometry { padded, valid };

inline std::string to_string(PoolGeometry g) { return g == PoolGeometry::padded ? "padded" : "valid"; }

inline PoolGeometry parse_pool_geometry(const std::string& s) {
  if (s == "padded") return PoolGeometry::padded;
  if (s == "valid") return PoolGeometry::valid;
  throw ParameterError("unknown pooling geometry '" + s + "'");
}

struct LeNetConfig {
  std::size_t in_channels = 1;
  PoolGeometry pool = PoolGeometry::padded;

  static constexpr std::size_t input = 50, kernel = 5, filters = 6, conv_out = 46;
  static constexpr std::size_t pool_window = 5, pool_stride = 2;
  static constexpr std::size_t fc1 = 40, fc2 = 24;

  std::size_t pool_out() const { return pool == PoolGeometry::padded ? 23 : 21; }
  std::size_t flat() const { return filters * pool_out() * pool_out(); }

  ConvShape conv_shape() const { return {in_channels, input, input, filters, kernel}; }
  PoolShape pool_shape() const {
    return {filters, conv_out, conv_out, pool_window, pool_stride,
            pool == PoolGeometry::padded ? std::size_t{1} : std::size_t{0}, pool_out(), pool_out()};
  }

  friend bool operator==(const LeNetConfig&, const LeNetConfig&) = default;
};

/// Offsets of each parameter group inside the flat parameter vector.
struct ParamLayout {
  std::size_t conv_w, conv_b, fc1_w, fc1_b, fc2_w, fc2_b, out_w, out_b, total;

  explicit ParamLayout(const LeNetConfig& c) {
    std::size_t o = 0;
    conv_w = o; o += c.filters * c.in_channels * c.kernel * c.kernel;
    conv_b = o; o += c.filters;
    fc1_w = o;  o += c.flat() * c.fc1;
    fc1_b = o;  o += c.fc1;
    fc2_w = o;  o += c.fc1 * c.fc2;
    fc2_b = o;  o += c.fc2;
    out_w = o;  o += c.fc2;
    out_b = o;  o += 1;
    total = o;
  }
};

struct ParamGroup {
  const char* name;
  std::size_t offset;
  std::vector<std::size_t> dims;
};

inline std::vector<ParamGroup> param_groups(const LeNetConfig& c) {
  const ParamLayout l(c);
  return {{"conv1.weight", l.conv_w, {c.filters, c.in_channels, c.kernel, c.kernel}},
          {"conv1.bias", l.conv_b, {c.filters}},
          {"fc1.weight", l.fc1_w, {c.fc1, c.flat()}},
          {"fc1.bias", l.fc1_b, {c.fc1}},
          {"fc2.weight", l.fc2_w, {c.fc2, c.fc1}},
          {"fc2.bias", l.fc2_b, {c.fc2}},
          {"out.weight", l.out_w, {1, c.fc2}},
          {"out.bias", l.out_b, {1}}};
}

/// Exact count of trainable scalars.
inline std::size_t count_params(const LeNetConfig& c) { return ParamLayout(c).total; }

/// Per-thread forward state kept for the backward pass.
template <typename T>
struct Workspace {
  std::vector<T> x, conv_pre, conv_act, pool, fc1_pre, fc1_act, fc2_pre, fc2_act;
  std::vector<std::size_t> pool_arg;
  std::vector<T> g_pool, g_conv;  // backward scratch
  T out_pre = T(0);
  T prediction = T(0);

  explicit Workspace(const LeNetConfig& c)
      : x(c.in_channels * c.input * c.input),
        conv_pre(c.filters * c.conv_out * c.conv_out),
        conv_act(conv_pre.size()),
        pool(c.flat()),
        fc1_pre(c.fc1),
        fc1_act(c.fc1),
        fc2_pre(c.fc2),
        fc2_act(c.fc2),
        pool_arg(c.flat()),
        g_pool(c.flat()),
        g_conv(conv_pre.size()) {}
};

template <typename T>
class ReducedLeNet {
 public:
  using scalar = T;

  explicit ReducedLeNet(LeNetConfig config = {}) : config_(config), layout_(config), params_(layout_.total, T(0)) {
    require(config.in_channels >= 1, "in_channels must be >= 1");
  }

  /// Normal(0, 1/sqrt(fan_in)) weights, zero biases.
  static ReducedLeNet initialized(LeNetConfig config, std::uint64_t seed) {
    ReducedLeNet net(config);
    net.seed_ = seed;
    auto rng = make_rng(seed, "nn.init");
    const auto& l = net.layout_;
    auto fill = [&](std::size_t off, std::size_t n, std::size_t fan_in) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < n; ++i) net.params_[off + i] = static_cast<T>(normal(rng, 0.0, sd));
    };
    fill(l.conv_w, l.conv_b - l.conv_w, config.in_channels * config.kernel * config.kernel);
    fill(l.fc1_w, l.fc1_b - l.fc1_w, config.flat());
    fill(l.fc2_w, l.fc2_b - l.fc2_w, config.fc1);
    fill(l.out_w, l.out_b - l.out_w, config.fc2);
    return net;
  }

  template <typename U>
  ReducedLeNet<U> cast() const {
    ReducedLeNet<U> out(config_);
    out.set_seed(seed_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    return out;
  }

  const LeNetConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::vector<T>& params() noexcept { return params_; }
  const std::vector<T>& params() const noexcept { return params_; }
  std::size_t param_count() const noexcept { return params_.size(); }
  std::uint64_t seed() const noexcept { return seed_; }
  void set_seed(std::uint64_t s) noexcept { seed_ = s; }

  bool all_finite() const {
    return std::all_of(params_.begin(), params_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Input is a 50x50xC block in HWC order. Returns the prediction in (0,1).
  template <typename U>
  T forward(std::span<const U> block, Workspace<T>& ws) const {
    const auto& c = config_;
    const std::size_t nc = c.in_channels, hw = c.input * c.input;
    if (block.size() != hw * nc) throw ParameterError("forward: block shape does not match model input");
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t ch = 0; ch < nc; ++ch) ws.x[ch * hw + p] = static_cast<T>(block[p * nc + ch]);

    const auto cs = c.conv_shape();
    conv2d_forward<T>(cs, ws.x, group(layout_.conv_w, layout_.conv_b), group(layout_.conv_b, layout_.fc1_w), ws.conv_pre);
    for (std::size_t i = 0; i < ws.conv_pre.size(); ++i) ws.conv_act[i] = selu(ws.conv_pre[i]);
    maxpool_forward<T>(c.pool_shape(), ws.conv_act, ws.pool, ws.pool_arg);

    dense_forward<T>(c.flat(), c.fc1, ws.pool, group(layout_.fc1_w, layout_.fc1_b), group(layout_.fc1_b, layout_.fc2_w),
                     ws.fc1_pre);
    for (std::size_t i = 0; i < c.fc1; ++i) ws.fc1_act[i] = selu(ws.fc1_pre[i]);
    dense_forward<T>(c.fc1, c.fc2, ws.fc1_act, group(layout_.fc2_w, layout_.fc2_b), group(layout_.fc2_b, layout_.out_w),
                     ws.fc2_pre);
    for (std::size_t i = 0; i < c.fc2; ++i) ws.fc2_act[i] = selu(ws.fc2_pre[i]);
    std::span<T> out_pre(&ws.out_pre, 1);
    dense_forward<T>(c.fc2, 1, ws.fc2_act, group(layout_.out_w, layout_.out_b), group(layout_.out_b, layout_.total),
                     out_pre);
    ws.prediction = sigmoid(ws.out_pre);
    return ws.prediction;
  }

  template <typename U>
  T predict(std::span<const U> block) const {
    Workspace<T> ws(config_);
    return forward(block, ws);
  }

  /// Accumulates dLoss/dparams into `grad` given dLoss/dlogit for the most
  /// recent forward() on `ws`.
  void backward_from_logit(Workspace<T>& ws, T grad_logit, std::span<T> grad) const {
    require(grad.size() == params_.size(), "backward: gradient buffer size mismatch");
    const auto& c = config_;
    const auto& l = layout_;
    auto g = [&](std::size_t a, std::size_t b) { return grad.subspan(a, b - a); };

    std::vector<T> g_fc2(c.fc2), g_fc1(c.fc1);
    std::span<const T> g_out(&grad_logit, 1);
    dense_backward<T>(c.fc2, 1, ws.fc2_act, group(l.out_w, l.out_b), g_out, g_fc2, g(l.out_w, l.out_b),
                      g(l.out_b, l.total));
    for (std::size_t i = 0; i < c.fc2; ++i) g_fc2[i] *= selu_grad(ws.fc2_pre[i]);
    dense_backward<T>(c.fc1, c.fc2, ws.fc1_act, group(l.fc2_w, l.fc2_b), g_fc2, g_fc1, g(l.fc2_w, l.fc2_b),
                      g(l.fc2_b, l.out_w));
    for (std::size_t i = 0; i < c.fc1; ++i) g_fc1[i] *= selu_grad(ws.fc1_pre[i]);
    dense_backward<T>(c.flat(), c.fc1, ws.pool, group(l.fc1_w, l.fc1_b), g_fc1, ws.g_pool, g(l.fc1_w, l.fc1_b),
                      g(l.fc1_b, l.fc2_w));
    maxpool_backward<T>(c.pool_shape(), ws.g_pool, ws.pool_arg, ws.g_conv);
    for (std::size_t i = 0; i < ws.g_conv.size(); ++i)
      if (ws.g_conv[i] != T(0)) ws.g_conv[i] *= selu_grad(ws.conv_pre[i]);
    conv2d_backward<T>(c.conv_shape(), ws.x, group(l.conv_w, l.conv_b), ws.g_conv, {}, g(l.conv_w, l.conv_b),
                       g(l.conv_b, l.fc1_w));
  }

  /// dLoss/dprediction variant; chains through the sigmoid.
  void backward(Workspace<T>& ws, T grad_prediction, std::span<T> grad) const {
    backward_from_logit(ws, grad_prediction * ws.prediction * (T(1) - ws.prediction), grad);
  }

 private:
  std::span<const T> group(std::size_t a, std::size_t b) const { return {params_.data() + a, b - a}; }

  LeNetConfig config_;
  ParamLayout layout_;
  std::vector<T> params_;
  std::uint64_t seed_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: model.json plus one AFT1 tensor per parameter group.

template <typename T>
void save_model(const ReducedLeNet<T>& net, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["architecture"] = "reduced-lenet";
  j["in_channels"] = net.config().in_channels;
  j["pool"] = to_string(net.config().pool);
  j["seed"] = net.seed();
  j["selu_lambda"] = kSeluLambda;
  j["selu_alpha"] = kSeluAlpha;
  j["param_count"] = net.param_count();
  j["params"] = nlohmann::json::array();
  for (const auto& g : param_groups(net.config())) {
    const std::size_t n = Tensor<float>::count(g.dims);
    std::vector<float> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<float>(net.params()[g.offset + i]);
    const std::string file = std::string(g.name) + ".aft";
    write_tensor(dir / file, Tensor<float>(g.dims, std::move(v)));
    j["params"].push_back({{"name", g.name}, {"file", file}, {"dims", g.dims}});
  }
  std::ofstream(dir / "model.json") << j.dump(2) << '\n';
}

template <typename T = float>
ReducedLeNet<T> load_model(const std::filesystem::path& dir) {
  std::ifstream is(dir / "model.json");
  if (!is) throw ValidationError("missing model.json in " + dir.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model.json: ") + e.what());
  }
  if (j.value("architecture", "") != "reduced-lenet") throw ValidationError("unsupported model architecture");
  LeNetConfig cfg;
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.pool = parse_pool_geometry(j.at("pool").get<std::string>());
  ReducedLeNet<T> net(cfg);
  net.set_seed(j.value("seed", std::uint64_t{0}));
  for (const auto& g : param_groups(cfg)) {
    const auto t = read_tensor(dir / (std::string(g.name) + ".aft"));
    if (t.dims() != g.dims) throw ValidationError(std::string("parameter shape mismatch for ") + g.name);
    for (std::size_t i = 0; i < t.size(); ++i) net.params()[g.offset + i] = static_cast<T>(t[i]);
  }
  if (!net.all_finite()) throw NumericError("checkpoint contains non-finite parameters");
  return net;
}

}  // namespace amfm::nn
