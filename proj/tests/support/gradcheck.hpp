#pragma once

// Central finite-difference gradient checks in f64.
//
// Max pooling and SELU are piecewise smooth. When a perturbation moves an
// argmax or flips a pre-activation sign, the difference quotient straddles a
// kink and says nothing about the analytic gradient. Each probe therefore
// compares an activation-pattern signature at x, x+eps and x-eps; on change
// the step shrinks tenfold (up to three times) and the coordinate is counted
// as skipped if the kink persists. Callers bound the skipped share.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "amfm/nn.hpp"
#include "amfm/rng.hpp"
#include "amfm/train.hpp"

namespace amfm::testing {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t skipped = 0;
  double max_rel = 0.0;
  std::size_t worst = 0;

  double skipped_share() const {
    const auto n = checked + skipped;
    return n ? static_cast<double>(skipped) / static_cast<double>(n) : 0.0;
  }
  void merge(const GradCheckResult& o) {
    if (o.max_rel > max_rel) {
      max_rel = o.max_rel;
      worst = o.worst;
    }
    checked += o.checked;
    skipped += o.skipped;
  }
};

inline double rel_error(double a, double n, double floor = 1e-8) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

using Signature = std::vector<std::uint64_t>;

/// `loss(x)` evaluates the scalar objective at the current x; `signature(x)`
/// (may be empty) describes the active piece of a piecewise function.
inline GradCheckResult check_gradient(std::vector<double>& x, const std::vector<double>& analytic,
                                      const std::vector<std::size_t>& coords,
                                      const std::function<double(const std::vector<double>&)>& loss,
                                      const std::function<Signature(const std::vector<double>&)>& signature = {},
                                      double eps = 1e-3) {
  GradCheckResult res;
  const Signature s0 = signature ? signature(x) : Signature{};
  for (std::size_t i : coords) {
    const double saved = x[i];
    bool done = false;
    double e = eps;
    for (int attempt = 0; attempt < 4 && !done; ++attempt, e *= 0.1) {
      x[i] = saved + e;
      const double fp = loss(x);
      const bool kp = signature && signature(x) != s0;
      x[i] = saved - e;
      const double fm = loss(x);
      const bool km = signature && signature(x) != s0;
      x[i] = saved;
      if (kp || km) continue;
      const double numeric = (fp - fm) / (2.0 * e);
      const double r = rel_error(analytic[i], numeric);
      if (r > res.max_rel) {
        res.max_rel = r;
        res.worst = i;
      }
      ++res.checked;
      done = true;
    }
    if (!done) ++res.skipped;
  }
  return res;
}

inline std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = uniform(rng, lo, hi);
  return v;
}

inline std::vector<std::size_t> all_coords(std::size_t n) {
  std::vector<std::size_t> c(n);
  std::iota(c.begin(), c.end(), std::size_t{0});
  return c;
}

inline std::vector<std::size_t> sample_coords(std::size_t lo, std::size_t hi, std::size_t k, Rng& rng) {
  std::vector<std::size_t> c(hi - lo);
  std::iota(c.begin(), c.end(), lo);
  std::shuffle(c.begin(), c.end(), rng);
  c.resize(std::min(k, c.size()));
  std::sort(c.begin(), c.end());
  return c;
}

inline Signature pattern_signature(const nn::Workspace<double>& ws) {
  Signature s(ws.pool_arg.begin(), ws.pool_arg.end());
  auto signs = [&](const std::vector<double>& v) {
    std::uint64_t word = 0;
    int bit = 0;
    for (double x : v) {
      word |= static_cast<std::uint64_t>(x > 0.0) << bit;
      if (++bit == 64) {
        s.push_back(word);
        word = 0;
        bit = 0;
      }
    }
    s.push_back(word);
  };
  signs(ws.conv_pre);
  signs(ws.fc1_pre);
  signs(ws.fc2_pre);
  return s;
}

// ---------------------------------------------------------------------------
// Per-layer and end-to-end checks shared by unit tests and the acceptance run.
// Layer objectives are random projections L = <R, layer(x)>.

inline GradCheckResult check_conv_layer(const nn::ConvShape& s, std::uint64_t seed, std::size_t max_input_coords) {
  auto rng = make_rng(seed, "gradcheck.conv");
  auto x = random_vector(s.in_size(), rng);
  auto w = random_vector(s.weight_count(), rng, -0.5, 0.5);
  auto b = random_vector(s.filters, rng, -0.5, 0.5);
  const auto R = random_vector(s.out_size(), rng);
  auto objective = [&](const std::vector<double>& xx, const std::vector<double>& ww, const std::vector<double>& bb) {
    std::vector<double> pre(s.out_size());
    nn::conv2d_forward<double>(s, xx, ww, bb, pre);
    return std::inner_product(pre.begin(), pre.end(), R.begin(), 0.0);
  };
  std::vector<double> gx(s.in_size()), gw(s.weight_count(), 0.0), gb(s.filters, 0.0);
  nn::conv2d_backward<double>(s, x, w, R, gx, gw, gb);
  GradCheckResult res;
  res.merge(check_gradient(w, gw, all_coords(w.size()), [&](const auto& v) { return objective(x, v, b); }));
  res.merge(check_gradient(b, gb, all_coords(b.size()), [&](const auto& v) { return objective(x, w, v); }));
  const auto xc = x.size() <= max_input_coords ? all_coords(x.size()) : sample_coords(0, x.size(), max_input_coords, rng);
  res.merge(check_gradient(x, gx, xc, [&](const auto& v) { return objective(v, w, b); }));
  return res;
}

inline GradCheckResult check_pool_layer(const nn::PoolShape& s, std::uint64_t seed, std::size_t max_coords = 0) {
  auto rng = make_rng(seed, "gradcheck.pool");
  auto x = random_vector(s.in_size(), rng);
  const auto R = random_vector(s.out_size(), rng);
  std::vector<double> out(s.out_size());
  std::vector<std::size_t> arg(s.out_size());
  auto fwd = [&](const std::vector<double>& v) {
    nn::maxpool_forward<double>(s, v, out, arg);
    return std::inner_product(out.begin(), out.end(), R.begin(), 0.0);
  };
  auto sig = [&](const std::vector<double>& v) {
    fwd(v);
    return Signature(arg.begin(), arg.end());
  };
  fwd(x);
  std::vector<double> gx(s.in_size());
  nn::maxpool_backward<double>(s, R, arg, gx);
  const auto xc = max_coords == 0 || x.size() <= max_coords ? all_coords(x.size()) : sample_coords(0, x.size(), max_coords, rng);
  return check_gradient(x, gx, xc, fwd, sig);
}

inline GradCheckResult check_dense_layer(std::size_t in_n, std::size_t out_n, std::uint64_t seed) {
  auto rng = make_rng(seed, "gradcheck.dense");
  auto x = random_vector(in_n, rng);
  auto w = random_vector(in_n * out_n, rng, -0.5, 0.5);
  auto b = random_vector(out_n, rng, -0.5, 0.5);
  const auto R = random_vector(out_n, rng);
  auto objective = [&](const std::vector<double>& xx, const std::vector<double>& ww, const std::vector<double>& bb) {
    std::vector<double> o(out_n);
    nn::dense_forward<double>(in_n, out_n, xx, ww, bb, o);
    return std::inner_product(o.begin(), o.end(), R.begin(), 0.0);
  };
  std::vector<double> gx(in_n), gw(in_n * out_n, 0.0), gb(out_n, 0.0);
  nn::dense_backward<double>(in_n, out_n, x, w, R, gx, gw, gb);
  GradCheckResult res;
  res.merge(check_gradient(w, gw, all_coords(w.size()), [&](const auto& v) { return objective(x, v, b); }));
  res.merge(check_gradient(b, gb, all_coords(b.size()), [&](const auto& v) { return objective(x, w, v); }));
  res.merge(check_gradient(x, gx, all_coords(x.size()), [&](const auto& v) { return objective(v, w, b); }));
  return res;
}

/// Elementwise SELU and sigmoid, away from the SELU kink at 0.
inline GradCheckResult check_activations(std::uint64_t seed, std::size_t n = 200) {
  auto rng = make_rng(seed, "gradcheck.act");
  GradCheckResult res;
  for (std::size_t k = 0; k < n; ++k) {
    double v = uniform(rng, -4.0, 4.0);
    if (std::abs(v) < 1e-2) v += 0.1;
    std::vector<double> x{v};
    const std::vector<double> gs{nn::selu_grad(v)};
    res.merge(check_gradient(x, gs, {0}, [](const auto& u) { return nn::selu(u[0]); }));
    const double sg = nn::sigmoid(v);
    const std::vector<double> gg{sg * (1.0 - sg)};
    res.merge(check_gradient(x, gg, {0}, [](const auto& u) { return nn::sigmoid(u[0]); }));
  }
  return res;
}

/// Loss gradient w.r.t. network parameters. Coordinates: every conv, bias,
/// fc2 and output parameter plus `fc1_samples` random fc1 weights.
inline GradCheckResult check_network(std::size_t in_channels, nn::PoolGeometry pool, LossKind loss, std::uint64_t seed,
                                     std::size_t fc1_samples = 300) {
  auto rng = make_rng(seed, "gradcheck.net");
  auto net = nn::ReducedLeNet<double>::initialized({in_channels, pool}, derive_seed(seed, "net"));
  // Random but non-zero biases so every term of the chain is exercised.
  const auto& L = net.layout();
  auto bias = [&](std::size_t a, std::size_t b) {
    for (std::size_t i = a; i < b; ++i) net.params()[i] = uniform(rng, -0.2, 0.2);
  };
  bias(L.conv_b, L.fc1_w);
  bias(L.fc1_b, L.fc2_w);
  bias(L.fc2_b, L.out_w);
  bias(L.out_b, L.total);
  const auto block = random_vector(50 * 50 * in_channels, rng, 0.0, 1.0);
  const double label = uniform(rng, 0.0, 1.0);

  // Probes perturb net.params() in place; copying 1e5 doubles per probe
  // would dominate the run.
  nn::Workspace<double> ws(net.config());
  auto f = [&](const std::vector<double>&) {
    net.forward<double>(block, ws);
    return loss_from_logit(ws.out_pre, label, loss);
  };
  // check_gradient probes loss(x) immediately before signature(x), so the
  // workspace always holds the forward pass at x.
  auto sig = [&](const std::vector<double>&) { return pattern_signature(ws); };
  net.forward<double>(block, ws);
  std::vector<double> g(net.params().size(), 0.0);
  net.backward(ws, loss_grad(ws.prediction, label, loss), g);

  std::vector<std::size_t> coords = all_coords(L.fc1_w);  // conv weights and biases
  for (std::size_t i = L.fc1_b; i < L.total; ++i) coords.push_back(i);
  const auto fc1 = sample_coords(L.fc1_w, L.fc1_b, fc1_samples, rng);
  coords.insert(coords.end(), fc1.begin(), fc1.end());
  auto res = check_gradient(net.params(), g, coords, f, sig);
  return res;
}

}  // namespace amfm::testing
