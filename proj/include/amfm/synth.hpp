#pragma once

// Synthetic corpora: chirp frames with known phase, and a block dataset in
// which "faces" differ from the background only by texture frequency.
//
// Faces carry an oriented carrier inside the band-pass scale while the
// background carries a lower-frequency carrier of the same local amplitude
// over the same smooth shading. Mean intensity is therefore uninformative by
// construction; only the phase structure separates the classes. Keep it that
// way: making faces brighter or darker turns this into a different problem.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "amfm/blocks.hpp"
#include "amfm/error.hpp"
#include "amfm/image.hpp"
#include "amfm/image_io.hpp"
#include "amfm/parallel.hpp"
#include "amfm/rng.hpp"
#include "json.hpp"

namespace amfm {

// ---------------------------------------------------------------------------
// Chirps.

struct ChirpFrame {
  RealImage image;      // a * cos(phi), values in [-1, 1]
  Image<double> phase;  // phi, exact
  RealImage amplitude;  // a
};

using AmplitudeFn = std::function<double(double x, double y)>;

inline constexpr double kChirpMinOmega = 0.2 * std::numbers::pi;
inline constexpr double kChirpMaxOmega = 0.9 * std::numbers::pi;

/// Frequency 2*pi*k/n, i.e. exactly on DFT bin k of an n-sample row.
inline double bin_aligned_omega(std::size_t k, std::size_t n) {
  return 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
}

/// phi = phi0 + omega0*x + chirp_rate*x^2/2 along each row; phi0 is drawn from
/// the seed. The local frequency omega0 + chirp_rate*x must stay inside
/// (0.2 pi, 0.9 pi) over the whole row.
inline ChirpFrame gen_chirp_frame(std::size_t rows, std::size_t cols, double omega0, double chirp_rate,
                                  const AmplitudeFn& amplitude = {}, std::uint64_t seed = 0) {
  require(rows >= 1 && cols >= 1, "gen_chirp_frame: empty geometry");
  const double w_end = omega0 + chirp_rate * static_cast<double>(cols);
  for (double w : {omega0, w_end})
    if (!(w > kChirpMinOmega && w < kChirpMaxOmega))
      throw ParameterError("gen_chirp_frame: local frequency " + std::to_string(w) +
                           " leaves (0.2pi, 0.9pi)");
  auto rng = make_rng(seed, "synth.chirp");
  const double phi0 = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  ChirpFrame out{RealImage(rows, cols), Image<double>(rows, cols), RealImage(rows, cols)};
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = static_cast<double>(c), y = static_cast<double>(r);
      const double a = amplitude ? amplitude(x, y) : 1.0;
      if (!(a >= 0.0 && a <= 1.0)) throw ParameterError("gen_chirp_frame: amplitude must lie in [0, 1]");
      const double phi = phi0 + omega0 * x + 0.5 * chirp_rate * x * x;
      out.phase(r, c) = phi;
      out.amplitude(r, c) = static_cast<float>(a);
      out.image(r, c) = static_cast<float>(a * std::cos(phi));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Texture faces.

struct FacesConfig {
  std::size_t rows = 500, cols = 900;
  std::size_t frames_per_session = 11;
  std::size_t train_sessions = 12, test_sessions = 6;
  double shade_amp = 0.25;       // smooth shading around mid-gray
  double bg_amp = 0.02;          // median texture amplitude
  double amp_sigma = 0.6;        // log-amplitude variation
  double bg_omega = 0.125 * std::numbers::pi;   // rad/px, original frame
  double face_omega = 0.3 * std::numbers::pi;   // rad/px, original frame
  double axis_scale = 0.85;
  double noise = 0.0015;
  double target_rate = 0.10;     // positive blocks at tau_gt
  double tau_gt = 0.1;
  std::size_t max_faces = 6;
  double max_mean_gap = 0.02;    // |face mean - ring mean|, fraction of [0, 1]

  std::size_t frames() const { return frames_per_session * (train_sessions + test_sessions); }

  void validate() const {
    if (rows < 100 || cols < 100) throw ParameterError("face frames must be at least 100x100 (2x2 blocks)");
    if (frames_per_session < 1) throw ParameterError("frames per session must be >= 1");
    if (!(target_rate > 0.0 && target_rate < 1.0)) throw ParameterError("target positive rate must be in (0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const FacesConfig& c) {
  j = {{"rows", c.rows},
       {"cols", c.cols},
       {"frames_per_session", c.frames_per_session},
       {"train_sessions", c.train_sessions},
       {"test_sessions", c.test_sessions},
       {"shade_amp", c.shade_amp},
       {"bg_amp", c.bg_amp},
       {"amp_sigma", c.amp_sigma},
       {"bg_omega", c.bg_omega},
       {"face_omega", c.face_omega},
       {"noise", c.noise},
       {"target_rate", c.target_rate},
       {"tau_gt", c.tau_gt}};
}

namespace detail {

inline double catmull_rom(double p0, double p1, double p2, double p3, double t) {
  return p1 + 0.5 * t * (p2 - p0 + t * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + t * (3.0 * (p1 - p2) + p3 - p0)));
}

/// Bicubic interpolation of a cells x cells grid of N(0,1) draws stretched
/// over the frame.
inline Image<double> smooth_field(Rng& rng, std::size_t rows, std::size_t cols, std::size_t cells) {
  Image<double> g(cells, cells);
  for (auto& v : g.data()) v = normal(rng);
  auto at = [&](long r, long c) {
    const long n = static_cast<long>(cells) - 1;
    return g(static_cast<std::size_t>(std::clamp(r, 0L, n)), static_cast<std::size_t>(std::clamp(c, 0L, n)));
  };
  auto coord = [&](std::size_t i, std::size_t n) {
    return n <= 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(cells - 1) / static_cast<double>(n - 1);
  };
  Image<double> horiz(cells, cols);
  for (std::size_t gr = 0; gr < cells; ++gr) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double u = coord(c, cols);
      const long k = static_cast<long>(std::floor(u));
      const long r = static_cast<long>(gr);
      horiz(gr, c) = catmull_rom(at(r, k - 1), at(r, k), at(r, k + 1), at(r, k + 2), u - static_cast<double>(k));
    }
  }
  Image<double> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double v = coord(r, rows);
    const long k = static_cast<long>(std::floor(v));
    const long n = static_cast<long>(cells) - 1;
    auto row = [&](long i) { return static_cast<std::size_t>(std::clamp(i, 0L, n)); };
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = catmull_rom(horiz(row(k - 1), c), horiz(row(k), c), horiz(row(k + 1), c), horiz(row(k + 2), c),
                              v - static_cast<double>(k));
  }
  return out;
}

struct FaceSpec {
  double cx, cy, a, b;  // centre and semi-axes (x, y)
  double theta, phase;
  Box box() const { return {cx - a, cy - b, 2 * a, 2 * b}; }
};

inline std::size_t positives_in(const std::vector<Box>& boxes, std::size_t rows, std::size_t cols, double tau) {
  // Same geometry as preprocess_frame without touching pixels.
  const Box content{0, 0, static_cast<double>(cols / 2), static_cast<double>(rows / 2)};
  std::vector<Box> half;
  for (const auto& b : boxes)
    if (auto c = intersect(Box{0.5 * b.x, 0.5 * b.y, 0.5 * b.w, 0.5 * b.h}, content)) half.push_back(*c);
  std::size_t n = 0;
  for (float l : block_labels(half, round_up(rows / 2, kBlockSize) / kBlockSize, round_up(cols / 2, kBlockSize) / kBlockSize))
    n += l >= tau;
  return n;
}

}  // namespace detail

/// Mean of `img` over the box and over a ring of width `margin` around it.
inline std::pair<double, double> box_and_ring_mean(const RealImage& img, const Box& b, double margin = 10.0) {
  double in = 0, out = 0;
  std::size_t nin = 0, nout = 0;
  const auto r0 = static_cast<long>(std::floor(b.y - margin)), r1 = static_cast<long>(std::ceil(b.y1() + margin));
  const auto c0 = static_cast<long>(std::floor(b.x - margin)), c1 = static_cast<long>(std::ceil(b.x1() + margin));
  for (long r = std::max(r0, 0L); r < std::min(r1, static_cast<long>(img.rows())); ++r) {
    for (long c = std::max(c0, 0L); c < std::min(c1, static_cast<long>(img.cols())); ++c) {
      const double x = static_cast<double>(c) + 0.5, y = static_cast<double>(r) + 0.5;
      const double v = img(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
      if (x >= b.x && x < b.x1() && y >= b.y && y < b.y1()) {
        in += v;
        ++nin;
      } else {
        out += v;
        ++nout;
      }
    }
  }
  return {nin ? in / static_cast<double>(nin) : 0.0, nout ? out / static_cast<double>(nout) : 0.0};
}

/// Renders one frame from its face layout.
inline RealImage render_face_frame(const FacesConfig& cfg, const std::vector<detail::FaceSpec>& faces,
                                   std::uint64_t seed, std::size_t index) {
  auto rng = make_rng(seed, "synth.faces.render", index);
  const std::size_t R = cfg.rows, C = cfg.cols;
  const auto shade_f = detail::smooth_field(rng, R, C, 4);
  const auto amp_f = detail::smooth_field(rng, R, C, 8);
  const double theta0 = uniform(rng, 0.0, std::numbers::pi);
  const auto theta_f = detail::smooth_field(rng, R, C, 3);
  const double bg_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);

  Image<double> shade(R, C), amp(R, C), img(R, C);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      const double x = static_cast<double>(c), y = static_cast<double>(r);
      shade(r, c) = 0.5 + cfg.shade_amp * shade_f(r, c);
      amp(r, c) = cfg.bg_amp * std::exp(cfg.amp_sigma * amp_f(r, c));
      const double th = theta0 + 0.6 * theta_f(r, c);
      img(r, c) = shade(r, c) + amp(r, c) * std::cos(cfg.bg_omega * (x * std::cos(th) + y * std::sin(th)) + bg_phase);
    }
  }
  for (const auto& f : faces) {
    const auto rlo = static_cast<std::size_t>(std::max(0.0, std::floor(f.cy - f.b)));
    const auto rhi = std::min(R, static_cast<std::size_t>(std::ceil(f.cy + f.b)) + 1);
    const auto clo = static_cast<std::size_t>(std::max(0.0, std::floor(f.cx - f.a)));
    const auto chi = std::min(C, static_cast<std::size_t>(std::ceil(f.cx + f.a)) + 1);
    const double ct = std::cos(f.theta), st = std::sin(f.theta);
    for (std::size_t r = rlo; r < rhi; ++r) {
      for (std::size_t c = clo; c < chi; ++c) {
        const double x = static_cast<double>(c), y = static_cast<double>(r);
        const double dx = (x - f.cx) / f.a, dy = (y - f.cy) / f.b;
        if (dx * dx + dy * dy > 1.0) continue;
        img(r, c) = shade(r, c) + amp(r, c) * std::cos(cfg.face_omega * (x * ct + y * st) + f.phase);
      }
    }
  }
  RealImage out(R, C);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = img.data()[i] + normal(rng, 0.0, cfg.noise);
    const long q = std::clamp(std::lround(v * 255.0), 0L, 255L);
    out.data()[i] = static_cast<float>(q) / 255.0f;
  }
  return out;
}

inline std::string session_name(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%02zu", s);
  return buf;
}

inline std::string frame_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "f%03zu", f);
  return buf;
}

/// `n_frames` frames, grouped into sessions of cfg.frames_per_session. Face
/// counts follow a running quota so the corpus positive rate at cfg.tau_gt
/// tracks cfg.target_rate. Faces whose mean intensity drifts from the
/// surrounding ring by more than cfg.max_mean_gap are re-drawn.
inline std::vector<FrameRecord> gen_face_dataset(std::size_t n_frames, const FacesConfig& cfg, std::uint64_t seed,
                                                 unsigned threads = 1) {
  cfg.validate();
  const std::size_t blocks = (round_up(cfg.rows / 2, kBlockSize) / kBlockSize) * (round_up(cfg.cols / 2, kBlockSize) / kBlockSize);

  // Layouts are sequential (the quota couples frames); rendering is not.
  std::vector<std::vector<detail::FaceSpec>> layouts(n_frames);
  std::size_t cum = 0;
  for (std::size_t i = 0; i < n_frames; ++i) {
    auto rng = make_rng(seed, "synth.faces.layout", i);
    const auto target = static_cast<std::size_t>(
        std::lround(cfg.target_rate * static_cast<double>(blocks) * static_cast<double>(i + 1)));
    std::vector<Box> boxes;
    std::size_t have = 0;
    for (std::size_t tries = 0; layouts[i].size() < cfg.max_faces && cum + have < target && tries < 200; ++tries) {
      detail::FaceSpec f{};
      f.a = cfg.axis_scale * uniform(rng, 30.0, 45.0);
      f.b = cfg.axis_scale * uniform(rng, 36.0, 55.0);
      f.cx = uniform(rng, f.a, static_cast<double>(cfg.cols) - f.a);
      f.cy = uniform(rng, f.b, static_cast<double>(cfg.rows) - f.b);
      f.theta = uniform(rng, 0.0, std::numbers::pi);
      f.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const Box nb = f.box();
      bool clash = false;
      for (const auto& b : boxes) clash = clash || intersect(Box{b.x - 4, b.y - 4, b.w + 8, b.h + 8}, nb).has_value();
      if (clash) continue;
      boxes.push_back(nb);
      layouts[i].push_back(f);
      have = detail::positives_in(boxes, cfg.rows, cfg.cols, cfg.tau_gt);
    }
    cum += have;
  }

  std::vector<FrameRecord> out(n_frames);
  parallel_for(n_frames, threads, [&](std::size_t i) {
    auto& faces = layouts[i];
    RealImage img;
    for (std::size_t attempt = 0;; ++attempt) {
      img = render_face_frame(cfg, faces, seed, i * 1000 + attempt);
      bool ok = true;
      for (const auto& f : faces) {
        const auto [in, ring] = box_and_ring_mean(img, f.box());
        ok = ok && std::abs(in - ring) < cfg.max_mean_gap;
      }
      if (ok) break;
      if (attempt == 20) throw ValidationError("face generator could not meet the mean-intensity constraint");
    }
    std::vector<Box> boxes;
    for (const auto& f : faces) boxes.push_back(f.box());
    out[i] = FrameRecord{session_name(i / cfg.frames_per_session), frame_name(i % cfg.frames_per_session),
                         std::move(img), std::move(boxes)};
    out[i].validate();
  });
  return out;
}

/// Full default corpus: the first cfg.train_sessions sessions train, the rest test.
inline std::vector<LabeledFrame> gen_face_corpus(const FacesConfig& cfg, std::uint64_t seed, unsigned threads = 1) {
  auto frames = gen_face_dataset(cfg.frames(), cfg, seed, threads);
  std::vector<LabeledFrame> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const bool test = i / cfg.frames_per_session >= cfg.train_sessions;
    out.push_back({std::move(frames[i]), test ? Split::test : Split::train});
  }
  return out;
}

/// Fraction of blocks with label >= tau over the given frames.
inline double block_positive_rate(const std::vector<FrameRecord>& frames, double tau) {
  std::size_t pos = 0, total = 0;
  for (const auto& f : frames) {
    const auto pre = preprocess_frame(f);
    for (float l : block_labels(pre.boxes, pre.grid_rows(), pre.grid_cols())) {
      pos += l >= tau;
      ++total;
    }
  }
  return total ? static_cast<double>(pos) / static_cast<double>(total) : 0.0;
}

/// Writes frames/<session>_<frame>.pgm, labels/<session>_<frame>.json and manifest.json.
inline DatasetManifest write_corpus(const std::filesystem::path& dir, const std::vector<LabeledFrame>& frames) {
  std::filesystem::create_directories(dir / "frames");
  std::filesystem::create_directories(dir / "labels");
  DatasetManifest m;
  m.base_dir = dir;
  for (const auto& f : frames) {
    const std::string stem = f.record.session_id + "_" + f.record.frame_id;
    const std::filesystem::path img = std::filesystem::path("frames") / (stem + ".pgm");
    const std::filesystem::path lab = std::filesystem::path("labels") / (stem + ".json");
    write_pgm(dir / img, f.record.image);
    save_boxes(dir / lab, f.record.face_boxes);
    m.entries.push_back({img, lab, f.record.session_id, f.record.frame_id, f.split});
  }
  m.validate();
  save_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace amfm
