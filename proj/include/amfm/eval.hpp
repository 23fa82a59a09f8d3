#pragma once

// Empirical ROC/AUC over block predictions and confusion overlays.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "amfm/blocks.hpp"
#include "amfm/error.hpp"
#include "amfm/image.hpp"
#include "amfm/image_io.hpp"
#include "json.hpp"

namespace amfm {

inline constexpr double kDefaultTauGt = 0.1;

struct RocPoint {
  double threshold = 0.0;  // predicted positive iff pred >= threshold
  double fpr = 0.0, tpr = 0.0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct RocReport {
  std::vector<RocPoint> points;  // threshold descending
  double auc = 0.0;
  double tau_gt = kDefaultTauGt;
  std::size_t positives = 0, negatives = 0;
};

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

inline Confusion confusion_at(const std::vector<float>& preds, const std::vector<float>& labels, double tau_gt,
                              double threshold) {
  require(preds.size() == labels.size(), "confusion_at: length mismatch");
  Confusion c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool truth = labels[i] >= tau_gt, hit = preds[i] >= threshold;
    if (truth && hit) ++c.tp;
    else if (!truth && hit) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Exact empirical ROC: one point per distinct prediction plus +/-inf sentinels.
inline RocReport roc_curve(const std::vector<float>& preds, const std::vector<float>& labels,
                           double tau_gt = kDefaultTauGt) {
  if (preds.size() != labels.size() || preds.empty())
    throw ParameterError("roc_curve: predictions and labels must have equal nonzero length");
  for (float p : preds)
    if (!std::isfinite(p)) throw NumericError("roc_curve: non-finite prediction");
  RocReport rep;
  rep.tau_gt = tau_gt;
  std::vector<std::size_t> idx(preds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return preds[a] > preds[b]; });
  for (float l : labels) (l >= tau_gt ? rep.positives : rep.negatives)++;
  if (rep.positives == 0 || rep.negatives == 0)
    throw NumericError("roc_curve: AUC undefined, ground truth has a single class at tau_gt=" + std::to_string(tau_gt));

  const double P = static_cast<double>(rep.positives), N = static_cast<double>(rep.negatives);
  auto push = [&](double thr, std::size_t tp, std::size_t fp) {
    rep.points.push_back({thr, static_cast<double>(fp) / N, static_cast<double>(tp) / P, tp, fp,
                          rep.negatives - fp, rep.positives - tp});
  };
  push(std::numeric_limits<double>::infinity(), 0, 0);
  std::size_t tp = 0, fp = 0;
  // Twice the area in units of (1/P)(1/N); exact in integers.
  std::uint64_t area2 = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const float v = preds[idx[i]];
    const std::size_t tp0 = tp, fp0 = fp;
    for (; i < idx.size() && preds[idx[i]] == v; ++i) (labels[idx[i]] >= tau_gt ? tp : fp)++;
    area2 += static_cast<std::uint64_t>(fp - fp0) * (tp + tp0);
    push(v, tp, fp);
  }
  push(-std::numeric_limits<double>::infinity(), tp, fp);
  rep.auc = static_cast<double>(area2) / (2.0 * P * N);
  return rep;
}

/// Threshold maximising TPR - FPR (the highest such threshold on ties).
inline double youden_threshold(const RocReport& rep) {
  double best = -1.0, thr = 0.5;
  for (const auto& p : rep.points) {
    if (!std::isfinite(p.threshold)) continue;
    if (p.tpr - p.fpr > best) {
      best = p.tpr - p.fpr;
      thr = p.threshold;
    }
  }
  return thr;
}

// ---------------------------------------------------------------------------
// Overlays.

inline const Rgb kTpColor{0, 200, 0};
inline const Rgb kFpColor{220, 0, 0};
inline const Rgb kFnColor{240, 220, 0};
inline constexpr std::size_t kOverlayBorder = 2;

/// Gray frame (grid-aligned) with block borders: green TP, red FP, yellow FN.
inline RgbImage render_overlay(const RealImage& frame, const std::vector<float>& preds,
                               const std::vector<float>& labels, std::size_t grid_rows, std::size_t grid_cols,
                               double threshold, double tau_gt = kDefaultTauGt, Confusion* counts = nullptr) {
  require(frame.rows() == grid_rows * kBlockSize && frame.cols() == grid_cols * kBlockSize,
          "render_overlay: frame is not a 50x50 tiling of the grid");
  require(preds.size() == grid_rows * grid_cols && labels.size() == preds.size(),
          "render_overlay: prediction/label grid size mismatch");
  RgbImage out(frame.rows(), frame.cols());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const auto g = to_byte(frame.data()[i]);
    out.data()[i] = {g, g, g};
  }
  Confusion c;
  for (std::size_t b = 0; b < preds.size(); ++b) {
    const bool truth = labels[b] >= tau_gt, hit = preds[b] >= threshold;
    const Rgb* color = nullptr;
    if (truth && hit) { ++c.tp; color = &kTpColor; }
    else if (!truth && hit) { ++c.fp; color = &kFpColor; }
    else if (truth) { ++c.fn; color = &kFnColor; }
    else ++c.tn;
    if (!color) continue;
    const std::size_t r0 = (b / grid_cols) * kBlockSize, c0 = (b % grid_cols) * kBlockSize;
    for (std::size_t r = 0; r < kBlockSize; ++r)
      for (std::size_t q = 0; q < kBlockSize; ++q)
        if (r < kOverlayBorder || q < kOverlayBorder || r >= kBlockSize - kOverlayBorder || q >= kBlockSize - kOverlayBorder)
          out(r0 + r, c0 + q) = *color;
  }
  if (counts) *counts = c;
  return out;
}

/// Count of blocks whose full border carries `color`.
inline std::size_t count_rectangles(const RgbImage& img, std::size_t grid_rows, std::size_t grid_cols, Rgb color) {
  std::size_t n = 0;
  for (std::size_t br = 0; br < grid_rows; ++br) {
    for (std::size_t bc = 0; bc < grid_cols; ++bc) {
      bool all = true;
      for (std::size_t k = 0; k < kBlockSize && all; ++k) {
        const std::size_t r0 = br * kBlockSize, c0 = bc * kBlockSize;
        all = img(r0, c0 + k) == color && img(r0 + kBlockSize - 1, c0 + k) == color && img(r0 + k, c0) == color &&
              img(r0 + k, c0 + kBlockSize - 1) == color;
      }
      n += all;
    }
  }
  return n;
}

// ---------------------------------------------------------------------------
// Report files.

namespace detail {

inline std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace detail

inline void write_roc_csv(const std::filesystem::path& path, const RocReport& rep) {
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  os << "threshold,fpr,tpr,tp,fp,tn,fn\n";
  for (const auto& p : rep.points)
    os << detail::num(p.threshold) << ',' << detail::num(p.fpr) << ',' << detail::num(p.tpr) << ',' << p.tp << ','
       << p.fp << ',' << p.tn << ',' << p.fn << '\n';
}

inline nlohmann::json report_json(const RocReport& rep, double threshold, const Confusion& at) {
  return {{"auc", rep.auc},
          {"tau_gt", rep.tau_gt},
          {"positives", rep.positives},
          {"negatives", rep.negatives},
          {"roc_points", rep.points.size()},
          {"operating_threshold", threshold},
          {"counts", {{"tp", at.tp}, {"fp", at.fp}, {"tn", at.tn}, {"fn", at.fn}}}};
}

struct RocSeries {
  std::string label;
  std::string color;
  const RocReport* report;
};

/// Minimal SVG: axes, chance diagonal, one polyline per series, legend.
inline void write_roc_svg(const std::filesystem::path& path, const std::vector<RocSeries>& series,
                          const std::string& title = "ROC") {
  constexpr double W = 480, H = 480, m = 60, plot = 380;
  std::ofstream os(path);
  if (!os) throw ValidationError("cannot write " + path.string());
  auto X = [&](double f) { return m + f * plot; };
  auto Y = [&](double t) { return H - m - t * plot; };
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << W / 2 << "\" y=\"30\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
     << "<rect x=\"" << m << "\" y=\"" << Y(1) << "\" width=\"" << plot << "\" height=\"" << plot
     << "\" fill=\"none\" stroke=\"black\"/>\n"
     << "<line x1=\"" << X(0) << "\" y1=\"" << Y(0) << "\" x2=\"" << X(1) << "\" y2=\"" << Y(1)
     << "\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = k / 5.0;
    os << "<text x=\"" << X(v) << "\" y=\"" << Y(0) + 18 << "\" text-anchor=\"middle\">" << detail::num(v) << "</text>\n"
       << "<text x=\"" << X(0) - 8 << "\" y=\"" << Y(v) + 4 << "\" text-anchor=\"end\">" << detail::num(v) << "</text>\n";
  }
  os << "<text x=\"" << W / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">False positive rate</text>\n"
     << "<text x=\"18\" y=\"" << H / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " << H / 2
     << ")\">True positive rate</text>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& sr = series[s];
    os << "<polyline fill=\"none\" stroke=\"" << sr.color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : sr.report->points) os << detail::num(X(p.fpr)) << ',' << detail::num(Y(p.tpr)) << ' ';
    os << "\"/>\n";
    const double ly = Y(0) - 20 - 18.0 * static_cast<double>(series.size() - 1 - s);
    os << "<line x1=\"" << X(0.55) << "\" y1=\"" << ly << "\" x2=\"" << X(0.62) << "\" y2=\"" << ly << "\" stroke=\""
       << sr.color << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << X(0.64) << "\" y=\"" << ly + 4 << "\">" << sr.label << " (AUC " << std::fixed
       << std::setprecision(3) << sr.report->auc << std::defaultfloat << ")</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace amfm
