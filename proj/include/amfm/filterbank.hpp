#pragma once

// Low-parameter directional filterbank: one baseband scale of directional
// Gaussians and one bandpass scale of directional Gabors, eight orientations
// each, on small odd-sized kernels.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "amfm/error.hpp"
#include "amfm/fft.hpp"
#include "amfm/image.hpp"
#include "amfm/tensor_io.hpp"
#include "json.hpp"

namespace amfm {

using Kernel = Image<cdouble>;

struct KernelSpec {
  int size = 11;
  double sigma_x = 1.5;    // along the major (u) axis
  double sigma_y = 0.375;  // along the minor (v) axis
  double theta = 0.0;      // orientation of u, radians in [0, pi)
  double omega = 0.0;      // radial center frequency along u; 0 = baseband

  void validate() const {
    require(size >= 3 && size % 2 == 1, "kernel size must be odd and >= 3");
    require(sigma_x > 0.0 && sigma_y > 0.0, "kernel sigmas must be positive");
    require(theta >= 0.0 && theta < std::numbers::pi, "theta must lie in [0, pi)");
    require(omega >= 0.0 && omega <= std::numbers::pi, "omega must lie in [0, pi]");
  }
};

/// Grid on which peak gains are measured and normalized.
inline constexpr std::size_t kPeakGainGrid = 256;

namespace detail {

inline Kernel envelope(const KernelSpec& spec) {
  const int h = spec.size / 2;
  const double c = std::cos(spec.theta), s = std::sin(spec.theta);
  Kernel k(spec.size, spec.size);
  for (int r = 0; r < spec.size; ++r) {
    for (int col = 0; col < spec.size; ++col) {
      const double x = col - h, y = r - h;
      const double u = x * c + y * s;
      const double v = -x * s + y * c;
      const double g = std::exp(-(u * u / (2 * spec.sigma_x * spec.sigma_x) + v * v / (2 * spec.sigma_y * spec.sigma_y)));
      k(r, col) = {g, 0.0};
    }
  }
  return k;
}

inline fft::Buffer padded_dft(const Kernel& kernel, std::size_t grid) {
  fft::Buffer buf(grid * grid);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = 0.0;
  for (std::size_t r = 0; r < kernel.rows(); ++r)
    for (std::size_t c = 0; c < kernel.cols(); ++c) buf[r * grid + c] = kernel(r, c);
  fft::Plan2d plan(grid, grid, fft::Direction::forward);
  plan.execute(buf);
  return buf;
}

}  // namespace detail

/// Maximum magnitude of the kernel's zero-padded DFT.
inline double peak_gain(const Kernel& kernel, std::size_t grid = kPeakGainGrid) {
  auto buf = detail::padded_dft(kernel, grid);
  double best = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) best = std::max(best, std::abs(buf[i]));
  return best;
}

/// Real directional Gaussian with unit DC gain.
inline Kernel make_directional_gaussian(const KernelSpec& spec) {
  spec.validate();
  require(spec.omega == 0.0, "directional Gaussian requires omega == 0");
  Kernel k = detail::envelope(spec);
  double sum = 0.0;
  for (const auto& z : k.data()) sum += z.real();
  for (auto& z : k.data()) z /= sum;
  return k;
}

/// Complex directional Gabor: envelope modulated along u, zero DC, unit peak gain.
inline Kernel make_gabor(const KernelSpec& spec) {
  spec.validate();
  require(spec.omega > 0.0, "Gabor kernel requires omega in (0, pi]");
  Kernel k = detail::envelope(spec);
  const int h = spec.size / 2;
  const double c = std::cos(spec.theta), s = std::sin(spec.theta);
  cdouble mean = 0.0;
  for (int r = 0; r < spec.size; ++r) {
    for (int col = 0; col < spec.size; ++col) {
      const double u = (col - h) * c + (r - h) * s;
      k(r, col) *= std::polar(1.0, spec.omega * u);
      mean += k(r, col);
    }
  }
  mean /= static_cast<double>(k.size());
  for (auto& z : k.data()) z -= mean;
  const double gain = peak_gain(k);
  for (auto& z : k.data()) z /= gain;
  return k;
}

/// Centered (DC at [grid/2, grid/2]) magnitude of the zero-padded 2-D DFT.
/// Row index maps to vertical frequency, column index to horizontal frequency.
inline Image<double> frequency_response(const Kernel& kernel, std::size_t grid) {
  require(grid >= kernel.rows() && grid >= kernel.cols(), "response grid smaller than kernel");
  auto buf = detail::padded_dft(kernel, grid);
  Image<double> out(grid, grid);
  const std::size_t half = grid / 2;
  for (std::size_t r = 0; r < grid; ++r)
    for (std::size_t c = 0; c < grid; ++c)
      out((r + half) % grid, (c + half) % grid) = std::abs(buf[r * grid + c]);
  return out;
}

/// Angular frequency (radians/pixel) of centered response index i on a grid.
inline double response_frequency(std::size_t i, std::size_t grid) {
  return 2.0 * std::numbers::pi * (static_cast<double>(i) - static_cast<double>(grid / 2)) /
         static_cast<double>(grid);
}

struct FilterbankConfig {
  int size = 11;
  double sigma_x = 1.5;
  double sigma_y = 0.375;
  double theta_step = 0.39;
  int scales = 2;
  int orientations = 8;
  double omega2 = std::numbers::pi / 2;  // bandpass radial center frequency

  friend bool operator==(const FilterbankConfig&, const FilterbankConfig&) = default;
};

inline void to_json(nlohmann::json& j, const FilterbankConfig& c) {
  j = {{"size", c.size},     {"sigma_x", c.sigma_x},       {"sigma_y", c.sigma_y}, {"theta_step", c.theta_step},
       {"scales", c.scales}, {"orientations", c.orientations}, {"omega2", c.omega2}};
}

inline void from_json(const nlohmann::json& j, FilterbankConfig& c) {
  c.size = j.at("size").get<int>();
  c.sigma_x = j.at("sigma_x").get<double>();
  c.sigma_y = j.at("sigma_y").get<double>();
  c.theta_step = j.at("theta_step").get<double>();
  c.scales = j.at("scales").get<int>();
  c.orientations = j.at("orientations").get<int>();
  c.omega2 = j.at("omega2").get<double>();
}

struct FilterChannel {
  int scale = 0;  // 0 = baseband Gaussians, 1 = bandpass Gabors
  KernelSpec spec;
  Kernel kernel;
  double peak_gain = 0.0;
};

class GaborFilterbank {
 public:
  GaborFilterbank(FilterbankConfig config, std::vector<FilterChannel> channels)
      : config_(config), channels_(std::move(channels)) {}

  const FilterbankConfig& config() const noexcept { return config_; }
  const std::vector<FilterChannel>& channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return channels_.size(); }
  const FilterChannel& operator[](std::size_t i) const { return channels_.at(i); }
  int kernel_size() const noexcept { return config_.size; }

  /// Stable identifier of the configuration, used as a cache key.
  std::string config_hash() const {
    const std::string text = nlohmann::json(config_).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) h = (h ^ c) * 0x100000001b3ULL;
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
  }

 private:
  FilterbankConfig config_;
  std::vector<FilterChannel> channels_;
};

/// Channels are ordered scale-major, then orientation (theta = k * theta_step).
inline GaborFilterbank build_filterbank(const FilterbankConfig& config = {}) {
  require(config.scales == 1 || config.scales == 2, "filterbank supports 1 or 2 scales");
  require(config.orientations >= 1, "need at least one orientation");
  require(config.theta_step > 0.0, "theta_step must be positive");
  std::vector<FilterChannel> channels;
  for (int scale = 0; scale < config.scales; ++scale) {
    for (int o = 0; o < config.orientations; ++o) {
      KernelSpec spec{config.size, config.sigma_x, config.sigma_y, o * config.theta_step,
                      scale == 0 ? 0.0 : config.omega2};
      FilterChannel ch;
      ch.scale = scale;
      ch.spec = spec;
      ch.kernel = scale == 0 ? make_directional_gaussian(spec) : make_gabor(spec);
      ch.peak_gain = peak_gain(ch.kernel);
      channels.push_back(std::move(ch));
    }
  }
  return GaborFilterbank(config, std::move(channels));
}

inline void export_filterbank(const GaborFilterbank& fb, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["config"] = fb.config();
  j["channels"] = nlohmann::json::array();
  for (std::size_t i = 0; i < fb.size(); ++i) {
    const auto& ch = fb[i];
    std::ostringstream name;
    name << "channel_" << std::setw(2) << std::setfill('0') << i << ".aft";
    write_tensor(dir / name.str(), to_tensor(ch.kernel));
    j["channels"].push_back({{"index", i},
                             {"scale", ch.scale},
                             {"size", ch.spec.size},
                             {"sigma_x", ch.spec.sigma_x},
                             {"sigma_y", ch.spec.sigma_y},
                             {"theta", ch.spec.theta},
                             {"omega", ch.spec.omega},
                             {"peak_gain", ch.peak_gain},
                             {"file", name.str()}});
  }
  std::ofstream(dir / "filterbank.json") << j.dump(2) << '\n';
}

/// Loads an exported bank. Kernels come from the tensor files (f32 precision).
inline GaborFilterbank import_filterbank(const std::filesystem::path& dir) {
  std::ifstream is(dir / "filterbank.json");
  if (!is) throw ValidationError("missing filterbank.json in " + dir.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("filterbank.json: ") + e.what());
  }
  FilterbankConfig config = j.at("config").get<FilterbankConfig>();
  std::vector<FilterChannel> channels;
  for (const auto& c : j.at("channels")) {
    FilterChannel ch;
    ch.scale = c.at("scale").get<int>();
    ch.spec = {c.at("size").get<int>(), c.at("sigma_x").get<double>(), c.at("sigma_y").get<double>(),
               c.at("theta").get<double>(), c.at("omega").get<double>()};
    ch.spec.validate();
    ch.kernel = complex_image_from(read_tensor(dir / c.at("file").get<std::string>()));
    if (ch.kernel.rows() != static_cast<std::size_t>(ch.spec.size) || ch.kernel.cols() != ch.kernel.rows())
      throw ValidationError("kernel tensor shape does not match its spec");
    ch.peak_gain = c.at("peak_gain").get<double>();
    channels.push_back(std::move(ch));
  }
  if (channels.size() != static_cast<std::size_t>(config.scales * config.orientations))
    throw ValidationError("channel count does not match scales x orientations");
  return GaborFilterbank(config, std::move(channels));
}

}  // namespace amfm
