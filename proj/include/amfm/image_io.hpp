#pragma once

// 8-bit grayscale PGM/PNG input and PGM/PNG/RGB-PNG output.

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "amfm/error.hpp"
#include "amfm/image.hpp"

namespace amfm {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

using RgbImage = Image<Rgb>;

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Linear stretch of [lo, hi] onto [0, 1].
inline RealImage stretch(const RealImage& img, float lo, float hi) {
  const float span = hi > lo ? hi - lo : 1.0f;
  return map_image(img, [=](float v) { return (v - lo) / span; });
}

/// Linear stretch of the image's own min..max onto [0, 1].
inline RealImage stretch_minmax(const RealImage& img) {
  if (img.empty()) return img;
  auto [lo, hi] = std::minmax_element(img.data().begin(), img.data().end());
  return stretch(img, *lo, *hi);
}

namespace detail {

inline std::string next_token(std::istream& is) {
  std::string tok;
  char c;
  while (is.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};

}  // namespace detail

inline RealImage read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot open image: " + path.string());
  const std::string magic = detail::next_token(is);
  if (magic != "P5" && magic != "P2") throw ValidationError("not a PGM file: " + path.string());
  std::size_t cols = 0, rows = 0, maxval = 0;
  try {
    cols = std::stoul(detail::next_token(is));
    rows = std::stoul(detail::next_token(is));
    maxval = std::stoul(detail::next_token(is));
  } catch (const std::exception&) {
    throw ValidationError("malformed PGM header: " + path.string());
  }
  if (rows == 0 || cols == 0 || maxval == 0 || maxval > 255)
    throw ValidationError("unsupported PGM geometry or depth: " + path.string());
  RealImage img(rows, cols);
  if (magic == "P5") {
    std::vector<unsigned char> raw(rows * cols);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw ValidationError("truncated PGM data: " + path.string());
    for (std::size_t i = 0; i < raw.size(); ++i) img.data()[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
  } else {
    for (auto& v : img.data()) v = static_cast<float>(std::stoul(detail::next_token(is))) / static_cast<float>(maxval);
  }
  return img;
}

/// Values are clamped to [0, 1] and quantized to 8 bits.
inline void write_pgm(const std::filesystem::path& path, const RealImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ValidationError("cannot open for writing: " + path.string());
  os << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  std::vector<unsigned char> raw(img.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.data()[i]);
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

namespace detail {

inline void write_png_rows(const std::filesystem::path& path, std::size_t rows, std::size_t cols, int color_type,
                           const std::vector<unsigned char>& pixels, int channels) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw ValidationError("cannot open for writing: " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValidationError("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < rows; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * cols * static_cast<std::size_t>(channels)));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

inline void write_png(const std::filesystem::path& path, const RealImage& img) {
  std::vector<unsigned char> px(img.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(img.data()[i]);
  detail::write_png_rows(path, img.rows(), img.cols(), PNG_COLOR_TYPE_GRAY, px, 1);
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<unsigned char> px;
  px.reserve(img.size() * 3);
  for (const auto& p : img.data()) {
    px.push_back(p.r);
    px.push_back(p.g);
    px.push_back(p.b);
  }
  detail::write_png_rows(path, img.rows(), img.cols(), PNG_COLOR_TYPE_RGB, px, 3);
}

/// Reads any PNG and converts it to 8-bit gray in [0, 1].
inline RealImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw ValidationError("cannot read PNG: " + path.string());
  image.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ValidationError("cannot decode PNG: " + path.string());
  }
  RealImage img(image.height, image.width);
  for (std::size_t i = 0; i < img.size(); ++i) img.data()[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

/// Dispatch on extension: .png, otherwise PGM.
inline RealImage read_gray(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? read_png(path) : read_pgm(path);
}

}  // namespace amfm
