#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/tensor.hpp"

namespace fsdrive {

/// 8-bit interleaved raster, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c = 0) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c = 0) const { return pixels[(y * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

struct CropRect {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
};

/// Centered square of side min(width, height).
inline CropRect default_crop(std::size_t width, std::size_t height) {
  const std::size_t side = std::min(width, height);
  return {(width - side) / 2, (height - side) / 2, side, side};
}

namespace detail {

inline std::size_t pnm_header_number(const std::vector<char>& bytes, std::size_t& pos, const std::string& what) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  std::size_t value = 0, digits = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    ++pos;
    if (++digits > 9) break;
  }
  if (digits == 0 || digits > 9) fail(ErrorKind::format, "malformed PNM header: bad " + what);
  return value;
}

}  // namespace detail

/// Decodes binary PPM (P6) or PGM (P5) with maxval <= 255.
inline Image decode_pnm(const std::vector<char>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5'))
    fail(ErrorKind::format, "malformed PNM: expected P6 or P5 magic");
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  const auto width = detail::pnm_header_number(bytes, pos, "width");
  const auto height = detail::pnm_header_number(bytes, pos, "height");
  const auto maxval = detail::pnm_header_number(bytes, pos, "maxval");
  if (width == 0 || height == 0) fail(ErrorKind::format, "malformed PNM header: zero extent");
  if (maxval == 0 || maxval > 255) fail(ErrorKind::format, "unsupported PNM maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    fail(ErrorKind::format, "malformed PNM header: missing separator before raster");
  ++pos;
  Image img(width, height, channels);
  if (bytes.size() - pos < img.pixels.size())
    fail(ErrorKind::format, "malformed PNM: raster truncated (" + std::to_string(bytes.size() - pos) + " of " +
                                std::to_string(img.pixels.size()) + " bytes)");
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
    img.pixels[i] = maxval == 255 ? v : static_cast<std::uint8_t>(std::lround(255.0 * std::min<double>(v, maxval) / maxval));
  }
  return img;
}

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::input_not_found, "cannot open image " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

inline std::string encode_pnm(const Image& img) {
  require(img.channels == 1 || img.channels == 3, "PNM images have 1 or 3 channels");
  std::string out = (img.channels == 3 ? "P6\n" : "P5\n") + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

/// Writes P6 for RGB images and P5 for grayscale.
inline void write_pnm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write image " + path.string());
  const auto bytes = encode_pnm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing image " + path.string());
}

/// Crop then bilinear resize (half-pixel centers, edge clamped) to a
/// (3, out_h, out_w) tensor scaled to [0, 1].
inline Tensor<float> image_to_tensor(const Image& img, const CropRect& crop, std::size_t out_h, std::size_t out_w) {
  require(img.channels == 3, "expected an RGB image");
  if (crop.width == 0 || crop.height == 0 || crop.x + crop.width > img.width || crop.y + crop.height > img.height)
    fail(ErrorKind::invalid_argument, "crop rectangle " + std::to_string(crop.width) + "x" + std::to_string(crop.height) + "+" +
                                          std::to_string(crop.x) + "+" + std::to_string(crop.y) + " outside " +
                                          std::to_string(img.width) + "x" + std::to_string(img.height) + " image");
  Tensor<float> out({3, out_h, out_w});
  const double sy = static_cast<double>(crop.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(crop.width) / static_cast<double>(out_w);
  auto sample_axis = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    sample_axis((static_cast<double>(y) + 0.5) * sy - 0.5, crop.height, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      sample_axis((static_cast<double>(x) + 0.5) * sx - 0.5, crop.width, x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const double a = img.at(crop.x + x0, crop.y + y0, c), b = img.at(crop.x + x1, crop.y + y0, c);
        const double d = img.at(crop.x + x0, crop.y + y1, c), e = img.at(crop.x + x1, crop.y + y1, c);
        const double top = a + (b - a) * fx, bottom = d + (e - d) * fx;
        out[(c * out_h + y) * out_w + x] = static_cast<float>((top + (bottom - top) * fy) / 255.0);
      }
    }
  }
  return out;
}

/// Loads a P6 frame, crops (centered square when `crop` is empty) and
/// resizes to size x size.
inline Tensor<float> load_image(const std::filesystem::path& path, std::optional<CropRect> crop = std::nullopt,
                                std::size_t size = 256) {
  const Image img = read_pnm(path);
  if (img.channels != 3) fail(ErrorKind::format, path.string() + ": expected a colour (P6) frame");
  return image_to_tensor(img, crop.value_or(default_crop(img.width, img.height)), size, size);
}

/// (3, H, W) tensor in [0, 1] to an RGB image, rounded and clamped.
inline Image tensor_to_image(const Tensor<float>& t) {
  require(t.rank() == 3 && t.dim(0) == 3, "expected a (3, H, W) tensor, got " + to_string(t.shape()));
  const std::size_t h = t.dim(1), w = t.dim(2);
  Image img(w, h, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        img.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(t[(c * h + y) * w + x], 0.0f, 1.0f) * 255.0f));
  return img;
}

}  // namespace fsdrive
