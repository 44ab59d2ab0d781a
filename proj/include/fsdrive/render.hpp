#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "fsdrive/dataset.hpp"
#include "fsdrive/error.hpp"
#include "fsdrive/image.hpp"

// Overlay layout (pixel coordinates, origin top-left):
//   rows 0..255     camera frame, copied unchanged
//   rows 256..355   status strip on black
//     steering dial: pivot (50, 350), needle length 45; 0 deg points straight
//       up, +90 points left, -90 points right
//     four bar tracks at x 112..239 (128 px = full scale 256): brake,
//       throttle, left motor, right motor, starting at rows 262, 286, 310, 334;
//       actual bar 10 px tall, predicted bar 6 px tall directly below it
//     clamp marker: red 6x6 square at x 250..255, rows 256..261
// Actual values are white, predicted values amber.

namespace fsdrive {

inline constexpr std::size_t kOverlayWidth = 256;
inline constexpr std::size_t kOverlayCameraHeight = 256;
inline constexpr std::size_t kOverlayStripHeight = 100;
inline constexpr std::size_t kOverlayHeight = kOverlayCameraHeight + kOverlayStripHeight;

struct OverlayGeometry {
  static constexpr int dial_x = 50;
  static constexpr int dial_y = 350;
  static constexpr int needle_length = 45;
  static constexpr int bar_x = 112;
  static constexpr int bar_width = 128;
  static constexpr std::array<int, 4> bar_rows{262, 286, 310, 334};
  static constexpr int actual_height = 10;
  static constexpr int predicted_height = 6;
  static constexpr int marker_x = 250;
  static constexpr int marker_y = 256;
  static constexpr int marker_size = 6;
};

using Rgb = std::array<std::uint8_t, 3>;
inline constexpr Rgb kActualColor{255, 255, 255};
inline constexpr Rgb kPredictedColor{255, 191, 0};
inline constexpr Rgb kTrackColor{48, 48, 48};
inline constexpr Rgb kMarkerColor{255, 0, 0};

/// Model outputs shown next to the actuals; any subset may be present.
struct Prediction {
  std::optional<double> steering;
  std::optional<double> brake;
  std::optional<double> throttle;
};

namespace detail {

inline void put(Image& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= static_cast<int>(img.width) || y >= static_cast<int>(img.height)) return;
  for (std::size_t k = 0; k < 3; ++k) img.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), k) = c[k];
}

inline void fill_rect(Image& img, int x, int y, int w, int h, const Rgb& c) {
  for (int yy = y; yy < y + h; ++yy)
    for (int xx = x; xx < x + w; ++xx) put(img, xx, yy, c);
}

/// Samples the needle densely from the pivot and rounds each point.
inline void draw_needle(Image& img, double steering_deg, const Rgb& c) {
  constexpr double kPi = 3.14159265358979323846;
  const double a = steering_deg * kPi / 180.0;
  const double dx = -std::sin(a), dy = -std::cos(a);
  const int steps = OverlayGeometry::needle_length * 4;
  for (int i = 0; i <= steps; ++i) {
    const double t = OverlayGeometry::needle_length * static_cast<double>(i) / steps;
    put(img, OverlayGeometry::dial_x + static_cast<int>(std::lround(t * dx)), OverlayGeometry::dial_y + static_cast<int>(std::lround(t * dy)), c);
  }
}

inline int bar_length(double value) {
  return static_cast<int>(std::lround(value / kSignalMax * OverlayGeometry::bar_width));
}

}  // namespace detail

/// Composes the camera frame over the status strip. Values outside their
/// ranges are clamped and flagged by the corner marker.
inline Image render_overlay(const Image& frame, const TelemetryRecord& actual, const std::optional<Prediction>& predicted = std::nullopt) {
  if (frame.width != kOverlayWidth || frame.height != kOverlayCameraHeight || frame.channels != 3)
    fail(ErrorKind::shape_mismatch, "overlay needs a 256x256 RGB frame, got " + std::to_string(frame.width) + "x" +
                                        std::to_string(frame.height) + "x" + std::to_string(frame.channels));
  Image out(kOverlayWidth, kOverlayHeight, 3, 0);
  std::copy(frame.pixels.begin(), frame.pixels.end(), out.pixels.begin());

  bool clamped = false;
  auto clamp = [&](double v, double lo, double hi) {
    if (!(v >= lo && v <= hi)) clamped = true;
    return std::isnan(v) ? lo : std::clamp(v, lo, hi);
  };

  using G = OverlayGeometry;
  const std::array<double, 4> bars{clamp(actual.brake, 0, kSignalMax), clamp(actual.throttle, 0, kSignalMax),
                                   clamp(actual.left_motor_speed, 0, kSignalMax), clamp(actual.right_motor_speed, 0, kSignalMax)};
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const int y = G::bar_rows[i];
    detail::fill_rect(out, G::bar_x, y, G::bar_width, G::actual_height + G::predicted_height, kTrackColor);
    detail::fill_rect(out, G::bar_x, y, detail::bar_length(bars[i]), G::actual_height, kActualColor);
  }
  if (predicted) {
    if (predicted->brake)
      detail::fill_rect(out, G::bar_x, G::bar_rows[0] + G::actual_height, detail::bar_length(clamp(*predicted->brake, 0, kSignalMax)),
                        G::predicted_height, kPredictedColor);
    if (predicted->throttle)
      detail::fill_rect(out, G::bar_x, G::bar_rows[1] + G::actual_height, detail::bar_length(clamp(*predicted->throttle, 0, kSignalMax)),
                        G::predicted_height, kPredictedColor);
    if (predicted->steering) detail::draw_needle(out, clamp(*predicted->steering, -kSteeringMax, kSteeringMax), kPredictedColor);
  }
  detail::draw_needle(out, clamp(actual.steering, -kSteeringMax, kSteeringMax), kActualColor);
  if (clamped) detail::fill_rect(out, G::marker_x, G::marker_y, G::marker_size, G::marker_size, kMarkerColor);
  return out;
}

/// Frames that are not 256x256 are scaled with nearest-neighbour sampling.
inline Image overlay_frame(const Tensor<float>& image) {
  Image src = tensor_to_image(image);
  if (src.width == kOverlayWidth && src.height == kOverlayCameraHeight) return src;
  Image out(kOverlayWidth, kOverlayCameraHeight, 3);
  for (std::size_t y = 0; y < kOverlayCameraHeight; ++y)
    for (std::size_t x = 0; x < kOverlayWidth; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = src.at(x * src.width / kOverlayWidth, y * src.height / kOverlayCameraHeight, c);
  return out;
}

inline std::string sim_file_name(std::size_t number) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sim_%06zu.ppm", number);
  return buf;
}

/// Writes sim_000001.ppm onward, one per pair in order. `predictions` is
/// empty or one per pair.
inline std::size_t render_sequence(std::span<const FramePair> pairs, std::span<const Prediction> predictions, const std::filesystem::path& dir) {
  if (!predictions.empty() && predictions.size() != pairs.size())
    fail(ErrorKind::invalid_argument, std::to_string(predictions.size()) + " predictions for " + std::to_string(pairs.size()) + " frames");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) fail(ErrorKind::io, "cannot create output directory " + dir.string());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto pred = predictions.empty() ? std::nullopt : std::optional<Prediction>(predictions[i]);
    write_pnm(render_overlay(overlay_frame(pairs[i].image), pairs[i].record, pred), dir / sim_file_name(i + 1));
  }
  return pairs.size();
}

}  // namespace fsdrive
