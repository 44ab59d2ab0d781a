#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/rng.hpp"
#include "fsdrive/tensor.hpp"

namespace fsdrive {

inline constexpr double kMotorRawMax = 20000.0;
inline constexpr double kSignalMax = 256.0;  // brake, throttle and scaled motor speed
inline constexpr double kSteeringMax = 90.0;
inline constexpr double kDefaultShiftDegreesPerPixel = 0.15;
inline constexpr double kMixedNormalFraction = 0.15;
inline constexpr const char* kTelemetryHeader = "timestamp,steering,brake,throttle,left_motor_speed,right_motor_speed";

/// One vehicle data frame. Steering is in degrees, positive to the left.
struct TelemetryRecord {
  double timestamp_ms = 0.0;
  double steering = 0.0;
  double brake = 0.0;
  double throttle = 0.0;
  double left_motor_speed = 0.0;
  double right_motor_speed = 0.0;

  friend bool operator==(const TelemetryRecord&, const TelemetryRecord&) = default;
};

/// A camera frame joined to its nearest telemetry record.
struct FramePair {
  Tensor<float> image;  // (3, H, W) in [0, 1]
  TelemetryRecord record;
  std::size_t log_row = 0;
  std::size_t frame_index = 0;
};

// ---------------------------------------------------------------------------
// Telemetry parsing and scaling

struct TelemetryLog {
  std::vector<TelemetryRecord> records;
  std::vector<std::size_t> rows;          // 1-based data row of each record (header excluded)
  std::vector<std::size_t> skipped_rows;  // 1-based data rows rejected as malformed
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace detail

/// Parses telemetry CSV. Malformed rows (wrong field count, non-numeric
/// fields) are skipped and reported by row number.
inline TelemetryLog parse_telemetry(std::string_view csv) {
  const auto lines = detail::split_lines(csv);
  std::size_t first = 0;
  while (first < lines.size() && detail::trim(lines[first]).empty()) ++first;
  if (first == lines.size()) fail(ErrorKind::format, "telemetry: no valid rows (empty input)");
  std::string header;
  for (char c : detail::trim(lines[first]))
    if (c != ' ') header.push_back(c);
  if (header != kTelemetryHeader) fail(ErrorKind::format, "telemetry: missing header '" + std::string(kTelemetryHeader) + "'");

  TelemetryLog log;
  std::size_t row = 0;
  for (std::size_t i = first + 1; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty()) continue;
    ++row;
    std::array<double, 6> v{};
    std::size_t fields = 0, start = 0;
    bool ok = true;
    while (ok) {
      const auto comma = line.find(',', start);
      const auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      if (fields >= v.size() || !detail::parse_double(field, v[fields])) ok = false;
      ++fields;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (!ok || fields != v.size()) {
      log.skipped_rows.push_back(row);
      continue;
    }
    log.records.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
    log.rows.push_back(row);
  }
  if (log.records.empty()) fail(ErrorKind::format, "telemetry: no valid rows");
  return log;
}

struct ScaleStats {
  std::size_t clamped = 0;  // individual values pulled back into range
};

/// Maps raw motor speeds [0, 20000] to [0, 256]; clamps every field into its
/// declared range, counting each clamp.
inline TelemetryRecord scale_signals(const TelemetryRecord& raw, ScaleStats* stats = nullptr) {
  auto clamp_count = [&](double v, double lo, double hi) {
    if (v < lo || v > hi) {
      if (stats) ++stats->clamped;
      return std::clamp(v, lo, hi);
    }
    return v;
  };
  TelemetryRecord r = raw;
  r.steering = clamp_count(raw.steering, -kSteeringMax, kSteeringMax);
  r.brake = clamp_count(raw.brake, 0.0, kSignalMax);
  r.throttle = clamp_count(raw.throttle, 0.0, kSignalMax);
  r.left_motor_speed = clamp_count(raw.left_motor_speed, 0.0, kMotorRawMax) * kSignalMax / kMotorRawMax;
  r.right_motor_speed = clamp_count(raw.right_motor_speed, 0.0, kMotorRawMax) * kSignalMax / kMotorRawMax;
  return r;
}

// ---------------------------------------------------------------------------
// Nearest-timestamp pairing

/// Index of the frame nearest in time to each record timestamp. Both inputs
/// sorted ascending; ties go to the earlier frame.
inline std::vector<std::size_t> pair_nearest(std::span<const double> record_ts, std::span<const double> frame_ts) {
  require(!record_ts.empty() && !frame_ts.empty(), "pair_nearest needs records and frames");
  require(std::is_sorted(frame_ts.begin(), frame_ts.end()), "frame timestamps must be sorted");
  require(std::is_sorted(record_ts.begin(), record_ts.end()), "record timestamps must be sorted");
  std::vector<std::size_t> out;
  out.reserve(record_ts.size());
  for (double t : record_ts) {
    const auto it = std::lower_bound(frame_ts.begin(), frame_ts.end(), t);
    std::size_t idx;
    if (it == frame_ts.begin()) {
      idx = 0;
    } else if (it == frame_ts.end()) {
      idx = frame_ts.size() - 1;
    } else {
      const auto hi = static_cast<std::size_t>(it - frame_ts.begin());
      // Earlier frame wins ties; also step back over duplicate timestamps.
      idx = (t - frame_ts[hi - 1] <= *it - t) ? hi - 1 : hi;
    }
    while (idx > 0 && frame_ts[idx - 1] == frame_ts[idx]) --idx;
    out.push_back(idx);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::vector<std::size_t> dropped;
  std::uint64_t seed = 0;
};

/// Seeded shuffle of [0, n) cut into floor(0.6n) / floor(0.2n) / floor(0.2n);
/// the remaining at most two items are dropped.
inline SplitIndices split_60_20_20(std::size_t n, std::uint64_t seed) {
  if (n < 5) fail(ErrorKind::invalid_argument, "split needs at least 5 items, got " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  const std::size_t n_train = n * 3 / 5, n_val = n / 5, n_test = n / 5;
  SplitIndices s;
  s.seed = seed;
  auto take = [&](std::size_t from, std::size_t count) {
    return std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(from), idx.begin() + static_cast<std::ptrdiff_t>(from + count));
  };
  s.train = take(0, n_train);
  s.validation = take(n_train, n_val);
  s.test = take(n_train + n_val, n_test);
  s.dropped = take(n_train + n_val + n_test, n - n_train - n_val - n_test);
  return s;
}

template <typename Item>
std::vector<Item> select(std::span<const Item> items, std::span<const std::size_t> indices) {
  std::vector<Item> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(items[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Discretized steering

enum class SteeringClass : int { left = 1, straight = 2, right = 3 };

inline SteeringClass discretize_steering(double steering) {
  if (steering > 10.0) return SteeringClass::left;
  if (steering < -10.0) return SteeringClass::right;
  return SteeringClass::straight;
}

inline std::array<float, 3> one_hot(SteeringClass c) {
  std::array<float, 3> v{};
  v[static_cast<std::size_t>(c) - 1] = 1.0f;
  return v;
}

inline const char* class_name(SteeringClass c) {
  switch (c) {
    case SteeringClass::left: return "left";
    case SteeringClass::straight: return "straight";
    case SteeringClass::right: return "right";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Shift-translation augmentation

/// Translates the frame horizontally by `shift_px` (positive moves content
/// right), fills vacated columns with the per-channel mean of the original
/// frame, and corrects steering by -k * shift_px, clamped to +-90.
inline FramePair shift_augment(const FramePair& pair, int shift_px, double k = kDefaultShiftDegreesPerPixel) {
  const Tensor<float>& src = pair.image;
  require(src.rank() == 3, "shift_augment expects a (3, H, W) frame");
  const std::size_t ch = src.dim(0), h = src.dim(1), w = src.dim(2);
  require(static_cast<std::size_t>(std::abs(shift_px)) < w, "shift of " + std::to_string(shift_px) + " px exceeds frame width");
  FramePair out = pair;
  out.record.steering = std::clamp(pair.record.steering - k * shift_px, -kSteeringMax, kSteeringMax);
  if (shift_px == 0) return out;
  for (std::size_t c = 0; c < ch; ++c) {
    const float* plane = src.data() + c * h * w;
    double sum = 0.0;
    for (std::size_t i = 0; i < h * w; ++i) sum += plane[i];
    const float mean = static_cast<float>(sum / static_cast<double>(h * w));
    float* dst = out.image.data() + c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto from = static_cast<std::ptrdiff_t>(x) - shift_px;
        dst[y * w + x] = (from >= 0 && from < static_cast<std::ptrdiff_t>(w)) ? plane[y * w + static_cast<std::size_t>(from)] : mean;
      }
    }
  }
  return out;
}

/// round(0.15 * size) normal items plus the remainder shifted, each sampled
/// without replacement, then shuffled together.
template <typename Item>
std::vector<Item> build_mixed_set(std::span<const Item> normal, std::span<const Item> shifted, std::size_t size, std::uint64_t seed) {
  const auto n_normal = static_cast<std::size_t>(std::llround(kMixedNormalFraction * static_cast<double>(size)));
  const std::size_t n_shifted = size - n_normal;
  if (normal.size() < n_normal || shifted.size() < n_shifted)
    fail(ErrorKind::invalid_argument, "mixed set of " + std::to_string(size) + " needs " + std::to_string(n_normal) + " normal and " +
                                          std::to_string(n_shifted) + " shifted items; have " + std::to_string(normal.size()) +
                                          " and " + std::to_string(shifted.size()));
  Rng rng(seed);
  auto sample = [&](std::span<const Item> from, std::size_t count, std::vector<Item>& into) {
    std::vector<std::size_t> idx(from.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
    for (std::size_t i = 0; i < count; ++i) into.push_back(from[idx[i]]);
  };
  std::vector<Item> out;
  out.reserve(size);
  sample(normal, n_normal, out);
  sample(shifted, n_shifted, out);
  rng.shuffle(std::span<Item>(out));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic track frames

struct SynthTrackDataset {
  std::vector<FramePair> pairs;
  std::vector<double> offsets;  // vanishing-point offset in pixels, positive to the right
  std::size_t image_size = 0;
  std::uint64_t seed = 0;
};

/// Steering implied by a vanishing-point offset: -90 * offset / half-width, clamped.
inline double synth_steering(double offset_px, std::size_t image_size) {
  const double half = static_cast<double>(image_size) / 2.0;
  return std::clamp(-kSteeringMax * offset_px / half, -kSteeringMax, kSteeringMax);
}

/// Renders one frame: sky and ground split at the horizon, and two rails of
/// cone-coloured dots running from fixed bottom anchors to a vanishing point
/// displaced horizontally by `offset_px`. Dots are anti-aliased discs whose
/// radius grows towards the camera.
inline Tensor<float> render_track_frame(double offset_px, std::size_t size, double brightness = 1.0) {
  const double s = static_cast<double>(size);
  const double horizon = 0.35 * s;
  const double vx = s / 2.0 + offset_px;
  const std::array<double, 2> anchors{0.08 * s, 0.92 * s};
  struct Dot {
    double x, y, r;
  };
  std::vector<Dot> dots;
  constexpr int kDotsPerRail = 12;
  for (double ax : anchors) {
    for (int j = 0; j < kDotsPerRail; ++j) {
      // perspective spacing: dense near the horizon
      const double t = std::pow((j + 0.5) / kDotsPerRail, 1.6);
      const double y = horizon + t * (s - 1.0 - horizon);
      const double x = vx + t * (ax - vx);
      dots.push_back({x, y, std::max(0.6, 0.035 * s * t)});
    }
  }
  static constexpr std::array<float, 3> sky{0.55f, 0.65f, 0.80f}, ground{0.30f, 0.31f, 0.30f}, cone{1.00f, 0.50f, 0.05f};
  Tensor<float> img({3, size, size});
  for (std::size_t y = 0; y < size; ++y) {
    const double py = static_cast<double>(y) + 0.5;
    const double sky_cover = std::clamp(horizon - static_cast<double>(y), 0.0, 1.0);
    for (std::size_t x = 0; x < size; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      double cover = 0.0;
      for (const auto& d : dots) {
        const double dist = std::hypot(px - d.x, py - d.y);
        cover = std::max(cover, std::clamp(d.r + 0.5 - dist, 0.0, 1.0));
      }
      for (std::size_t c = 0; c < 3; ++c) {
        const double base = sky_cover * sky[c] + (1.0 - sky_cover) * ground[c];
        const double v = brightness * (cover * cone[c] + (1.0 - cover) * base);
        img[(c * size + y) * size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

/// Desk-scale labelled frames. Offsets are uniform over [-size/2, size/2];
/// steering follows synth_steering and the pedal/motor channels are smooth
/// functions of |steering|. Records are 125 ms apart.
inline SynthTrackDataset synth_track_dataset(std::size_t n, std::size_t image_size, std::uint64_t seed) {
  require(n >= 10, "synthetic dataset needs at least 10 frames");
  require(image_size >= 16, "synthetic frames must be at least 16 px");
  Rng rng(seed);
  SynthTrackDataset ds;
  ds.image_size = image_size;
  ds.seed = seed;
  const double half = static_cast<double>(image_size) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double offset = rng.uniform(-half, half);
    const double brightness = rng.uniform(0.9, 1.1);
    const double steer = synth_steering(offset, image_size);
    const double turn = std::abs(steer) / kSteeringMax;
    FramePair p;
    p.image = render_track_frame(offset, image_size, brightness);
    p.record.timestamp_ms = 125.0 * static_cast<double>(i);
    p.record.steering = steer;
    p.record.throttle = 200.0 - 110.0 * turn;
    p.record.brake = 180.0 * turn * turn;
    const double base = 160.0 - 60.0 * turn;
    p.record.left_motor_speed = base * (1.0 - steer / 400.0);
    p.record.right_motor_speed = base * (1.0 + steer / 400.0);
    p.log_row = i + 1;
    p.frame_index = i;
    ds.pairs.push_back(std::move(p));
    ds.offsets.push_back(offset);
  }
  return ds;
}

}  // namespace fsdrive
