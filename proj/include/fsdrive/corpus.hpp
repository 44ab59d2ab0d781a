#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fsdrive/dataset.hpp"
#include "fsdrive/error.hpp"
#include "fsdrive/image.hpp"

// On-disk corpus layout:
//   telemetry.csv            telemetry log with the standard header
//   frames/frame_000123.ppm  one P6 file per video frame
//   frames/index.csv         frame_index,timestamp_ms
// and the manifest written by prep, which names the inputs and lists split
// membership by (log row, frame index).

namespace fsdrive {

inline constexpr const char* kFrameIndexHeader = "frame_index,timestamp_ms";
inline constexpr const char* kManifestMagic = "# fsdrive manifest v1";

inline std::string frame_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%06zu.ppm", index);
  return buf;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::input_not_found, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::io, "failed writing " + path.string());
}

/// Shortest round-trip decimal form of a double.
inline std::string format_number(double v) {
  char buf[64];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string telemetry_to_csv(std::span<const TelemetryRecord> records) {
  std::string out = std::string(kTelemetryHeader) + "\n";
  for (const auto& r : records)
    out += format_number(r.timestamp_ms) + "," + format_number(r.steering) + "," + format_number(r.brake) + "," +
           format_number(r.throttle) + "," + format_number(r.left_motor_speed) + "," + format_number(r.right_motor_speed) + "\n";
  return out;
}

/// Parses frames/index.csv into timestamps ordered by frame index.
inline std::vector<double> parse_frame_index(std::string_view csv) {
  const auto lines = detail::split_lines(csv);
  if (lines.empty() || detail::trim(lines[0]) != kFrameIndexHeader)
    fail(ErrorKind::format, "frame index: missing header '" + std::string(kFrameIndexHeader) + "'");
  std::vector<double> ts;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto line = detail::trim(lines[i]);
    if (line.empty()) continue;
    const auto comma = line.find(',');
    double idx = 0, t = 0;
    if (comma == std::string_view::npos || !detail::parse_double(line.substr(0, comma), idx) ||
        !detail::parse_double(line.substr(comma + 1), t) || idx != static_cast<double>(ts.size()))
      fail(ErrorKind::format, "frame index: bad row " + std::to_string(i) + " '" + std::string(line) + "'");
    ts.push_back(t);
  }
  if (ts.empty()) fail(ErrorKind::format, "frame index: no frames");
  return ts;
}

/// Writes a synthetic dataset in corpus layout. Each frame is stamped 5 ms
/// after its record, so nearest pairing recovers the generator's pairs.
inline void write_synth_corpus(const SynthTrackDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  std::vector<TelemetryRecord> records;
  std::string index = std::string(kFrameIndexHeader) + "\n";
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    TelemetryRecord raw = ds.pairs[i].record;
    raw.left_motor_speed *= kMotorRawMax / kSignalMax;
    raw.right_motor_speed *= kMotorRawMax / kSignalMax;
    records.push_back(raw);
    index += std::to_string(i) + "," + format_number(raw.timestamp_ms + 5.0) + "\n";
    write_pnm(tensor_to_image(ds.pairs[i].image), dir / "frames" / frame_file_name(i));
  }
  write_text_file(dir / "telemetry.csv", telemetry_to_csv(records));
  write_text_file(dir / "frames" / "index.csv", index);
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::size_t log_row = 0;
  std::size_t frame_index = 0;
};

struct Manifest {
  std::filesystem::path telemetry;
  std::filesystem::path frames;
  std::optional<CropRect> crop;
  std::size_t image_size = kFrameSizeDefault;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<ManifestEntry>> splits;  // train, validation, test, dropped
  std::vector<std::size_t> skipped_rows;
  std::size_t clamped_values = 0;

  static constexpr std::size_t kFrameSizeDefault = 256;
};

inline std::string crop_to_string(const std::optional<CropRect>& crop) {
  if (!crop) return "center";
  return std::to_string(crop->x) + "," + std::to_string(crop->y) + "," + std::to_string(crop->width) + "," + std::to_string(crop->height);
}

inline std::optional<CropRect> parse_crop(const std::string& text) {
  if (text == "center") return std::nullopt;
  CropRect r;
  char extra = 0;
  if (std::sscanf(text.c_str(), "%zu,%zu,%zu,%zu%c", &r.x, &r.y, &r.width, &r.height, &extra) != 4)
    fail(ErrorKind::invalid_argument, "crop must be 'center' or x,y,width,height; got '" + text + "'");
  return r;
}

inline const std::vector<std::string>& manifest_split_names() {
  static const std::vector<std::string> names{"train", "validation", "test", "dropped"};
  return names;
}

inline std::string manifest_to_text(const Manifest& m) {
  std::ostringstream os;
  os << kManifestMagic << "\n";
  os << "telemetry\t" << m.telemetry.generic_string() << "\n";
  os << "frames\t" << m.frames.generic_string() << "\n";
  os << "crop\t" << crop_to_string(m.crop) << "\n";
  os << "size\t" << m.image_size << "\n";
  os << "seed\t" << m.seed << "\n";
  os << "clamped\t" << m.clamped_values << "\n";
  for (auto row : m.skipped_rows) os << "skipped\t" << row << "\n";
  os << "split\tlog_row\tframe_index\n";
  for (const auto& name : manifest_split_names()) {
    auto it = m.splits.find(name);
    if (it == m.splits.end()) continue;
    for (const auto& e : it->second) os << name << "\t" << e.log_row << "\t" << e.frame_index << "\n";
  }
  return os.str();
}

inline Manifest parse_manifest(std::string_view text) {
  const auto lines = detail::split_lines(text);
  if (lines.empty() || detail::trim(lines[0]) != kManifestMagic) fail(ErrorKind::format, "not a manifest (missing header line)");
  Manifest m;
  bool in_table = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string line(detail::trim(lines[i]));
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string part; std::getline(ls, part, '\t');) f.push_back(part);
    auto bad = [&] { fail(ErrorKind::format, "manifest line " + std::to_string(i + 1) + ": '" + line + "'"); };
    auto number = [&](const std::string& s) {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size()) bad();
      return v;
    };
    if (in_table) {
      if (f.size() != 3) bad();
      const auto& names = manifest_split_names();
      if (std::find(names.begin(), names.end(), f[0]) == names.end()) bad();
      m.splits[f[0]].push_back({number(f[1]), number(f[2])});
      continue;
    }
    if (f.size() == 3 && f[0] == "split") {
      in_table = true;
    } else if (f.size() != 2) {
      bad();
    } else if (f[0] == "telemetry") {
      m.telemetry = f[1];
    } else if (f[0] == "frames") {
      m.frames = f[1];
    } else if (f[0] == "crop") {
      m.crop = parse_crop(f[1]);
    } else if (f[0] == "size") {
      m.image_size = number(f[1]);
    } else if (f[0] == "seed") {
      m.seed = number(f[1]);
    } else if (f[0] == "clamped") {
      m.clamped_values = number(f[1]);
    } else if (f[0] == "skipped") {
      m.skipped_rows.push_back(number(f[1]));
    } else {
      bad();
    }
  }
  if (!in_table) fail(ErrorKind::format, "manifest has no split table");
  return m;
}

// ---------------------------------------------------------------------------
// Preparation and loading

struct PairedLog {
  TelemetryLog log;                 // records already scaled
  std::vector<std::size_t> frames;  // nearest frame per record
  std::size_t clamped_values = 0;
};

inline PairedLog pair_corpus(const std::filesystem::path& telemetry, const std::filesystem::path& frames_dir) {
  PairedLog out;
  out.log = parse_telemetry(read_text_file(telemetry));
  ScaleStats stats;
  std::vector<double> record_ts;
  for (auto& r : out.log.records) {
    r = scale_signals(r, &stats);
    record_ts.push_back(r.timestamp_ms);
  }
  out.clamped_values = stats.clamped;
  const auto frame_ts = parse_frame_index(read_text_file(frames_dir / "index.csv"));
  out.frames = pair_nearest(record_ts, frame_ts);
  return out;
}

/// parse, scale, pair and split; the manifest records everything needed to
/// rebuild the same pairs.
inline Manifest prepare_manifest(const std::filesystem::path& telemetry, const std::filesystem::path& frames_dir,
                                 std::optional<CropRect> crop, std::size_t image_size, std::uint64_t seed) {
  const auto paired = pair_corpus(telemetry, frames_dir);
  Manifest m;
  m.telemetry = telemetry;
  m.frames = frames_dir;
  m.crop = crop;
  m.image_size = image_size;
  m.seed = seed;
  m.skipped_rows = paired.log.skipped_rows;
  m.clamped_values = paired.clamped_values;
  const auto split = split_60_20_20(paired.log.records.size(), seed);
  auto fill = [&](const std::string& name, const std::vector<std::size_t>& idx) {
    auto& list = m.splits[name];
    for (auto i : idx) list.push_back({paired.log.rows[i], paired.frames[i]});
  };
  fill("train", split.train);
  fill("validation", split.validation);
  fill("test", split.test);
  fill("dropped", split.dropped);
  return m;
}

/// Loads the frame pairs of one manifest split.
inline std::vector<FramePair> load_split(const Manifest& m, const std::string& split) {
  auto it = m.splits.find(split);
  if (it == m.splits.end()) fail(ErrorKind::invalid_argument, "manifest has no '" + split + "' split");
  const auto log = parse_telemetry(read_text_file(m.telemetry));
  std::map<std::size_t, std::size_t> by_row;
  for (std::size_t i = 0; i < log.rows.size(); ++i) by_row[log.rows[i]] = i;
  std::vector<FramePair> out;
  out.reserve(it->second.size());
  for (const auto& e : it->second) {
    auto r = by_row.find(e.log_row);
    if (r == by_row.end()) fail(ErrorKind::format, "manifest refers to missing telemetry row " + std::to_string(e.log_row));
    FramePair p;
    p.record = scale_signals(log.records[r->second]);
    p.log_row = e.log_row;
    p.frame_index = e.frame_index;
    p.image = load_image(m.frames / frame_file_name(e.frame_index), m.crop, m.image_size);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace fsdrive
