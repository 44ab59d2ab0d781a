#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/graph.hpp"
#include "fsdrive/model.hpp"

// Checkpoint layout (all integers little-endian):
//   "FSPT" | u32 version | u32 n + n bytes model text | u64 epoch | u64 seed |
//   u32 tensor count | per tensor: u32 element count + float32 values
// Tensors follow Model::parameters(true) order, running statistics included.

namespace fsdrive {

inline constexpr char kCheckpointMagic[4] = {'F', 'S', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes.insert(bytes.end(), p, p + n); }

  std::vector<char> bytes;
};

class ByteReader {
public:
  explicit ByteReader(const std::vector<char>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(take(4)); }
  std::uint64_t u64() { return take(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      fail(ErrorKind::truncated, "checkpoint truncated at byte " + std::to_string(pos_) + " (needed " + std::to_string(n) + " more)");
  }
  std::uint64_t take(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> serialize_checkpoint(Model<float>& model) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const std::string text = to_text(model.spec());
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text.data(), text.size());
  w.u64(model.epoch);
  w.u64(model.seed());
  const auto params = model.parameters(true);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.value->size()));
    for (float v : p.value->values()) w.f32(v);
  }
  return std::move(w.bytes);
}

inline Model<float> deserialize_checkpoint(const std::vector<char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    fail(ErrorKind::bad_magic, "bad magic: not a checkpoint file");
  detail::ByteReader r(bytes);
  r.raw(4);
  const auto version = r.u32();
  if (version > kCheckpointVersion || version == 0)
    fail(ErrorKind::unsupported_version, "checkpoint version " + std::to_string(version) + " not supported (max " +
                                             std::to_string(kCheckpointVersion) + ")");
  const auto text_len = r.u32();
  const ModelSpec spec = parse_model_spec(r.raw(text_len));
  const auto epoch = r.u64();
  const auto seed = r.u64();
  Model<float> model(spec, seed);
  model.epoch = epoch;
  auto params = model.parameters(true);
  const auto count = r.u32();
  if (count != params.size())
    fail(ErrorKind::format, "checkpoint holds " + std::to_string(count) + " tensors, model needs " + std::to_string(params.size()));
  for (auto& p : params) {
    const auto n = r.u32();
    if (n != p.value->size())
      fail(ErrorKind::format, "checkpoint tensor " + p.name + " has " + std::to_string(n) + " values, expected " +
                                  std::to_string(p.value->size()));
    for (auto& v : p.value->values()) v = r.f32();
  }
  if (!r.at_end()) fail(ErrorKind::format, "trailing bytes after checkpoint payload");
  return model;
}

inline void save_checkpoint(Model<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::io, "failed writing checkpoint " + path.string());
}

inline Model<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::input_not_found, "cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace fsdrive
