#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/graph.hpp"

// The named architectures. A conv block is conv -> batchnorm -> relu ->
// maxpool(2, stride 2); the pool is left out of a block whose conv output is
// already smaller than the pool window. Hidden FC layers are followed by relu.

namespace fsdrive {

inline constexpr std::size_t kFrameSize = 256;
inline constexpr double kSteeringLimit = 90.0;
inline constexpr double kPedalScale = 256.0;
inline constexpr std::size_t kPoolWindow = 2;

struct Architecture {
  std::vector<std::size_t> filters;
  std::vector<std::size_t> strides;
  std::vector<std::size_t> depths;
  std::vector<std::size_t> hidden;  // hidden FC widths
};

inline const std::vector<std::string>& discrete_model_names() {
  static const std::vector<std::string> names{"1CL-1FC", "2CL-1FC", "1CL-2FC", "2CL-2FC", "3CL-2FC"};
  return names;
}

inline const std::vector<std::string>& realvalue_model_names() {
  static const std::vector<std::string> names{"3CL-2FC", "3CL-3FC", "4CL-3FC"};
  return names;
}

namespace detail {

inline std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += (out.empty() ? "" : ", ") + n;
  return out;
}

inline Architecture conv_stack(std::size_t convs) {
  static const std::array<std::size_t, 4> filters{5, 5, 3, 3}, strides{2, 2, 1, 1}, depths{8, 16, 32, 48};
  Architecture a;
  for (std::size_t i = 0; i < convs; ++i) {
    a.filters.push_back(filters[i]);
    a.strides.push_back(strides[i]);
    a.depths.push_back(depths[i]);
  }
  return a;
}

class SpecBuilder {
public:
  explicit SpecBuilder(std::string name) { spec_.name = std::move(name); }

  std::string input(const std::string& name, Shape shape) {
    LayerSpec n;
    n.kind = LayerKind::input;
    n.name = name;
    n.shape = std::move(shape);
    return add(std::move(n));
  }

  std::string conv_block(const std::string& from, std::size_t index, std::size_t filter, std::size_t stride, std::size_t depth,
                         bool pool = true) {
    const auto id = std::to_string(index);
    LayerSpec c;
    c.kind = LayerKind::conv;
    c.name = "conv" + id;
    c.inputs = {from};
    c.filter = filter;
    c.stride = stride;
    c.depth = depth;
    auto last = add(std::move(c));
    last = simple(LayerKind::batchnorm, "bn" + id, last);
    last = simple(LayerKind::relu, "relu" + id, last);
    if (!pool) return last;
    LayerSpec p;
    p.kind = LayerKind::maxpool;
    p.name = "pool" + id;
    p.inputs = {last};
    p.window = kPoolWindow;
    p.stride = kPoolWindow;
    return add(std::move(p));
  }

  std::string simple(LayerKind kind, const std::string& name, const std::string& from) {
    LayerSpec n;
    n.kind = kind;
    n.name = name;
    n.inputs = {from};
    return add(std::move(n));
  }

  std::string linear(const std::string& name, const std::string& from, std::size_t width) {
    LayerSpec n;
    n.kind = LayerKind::linear;
    n.name = name;
    n.inputs = {from};
    n.width = width;
    return add(std::move(n));
  }

  std::string concat(const std::string& name, std::vector<std::string> from) {
    LayerSpec n;
    n.kind = LayerKind::concat;
    n.name = name;
    n.inputs = std::move(from);
    return add(std::move(n));
  }

  std::string add(LayerSpec n) {
    spec_.nodes.push_back(std::move(n));
    return spec_.nodes.back().name;
  }

  /// Hidden FC layers (each followed by relu), then the output layer.
  std::string fc_stack(std::string from, const std::vector<std::size_t>& hidden, std::size_t outputs) {
    std::size_t k = 1;
    for (auto w : hidden) {
      from = linear("fc" + std::to_string(k), from, w);
      from = simple(LayerKind::relu, "fc" + std::to_string(k) + "_relu", from);
      ++k;
    }
    return linear("fc" + std::to_string(k), from, outputs);
  }

  ModelSpec finish(const std::string& output) {
    spec_.output = output;
    infer_shapes(spec_);
    return spec_;
  }

private:
  ModelSpec spec_;
};

inline std::string conv_stack_nodes(SpecBuilder& b, const std::string& from, const Architecture& a, std::size_t frame_size) {
  std::string last = from;
  std::size_t extent = frame_size;
  for (std::size_t i = 0; i < a.filters.size(); ++i) {
    // An oversized kernel is left for shape inference to reject with context.
    extent = a.filters[i] <= extent ? (extent - a.filters[i]) / a.strides[i] + 1 : 0;
    const bool pool = extent >= kPoolWindow;
    last = b.conv_block(last, i + 1, a.filters[i], a.strides[i], a.depths[i], pool || extent == 0);
    if (pool) extent /= kPoolWindow;
  }
  return b.simple(LayerKind::flatten, "flatten", last);
}

inline void apply_overrides(Architecture& a, const std::vector<std::size_t>& filters, const std::vector<std::size_t>& strides) {
  if (!filters.empty()) {
    if (filters.size() != a.filters.size())
      fail(ErrorKind::invalid_argument, std::to_string(filters.size()) + " filter sizes given for " + std::to_string(a.filters.size()) + " conv layers");
    a.filters = filters;
  }
  if (!strides.empty()) {
    if (strides.size() != a.strides.size())
      fail(ErrorKind::invalid_argument, std::to_string(strides.size()) + " strides given for " + std::to_string(a.strides.size()) + " conv layers");
    a.strides = strides;
  }
}

}  // namespace detail

/// Three-class steering classifier: 1CL-1FC, 2CL-1FC, 1CL-2FC, 2CL-2FC or 3CL-2FC.
inline ModelSpec make_discrete_model(std::string_view name, std::size_t frame_size = kFrameSize) {
  const auto& names = discrete_model_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    fail(ErrorKind::invalid_argument, "unknown discrete model '" + std::string(name) + "'; valid: " + detail::join_names(names));
  const std::size_t convs = static_cast<std::size_t>(name[0] - '0');
  const std::size_t fcs = static_cast<std::size_t>(name[4] - '0');
  Architecture a = detail::conv_stack(convs);
  if (fcs == 2) a.hidden = {100};
  detail::SpecBuilder b{std::string(name)};
  auto last = detail::conv_stack_nodes(b, b.input("image", {3, frame_size, frame_size}), a, frame_size);
  last = b.fc_stack(last, a.hidden, 3);
  return b.finish(b.simple(LayerKind::softmax_head, "head", last));
}

/// Single-output steering regressor clamped to +-90 degrees: 3CL-2FC,
/// 3CL-3FC or 4CL-3FC. Empty filter/stride lists keep the defaults.
inline ModelSpec make_realvalue_model(std::string_view name, const std::vector<std::size_t>& filters = {},
                                      const std::vector<std::size_t>& strides = {}, std::size_t frame_size = kFrameSize) {
  const auto& names = realvalue_model_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    fail(ErrorKind::invalid_argument, "unknown real-value model '" + std::string(name) + "'; valid: " + detail::join_names(names));
  const std::size_t convs = static_cast<std::size_t>(name[0] - '0');
  const std::size_t fcs = static_cast<std::size_t>(name[4] - '0');
  Architecture a = detail::conv_stack(convs);
  a.hidden = fcs == 3 ? std::vector<std::size_t>{1024, 100} : std::vector<std::size_t>{100};
  detail::apply_overrides(a, filters, strides);
  detail::SpecBuilder b{std::string(name) + "-real"};
  auto last = detail::conv_stack_nodes(b, b.input("image", {3, frame_size, frame_size}), a, frame_size);
  last = b.fc_stack(last, a.hidden, 1);
  LayerSpec head;
  head.kind = LayerKind::clamp_scale;
  head.name = "head";
  head.inputs = {last};
  head.lo = -kSteeringLimit;
  head.hi = kSteeringLimit;
  return b.finish(b.add(std::move(head)));
}

/// Brake/throttle network: the 4CL stack on the image, the two scaled motor
/// speeds concatenated onto the flattened conv features, FC 1024 -> 100 -> 2,
/// and a 256-scaled sigmoid.
inline ModelSpec make_brake_throttle_model(const std::vector<std::size_t>& filters = {}, const std::vector<std::size_t>& strides = {},
                                           std::size_t frame_size = kFrameSize) {
  Architecture a = detail::conv_stack(4);
  a.hidden = {1024, 100};
  detail::apply_overrides(a, filters, strides);
  detail::SpecBuilder b{"brake-throttle"};
  auto features = detail::conv_stack_nodes(b, b.input("image", {3, frame_size, frame_size}), a, frame_size);
  auto motors = b.input("motor_speeds", {2});
  auto last = b.concat("controller_in", {features, motors});
  last = b.fc_stack(last, a.hidden, 2);
  LayerSpec head;
  head.kind = LayerKind::scaled_sigmoid;
  head.name = "head";
  head.inputs = {last};
  head.scale = kPedalScale;
  return b.finish(b.add(std::move(head)));
}

/// Reduced-resolution clone: the image input becomes 3 x height x width,
/// every conv stride becomes 1, and conv kernels shrink (first conv first,
/// largest fitting size) only where the conv stack would otherwise not fit.
inline ModelSpec miniature(const ModelSpec& spec, std::size_t height, std::size_t width) {
  ModelSpec out = spec;
  const auto order = topological_order(out);
  for (auto& n : out.nodes)
    if (n.kind == LayerKind::input && n.name == "image") n.shape = {3, height, width};
  std::vector<std::size_t> convs;
  for (auto i : order)
    if (out.nodes[i].kind == LayerKind::conv) convs.push_back(i);
  for (auto i : convs) out.nodes[i].stride = 1;

  auto fits = [&]() {
    try {
      infer_shapes(out);
      return true;
    } catch (const Error&) {
      return false;
    }
  };
  if (fits()) return out;
  // Greedy: fix each conv at the largest kernel for which the rest of the
  // stack still fits with 1x1 kernels.
  std::vector<std::size_t> original;
  for (auto i : convs) {
    original.push_back(out.nodes[i].filter);
    out.nodes[i].filter = 1;
  }
  if (!fits()) fail(ErrorKind::shape_mismatch, "model '" + spec.name + "' cannot be reduced to " + std::to_string(height) + "x" + std::to_string(width));
  for (std::size_t c = 0; c < convs.size(); ++c) {
    for (std::size_t k = original[c]; k >= 1; --k) {
      out.nodes[convs[c]].filter = k;
      if (fits()) break;
    }
  }
  return out;
}

}  // namespace fsdrive
