#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/tensor.hpp"

namespace fsdrive {

enum class LayerKind {
  input,
  conv,
  batchnorm,
  relu,
  maxpool,
  flatten,
  linear,
  clamp_scale,
  scaled_sigmoid,
  softmax_head,
  concat,
};

inline const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::input: return "input";
    case LayerKind::conv: return "conv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::linear: return "linear";
    case LayerKind::clamp_scale: return "clamp_scale";
    case LayerKind::scaled_sigmoid: return "scaled_sigmoid";
    case LayerKind::softmax_head: return "softmax_head";
    case LayerKind::concat: return "concat";
  }
  return "?";
}

inline LayerKind parse_kind(std::string_view text) {
  for (int k = 0; k <= static_cast<int>(LayerKind::concat); ++k)
    if (text == kind_name(static_cast<LayerKind>(k))) return static_cast<LayerKind>(k);
  fail(ErrorKind::format, "unknown layer kind '" + std::string(text) + "'");
}

/// One graph node. Only the hyper-parameters of `kind` may be set:
///   input: shape        conv: filter, stride, depth     maxpool: window, stride
///   linear: width       clamp_scale: lo, hi             scaled_sigmoid: scale
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  std::vector<std::string> inputs;

  Shape shape;
  std::size_t filter = 0;
  std::size_t stride = 0;
  std::size_t depth = 0;
  std::size_t window = 0;
  std::size_t width = 0;
  double lo = 0.0;
  double hi = 0.0;
  double scale = 0.0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> nodes;
  std::string output;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

  std::size_t index_of(std::string_view node) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].name == node) return i;
    fail(ErrorKind::invalid_argument, "model '" + name + "' has no node '" + std::string(node) + "'");
  }

  const LayerSpec& node(std::string_view node_name) const { return nodes[index_of(node_name)]; }

  std::vector<std::string> input_names() const {
    std::vector<std::string> out;
    for (const auto& n : nodes)
      if (n.kind == LayerKind::input) out.push_back(n.name);
    return out;
  }

  std::size_t count(LayerKind kind) const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](const LayerSpec& n) { return n.kind == kind; }));
  }
};

namespace detail {

inline void check_hyper_params(const LayerSpec& n) {
  const bool shape = !n.shape.empty(), filter = n.filter != 0, stride = n.stride != 0, depth = n.depth != 0;
  const bool window = n.window != 0, width = n.width != 0, bounds = n.lo != 0.0 || n.hi != 0.0, scale = n.scale != 0.0;
  bool ok = true;
  switch (n.kind) {
    case LayerKind::input:
      ok = shape && !filter && !stride && !depth && !window && !width && !bounds && !scale;
      break;
    case LayerKind::conv:
      ok = !shape && filter && stride && depth && !window && !width && !bounds && !scale;
      break;
    case LayerKind::maxpool:
      ok = !shape && !filter && stride && !depth && window && !width && !bounds && !scale;
      break;
    case LayerKind::linear:
      ok = !shape && !filter && !stride && !depth && !window && width && !bounds && !scale;
      break;
    case LayerKind::clamp_scale:
      ok = !shape && !filter && !stride && !depth && !window && !width && n.lo < n.hi && !scale;
      break;
    case LayerKind::scaled_sigmoid:
      ok = !shape && !filter && !stride && !depth && !window && !width && !bounds && n.scale > 0.0;
      break;
    default:
      ok = !shape && !filter && !stride && !depth && !window && !width && !bounds && !scale;
  }
  if (!ok) fail(ErrorKind::invalid_argument, "node '" + n.name + "' has hyper-parameters that do not match kind " + kind_name(n.kind));
  const std::size_t arity = n.inputs.size();
  if (n.kind == LayerKind::input && arity != 0) fail(ErrorKind::invalid_argument, "input node '" + n.name + "' cannot have parents");
  if (n.kind == LayerKind::concat && arity < 2) fail(ErrorKind::invalid_argument, "concat node '" + n.name + "' needs at least two parents");
  if (n.kind != LayerKind::input && n.kind != LayerKind::concat && arity != 1)
    fail(ErrorKind::invalid_argument, "node '" + n.name + "' needs exactly one parent");
}

}  // namespace detail

enum class TieBreak { lowest_index, highest_index };

/// Kahn topological order over spec indices. Among ready nodes the lowest
/// (or highest) spec index runs first; both give a legal execution order.
inline std::vector<std::size_t> topological_order(const ModelSpec& spec, TieBreak tie = TieBreak::lowest_index) {
  const std::size_t n = spec.nodes.size();
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < n; ++i) {
    if (!index.emplace(spec.nodes[i].name, i).second)
      fail(ErrorKind::invalid_argument, "duplicate node name '" + spec.nodes[i].name + "'");
  }
  std::vector<std::size_t> indegree(n, 0);
  std::vector<std::vector<std::size_t>> children(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& parent : spec.nodes[i].inputs) {
      auto it = index.find(parent);
      if (it == index.end())
        fail(ErrorKind::invalid_argument, "node '" + spec.nodes[i].name + "' refers to unknown node '" + parent + "'");
      children[it->second].push_back(i);
      ++indegree[i];
    }
  }
  std::set<std::size_t> ready;
  for (std::size_t i = 0; i < n; ++i)
    if (indegree[i] == 0) ready.insert(i);
  std::vector<std::size_t> order;
  while (!ready.empty()) {
    auto it = tie == TieBreak::lowest_index ? ready.begin() : std::prev(ready.end());
    const std::size_t i = *it;
    ready.erase(it);
    order.push_back(i);
    for (auto c : children[i])
      if (--indegree[c] == 0) ready.insert(c);
  }
  if (order.size() != n) fail(ErrorKind::invalid_argument, "model '" + spec.name + "' contains a cycle");
  return order;
}

/// Per-sample output shape (batch axis excluded) of every node, by spec index.
/// Also checks kind/hyper-parameter agreement, reachability and the output.
inline std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  for (const auto& n : spec.nodes) detail::check_hyper_params(n);
  const auto order = topological_order(spec);
  std::vector<Shape> shapes(spec.nodes.size());
  std::vector<bool> reachable(spec.nodes.size(), false);
  auto mismatch = [&](const LayerSpec& n, const std::string& detail) {
    fail(ErrorKind::shape_mismatch, "node '" + n.name + "' (" + kind_name(n.kind) + "): " + detail);
  };
  for (auto i : order) {
    const LayerSpec& n = spec.nodes[i];
    std::vector<Shape> in;
    for (const auto& p : n.inputs) {
      const auto pi = spec.index_of(p);
      in.push_back(shapes[pi]);
      reachable[i] = reachable[i] || reachable[pi];
    }
    switch (n.kind) {
      case LayerKind::input:
        reachable[i] = true;
        shapes[i] = n.shape;
        break;
      case LayerKind::conv: {
        const Shape& s = in[0];
        if (s.size() != 3) mismatch(n, "expects (channels, height, width), got " + to_string(s));
        if (n.filter > s[1] || n.filter > s[2])
          mismatch(n, "filter " + std::to_string(n.filter) + " larger than input " + to_string(s));
        shapes[i] = {n.depth, (s[1] - n.filter) / n.stride + 1, (s[2] - n.filter) / n.stride + 1};
        break;
      }
      case LayerKind::maxpool: {
        const Shape& s = in[0];
        if (s.size() != 3) mismatch(n, "expects (channels, height, width), got " + to_string(s));
        if (n.window > s[1] || n.window > s[2])
          mismatch(n, "window " + std::to_string(n.window) + " larger than input " + to_string(s));
        shapes[i] = {s[0], (s[1] - n.window) / n.stride + 1, (s[2] - n.window) / n.stride + 1};
        break;
      }
      case LayerKind::batchnorm:
        if (in[0].size() != 3) mismatch(n, "expects (channels, height, width), got " + to_string(in[0]));
        shapes[i] = in[0];
        break;
      case LayerKind::flatten:
        shapes[i] = {shape_size(in[0])};
        break;
      case LayerKind::linear:
        if (in[0].size() != 1) mismatch(n, "expects flat features, got " + to_string(in[0]));
        shapes[i] = {n.width};
        break;
      case LayerKind::softmax_head:
        if (in[0].size() != 1 || in[0][0] < 2) mismatch(n, "expects at least two logits, got " + to_string(in[0]));
        shapes[i] = in[0];
        break;
      case LayerKind::concat: {
        std::size_t total = 0;
        for (const auto& s : in) {
          if (s.size() != 1) mismatch(n, "concatenates flat features only, got " + to_string(s));
          total += s[0];
        }
        shapes[i] = {total};
        break;
      }
      default:
        shapes[i] = in[0];
    }
  }
  for (std::size_t i = 0; i < spec.nodes.size(); ++i)
    if (!reachable[i]) fail(ErrorKind::invalid_argument, "node '" + spec.nodes[i].name + "' is not reachable from any input");
  spec.index_of(spec.output);
  return shapes;
}

/// Trainable parameter count (batch-norm running statistics excluded).
inline std::size_t parameter_count(const ModelSpec& spec) {
  const auto shapes = infer_shapes(spec);
  std::size_t total = 0;
  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const auto& n = spec.nodes[i];
    const Shape& in = n.inputs.empty() ? Shape{} : shapes[spec.index_of(n.inputs[0])];
    if (n.kind == LayerKind::conv) total += n.depth * in[0] * n.filter * n.filter + n.depth;
    if (n.kind == LayerKind::batchnorm) total += 2 * in[0];
    if (n.kind == LayerKind::linear) total += n.width * in[0] + n.width;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Text form:
//   model <name>
//   <kind> <node-name> [in=a,b] [key=value ...]
//   output <node-name>

namespace detail {

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Fn>
void for_each_token(std::string_view text, char sep, Fn&& fn) {
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find(sep, start);
    const auto token = text.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start);
    if (!token.empty()) fn(token);
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
}

inline std::size_t parse_extent(std::string_view text, const std::string& where) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size() || v == 0)
    fail(ErrorKind::format, where + ": expected a positive integer, got '" + std::string(text) + "'");
  return v;
}

inline double parse_real(std::string_view text, const std::string& where) {
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size())
    fail(ErrorKind::format, where + ": expected a number, got '" + std::string(text) + "'");
  return v;
}

}  // namespace detail

inline std::string to_text(const ModelSpec& spec) {
  std::ostringstream os;
  os << "model " << spec.name << '\n';
  for (const auto& n : spec.nodes) {
    os << kind_name(n.kind) << ' ' << n.name;
    if (!n.inputs.empty()) {
      os << " in=";
      for (std::size_t i = 0; i < n.inputs.size(); ++i) os << (i ? "," : "") << n.inputs[i];
    }
    if (!n.shape.empty()) {
      os << " shape=";
      for (std::size_t i = 0; i < n.shape.size(); ++i) os << (i ? "," : "") << n.shape[i];
    }
    if (n.filter) os << " filter=" << n.filter;
    if (n.window) os << " window=" << n.window;
    if (n.stride) os << " stride=" << n.stride;
    if (n.depth) os << " depth=" << n.depth;
    if (n.width) os << " width=" << n.width;
    if (n.kind == LayerKind::clamp_scale) os << " lo=" << detail::format_real(n.lo) << " hi=" << detail::format_real(n.hi);
    if (n.kind == LayerKind::scaled_sigmoid) os << " scale=" << detail::format_real(n.scale);
    os << '\n';
  }
  os << "output " << spec.output << '\n';
  return os.str();
}

inline ModelSpec parse_model_spec(std::string_view text) {
  ModelSpec spec;
  bool have_header = false, have_output = false;
  std::size_t line_no = 0;
  detail::for_each_token(text, '\n', [&](std::string_view line) {
    ++line_no;
    const std::string where = "model text line " + std::to_string(line_no);
    std::vector<std::string_view> words;
    detail::for_each_token(line, ' ', [&](std::string_view w) { words.push_back(w); });
    if (words.empty()) return;
    if (words[0] == "model") {
      if (words.size() != 2) fail(ErrorKind::format, where + ": expected 'model <name>'");
      spec.name = std::string(words[1]);
      have_header = true;
      return;
    }
    if (words[0] == "output") {
      if (words.size() != 2) fail(ErrorKind::format, where + ": expected 'output <node>'");
      spec.output = std::string(words[1]);
      have_output = true;
      return;
    }
    if (words.size() < 2) fail(ErrorKind::format, where + ": expected '<kind> <name> ...'");
    LayerSpec n;
    n.kind = parse_kind(words[0]);
    n.name = std::string(words[1]);
    for (std::size_t i = 2; i < words.size(); ++i) {
      const auto eq = words[i].find('=');
      if (eq == std::string_view::npos) fail(ErrorKind::format, where + ": expected key=value, got '" + std::string(words[i]) + "'");
      const auto key = words[i].substr(0, eq), value = words[i].substr(eq + 1);
      if (key == "in") {
        detail::for_each_token(value, ',', [&](std::string_view p) { n.inputs.emplace_back(p); });
      } else if (key == "shape") {
        detail::for_each_token(value, ',', [&](std::string_view p) { n.shape.push_back(detail::parse_extent(p, where)); });
      } else if (key == "filter") {
        n.filter = detail::parse_extent(value, where);
      } else if (key == "window") {
        n.window = detail::parse_extent(value, where);
      } else if (key == "stride") {
        n.stride = detail::parse_extent(value, where);
      } else if (key == "depth") {
        n.depth = detail::parse_extent(value, where);
      } else if (key == "width") {
        n.width = detail::parse_extent(value, where);
      } else if (key == "lo") {
        n.lo = detail::parse_real(value, where);
      } else if (key == "hi") {
        n.hi = detail::parse_real(value, where);
      } else if (key == "scale") {
        n.scale = detail::parse_real(value, where);
      } else {
        fail(ErrorKind::format, where + ": unknown key '" + std::string(key) + "'");
      }
    }
    spec.nodes.push_back(std::move(n));
  });
  if (!have_header) fail(ErrorKind::format, "model text has no 'model' header");
  if (!have_output) fail(ErrorKind::format, "model text has no 'output' line");
  infer_shapes(spec);
  return spec;
}

}  // namespace fsdrive
