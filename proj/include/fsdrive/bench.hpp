#pragma once

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fsdrive/corpus.hpp"
#include "fsdrive/graph.hpp"
#include "fsdrive/model.hpp"
#include "fsdrive/rng.hpp"

namespace fsdrive {

struct LayerTiming {
  std::string name;
  LayerKind kind = LayerKind::input;
  double mean_ns = 0.0;
  double stddev_ns = 0.0;
};

struct KindTiming {
  std::size_t layers = 0;
  double mean_per_layer_ns = 0.0;  // average over the layers of this kind
  double total_ns = 0.0;
};

struct LatencyReport {
  std::string model;
  std::size_t batch = 1;
  std::size_t warmup = 0;
  std::size_t iterations = 0;  // kept after discards
  std::size_t discarded = 0;   // iterations with a non-monotonic reading
  double end_to_end_mean_ns = 0.0;
  double end_to_end_stddev_ns = 0.0;
  std::vector<LayerTiming> layers;  // execution order
  std::map<std::string, KindTiming> by_kind;
  std::string hardware;

  double layer_sum_ns() const {
    double s = 0.0;
    for (const auto& l : layers) s += l.mean_ns;
    return s;
  }
};

inline std::string hardware_description() {
  std::string cpu = "unknown cpu";
  std::ifstream info("/proc/cpuinfo");
  for (std::string line; std::getline(info, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = std::string(detail::trim(std::string_view(line).substr(colon + 1)));
      break;
    }
  }
  std::ostringstream os;
  os << cpu << "; " << std::thread::hardware_concurrency() << " hardware threads";
#if defined(__VERSION__)
  os << "; compiler " << __VERSION__;
#endif
  return os.str();
}

namespace detail {

struct RunningStats {
  std::size_t n = 0;
  double mean = 0.0, m2 = 0.0;

  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

}  // namespace detail

/// Times eval-mode forwards on pre-built random inputs. Each node is timed
/// inside Model::forward and the whole call is timed around it.
template <typename T>
LatencyReport bench_forward(Model<T>& model, std::size_t warmup = 50, std::size_t iterations = 1000, std::size_t batch = 1,
                            std::uint64_t seed = 0) {
  require(iterations >= 100, "bench needs at least 100 iterations");
  require(batch >= 1, "bench batch must be at least 1");
  using clock = std::chrono::steady_clock;
  Inputs<T> inputs;
  Rng rng(seed);
  for (const auto& n : model.spec().nodes) {
    if (n.kind != LayerKind::input) continue;
    Shape s{batch};
    s.insert(s.end(), n.shape.begin(), n.shape.end());
    Tensor<T> t(s);
    for (auto& v : t.values()) v = static_cast<T>(rng.uniform());
    inputs.emplace(n.name, std::move(t));
  }

  const auto& order = model.execution_order();
  const auto& nodes = model.spec().nodes;
  std::vector<detail::RunningStats> per_node(nodes.size());
  detail::RunningStats total;
  std::vector<std::int64_t> node_ns;
  LatencyReport r;
  r.model = model.spec().name;
  r.batch = batch;
  r.warmup = warmup;
  for (std::size_t it = 0; it < warmup + iterations; ++it) {
    const auto t0 = clock::now();
    model.forward(inputs, Mode::eval, &node_ns);
    const auto t1 = clock::now();
    if (it < warmup) continue;
    const auto e2e = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
    bool monotonic = e2e >= 0;
    for (auto v : node_ns) monotonic = monotonic && v >= 0;
    if (!monotonic) {
      ++r.discarded;
      continue;
    }
    total.add(static_cast<double>(e2e));
    for (auto i : order) per_node[i].add(static_cast<double>(node_ns[i]));
  }
  r.iterations = total.n;
  r.end_to_end_mean_ns = total.mean;
  r.end_to_end_stddev_ns = total.stddev();
  for (auto i : order) {
    r.layers.push_back({nodes[i].name, nodes[i].kind, per_node[i].mean, per_node[i].stddev()});
    auto& k = r.by_kind[kind_name(nodes[i].kind)];
    ++k.layers;
    k.total_ns += per_node[i].mean;
  }
  for (auto& [_, k] : r.by_kind) k.mean_per_layer_ns = k.total_ns / static_cast<double>(k.layers);
  r.hardware = hardware_description();
  return r;
}

inline std::string latency_report_to_text(const LatencyReport& r) {
  auto ms = [](double ns) { return format_number(std::round(ns) / 1e6); };
  std::ostringstream os;
  os << "model\t" << r.model << "\n";
  os << "hardware\t" << r.hardware << "\n";
  os << "batch\t" << r.batch << "\n";
  os << "warmup\t" << r.warmup << "\n";
  os << "iterations\t" << r.iterations << "\n";
  os << "discarded\t" << r.discarded << "\n";
  os << "end_to_end_mean_ms\t" << ms(r.end_to_end_mean_ns) << "\n";
  os << "end_to_end_stddev_ms\t" << ms(r.end_to_end_stddev_ns) << "\n";
  os << "layer_sum_ms\t" << ms(r.layer_sum_ns()) << "\n";
  for (const auto& [kind, k] : r.by_kind)
    os << "per_kind\t" << kind << "\tlayers=" << k.layers << "\tmean_ms=" << ms(k.mean_per_layer_ns) << "\ttotal_ms=" << ms(k.total_ns) << "\n";
  return os.str();
}

/// Delimited per-layer table for plotting.
inline std::string latency_table(const LatencyReport& r) {
  std::ostringstream os;
  os << "layer\tkind\tmean_ns\tstddev_ns\n";
  for (const auto& l : r.layers)
    os << l.name << "\t" << kind_name(l.kind) << "\t" << format_number(std::round(l.mean_ns)) << "\t" << format_number(std::round(l.stddev_ns)) << "\n";
  return os.str();
}

}  // namespace fsdrive
