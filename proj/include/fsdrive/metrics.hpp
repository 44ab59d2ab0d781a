#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fsdrive/batch.hpp"
#include "fsdrive/corpus.hpp"
#include "fsdrive/image.hpp"
#include "fsdrive/model.hpp"
#include "fsdrive/zoo.hpp"

namespace fsdrive {

/// 3x3 counts, rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::array<std::array<std::size_t, 3>, 3> counts{};

  void add(int truth, int predicted) {
    require(truth >= 1 && truth <= 3 && predicted >= 1 && predicted <= 3, "confusion matrix classes are 1..3");
    ++counts[static_cast<std::size_t>(truth - 1)][static_cast<std::size_t>(predicted - 1)];
  }
  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& row : counts) t += std::accumulate(row.begin(), row.end(), std::size_t{0});
    return t;
  }
  std::size_t trace() const { return counts[0][0] + counts[1][1] + counts[2][2]; }
  double accuracy() const { return total() ? static_cast<double>(trace()) / static_cast<double>(total()) : 0.0; }
};

/// Per-batch accuracies plus the confusion matrix over all evaluated frames.
struct ClassificationTally {
  ConfusionMatrix confusion;
  std::vector<double> batch_accuracy;

  void add_batch(std::span<const int> truth, std::span<const int> predicted) {
    require(truth.size() == predicted.size() && !truth.empty(), "batch of predictions must match labels");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      confusion.add(truth[i], predicted[i]);
      hits += truth[i] == predicted[i];
    }
    batch_accuracy.push_back(static_cast<double>(hits) / static_cast<double>(truth.size()));
  }

  double mean_batch_accuracy() const {
    if (batch_accuracy.empty()) return 0.0;
    return std::accumulate(batch_accuracy.begin(), batch_accuracy.end(), 0.0) / static_cast<double>(batch_accuracy.size());
  }
};

struct MetricsReport {
  Task task = Task::discrete;
  std::string split;
  std::size_t batch_size = 0;
  std::size_t batches = 0;
  std::size_t evaluated = 0;
  std::size_t dropped = 0;
  double mean_loss = 0.0;
  double accuracy = std::numeric_limits<double>::quiet_NaN();         // mean of batch accuracies
  double global_accuracy = std::numeric_limits<double>::quiet_NaN();  // trace / sum
  ConfusionMatrix confusion;
  std::vector<double> mean_l1;  // per output: steering degrees, or brake and throttle
};

/// Index of the largest probability, 1-based; earliest wins ties.
template <typename T>
std::vector<int> predicted_classes(const Tensor<T>& probabilities) {
  const std::size_t n = probabilities.dim(0), k = probabilities.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = probabilities.data() + i * k;
    out[i] = static_cast<int>(std::max_element(row, row + k) - row) + 1;
  }
  return out;
}

namespace detail {

inline std::size_t full_batches(std::size_t frames, std::size_t batch_size, const std::string& split) {
  require(batch_size >= 1, "batch size must be at least 1");
  const std::size_t batches = frames / batch_size;
  if (batches == 0)
    fail(ErrorKind::invalid_argument, "split '" + split + "' has " + std::to_string(frames) + " frames, fewer than one batch of " +
                                          std::to_string(batch_size));
  return batches;
}

}  // namespace detail

/// Eval-mode forwards in full batches of the split in its given order; the
/// partial final batch is dropped and counted.
template <typename T>
MetricsReport evaluate(Model<T>& model, std::span<const FramePair> pairs, Task task, std::size_t batch_size = 64,
                       const std::string& split = "validation") {
  check_task(model, task);
  MetricsReport r;
  r.task = task;
  r.split = split;
  r.batch_size = batch_size;
  r.batches = detail::full_batches(pairs.size(), batch_size, split);
  r.evaluated = r.batches * batch_size;
  r.dropped = pairs.size() - r.evaluated;
  const std::size_t outputs = task == Task::discrete ? 0 : model.output_width();
  std::vector<double> abs_sum(outputs, 0.0);
  ClassificationTally tally;
  double loss_sum = 0.0;
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t b = 0; b < r.batches; ++b) {
    std::iota(idx.begin(), idx.end(), b * batch_size);
    const auto batch = make_batch<T>(pairs, idx, task);
    const auto out = model.forward(batch.inputs, Mode::eval);
    loss_sum += batch_loss(model, out, batch, task).loss;
    if (task == Task::discrete) {
      tally.add_batch(batch.classes, predicted_classes(out));
    } else {
      for (std::size_t i = 0; i < out.size(); ++i)
        abs_sum[i % outputs] += std::abs(static_cast<double>(out[i]) - static_cast<double>(batch.targets[i]));
    }
  }
  r.mean_loss = loss_sum / static_cast<double>(r.batches);
  if (task == Task::discrete) {
    r.accuracy = tally.mean_batch_accuracy();
    r.global_accuracy = tally.confusion.accuracy();
    r.confusion = tally.confusion;
  } else {
    for (double s : abs_sum) r.mean_l1.push_back(s / static_cast<double>(r.evaluated));
  }
  return r;
}

template <typename T>
MetricsReport eval_classification(Model<T>& model, std::span<const FramePair> pairs, std::size_t batch_size = 64) {
  return evaluate(model, pairs, Task::discrete, batch_size);
}

template <typename T>
MetricsReport eval_regression(Model<T>& model, std::span<const FramePair> pairs, std::size_t batch_size = 64) {
  return evaluate(model, pairs, Task::real, batch_size);
}

inline std::string report_to_text(const MetricsReport& r) {
  std::ostringstream os;
  os << "task\t" << task_name(r.task) << "\n";
  os << "split\t" << r.split << "\n";
  os << "batch_size\t" << r.batch_size << "\n";
  os << "batches\t" << r.batches << "\n";
  os << "evaluated\t" << r.evaluated << "\n";
  os << "dropped\t" << r.dropped << "\n";
  os << "mean_loss\t" << format_number(r.mean_loss) << "\n";
  if (r.task == Task::discrete) {
    os << "accuracy\t" << format_number(r.accuracy) << "\n";
    os << "global_accuracy\t" << format_number(r.global_accuracy) << "\n";
    os << "confusion\ttrue\\pred\tleft\tstraight\tright\n";
    static constexpr const char* names[] = {"left", "straight", "right"};
    for (std::size_t t = 0; t < 3; ++t)
      os << "confusion\t" << names[t] << "\t" << r.confusion.counts[t][0] << "\t" << r.confusion.counts[t][1] << "\t"
         << r.confusion.counts[t][2] << "\n";
  } else if (r.task == Task::real) {
    os << "mean_l1_steering\t" << format_number(r.mean_l1.at(0)) << "\n";
  } else {
    os << "mean_l1_brake\t" << format_number(r.mean_l1.at(0)) << "\n";
    os << "mean_l1_throttle\t" << format_number(r.mean_l1.at(1)) << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Exports for external visualization

/// The node feeding the final linear layer, i.e. the last hidden FC output.
inline std::string last_hidden_layer(const ModelSpec& spec) {
  std::string node = spec.output;
  while (spec.node(node).kind != LayerKind::linear) {
    const auto& in = spec.node(node).inputs;
    require(!in.empty(), "model '" + spec.name + "' has no linear layer");
    node = in[0];
  }
  return spec.node(node).inputs.at(0);
}

/// Tab-delimited table: a header naming the layer and its width, then one row
/// per evaluated frame with its source indices, label and activation vector.
template <typename T>
std::string export_activations(Model<T>& model, std::span<const FramePair> pairs, Task task, std::string layer = "",
                               std::size_t batch_size = 64, std::size_t max_batches = 0) {
  check_task(model, task);
  if (layer.empty()) layer = last_hidden_layer(model.spec());
  const auto names = model.node_names();
  if (std::find(names.begin(), names.end(), layer) == names.end())
    fail(ErrorKind::invalid_argument, "no layer '" + layer + "'; layers: " + detail::join_names(names));
  const std::size_t width = shape_size(model.node_shape(layer));
  std::size_t batches = detail::full_batches(pairs.size(), batch_size, "export");
  if (max_batches) batches = std::min(batches, max_batches);
  std::ostringstream os;
  os << "# layer=" << layer << " width=" << width << " rows=" << batches * batch_size << "\n";
  os << "log_row\tframe_index\tsteering\tclass";
  for (std::size_t j = 0; j < width; ++j) os << "\ta" << j;
  os << "\n";
  std::vector<std::size_t> idx(batch_size);
  for (std::size_t b = 0; b < batches; ++b) {
    std::iota(idx.begin(), idx.end(), b * batch_size);
    const auto batch = make_batch<T>(pairs, idx, task);
    model.forward(batch.inputs, Mode::eval);
    const auto& act = model.activation(layer);
    for (std::size_t i = 0; i < batch_size; ++i) {
      const auto& p = pairs[idx[i]];
      os << p.log_row << "\t" << p.frame_index << "\t" << format_number(p.record.steering) << "\t"
         << class_name(discretize_steering(p.record.steering));
      for (std::size_t j = 0; j < width; ++j) os << "\t" << format_number(static_cast<double>(act[i * width + j]));
      os << "\n";
    }
  }
  return os.str();
}

/// Min-max maps a k x k slice to 8-bit gray; a constant slice maps to 128.
template <typename T>
Image filter_to_image(const T* slice, std::size_t k) {
  Image img(k, k, 1);
  const auto [lo, hi] = std::minmax_element(slice, slice + k * k);
  for (std::size_t i = 0; i < k * k; ++i) {
    img.pixels[i] = *lo == *hi ? std::uint8_t{128}
                               : static_cast<std::uint8_t>(std::lround(255.0 * (static_cast<double>(slice[i]) - *lo) / (static_cast<double>(*hi) - *lo)));
  }
  return img;
}

/// One PGM per (output channel, input channel) slice of every conv layer,
/// named <node>_o<out>_i<in>.pgm. Returns the number of files written.
template <typename T>
std::size_t export_filters(const Model<T>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::size_t written = 0;
  for (const auto& n : model.spec().nodes) {
    if (n.kind != LayerKind::conv) continue;
    const auto& w = model.params(n.name).weights;
    const std::size_t out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2);
    for (std::size_t o = 0; o < out_c; ++o)
      for (std::size_t i = 0; i < in_c; ++i) {
        char name[96];
        std::snprintf(name, sizeof name, "%s_o%03zu_i%03zu.pgm", n.name.c_str(), o, i);
        write_pnm(filter_to_image(w.data() + (o * in_c + i) * k * k, k), dir / name);
        ++written;
      }
  }
  require(written > 0, "model '" + model.spec().name + "' has no conv layer");
  return written;
}

}  // namespace fsdrive
