#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fsdrive/batch.hpp"
#include "fsdrive/corpus.hpp"
#include "fsdrive/metrics.hpp"
#include "fsdrive/model.hpp"
#include "fsdrive/rng.hpp"
#include "fsdrive/zoo.hpp"

namespace fsdrive {

enum class LossKind { cross_entropy, smooth_l1 };

inline const char* loss_name(LossKind k) { return k == LossKind::cross_entropy ? "cross_entropy" : "smooth_l1"; }

inline LossKind loss_for(Task task) { return task == Task::discrete ? LossKind::cross_entropy : LossKind::smooth_l1; }

struct TrainConfig {
  double initial_lr = 0.01;
  double decay = 1.0 / 1.01;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::cross_entropy;

  void validate() const {
    require(std::isfinite(initial_lr) && initial_lr > 0, "initial_lr must be positive");
    require(decay > 0 && decay <= 1, "decay must lie in (0, 1]");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(epochs >= 1, "epochs must be at least 1");
  }
};

inline double lr_at_epoch(const TrainConfig& c, std::size_t epoch) {
  return c.initial_lr * std::pow(c.decay, static_cast<double>(epoch));
}

/// p <- p - lr * g over every trainable tensor. All gradients are checked
/// before any parameter moves, so a non-finite gradient leaves the model as it was.
template <typename T>
void sgd_step(std::span<const ParamRef<T>> params, double lr) {
  for (const auto& p : params) {
    if (p.grad->shape() != p.value->shape())
      fail(ErrorKind::shape_mismatch, "gradient of " + p.name + " is " + to_string(p.grad->shape()) + ", parameter is " +
                                          to_string(p.value->shape()));
    if (auto bad = p.grad->first_non_finite())
      fail(ErrorKind::divergence, "non-finite gradient in " + p.name + " at element " + std::to_string(*bad));
  }
  const T step = static_cast<T>(lr);
  for (const auto& p : params) {
    T* v = p.value->data();
    const T* g = p.grad->data();
    for (std::size_t i = 0; i < p.value->size(); ++i) v[i] -= step * g[i];
  }
}

template <typename T>
void sgd_step(Model<T>& model, double lr) {
  const auto params = model.parameters();
  sgd_step<T>(std::span<const ParamRef<T>>(params), lr);
}

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> val_l1;
  std::size_t steps = 0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t total_steps = 0;
  bool diverged = false;
  std::string divergence;  // what went non-finite, and where
};

/// Trains in place. Each epoch reshuffles the training split with a seed
/// derived from (config.seed, absolute epoch), takes one SGD step per full
/// batch, then evaluates the validation split in eval mode. Epoch numbering
/// continues from model.epoch, so a resumed run follows the same schedule.
template <typename T>
TrainHistory train(Model<T>& model, std::span<const FramePair> train_pairs, std::span<const FramePair> val_pairs, Task task,
                   const TrainConfig& config, const std::function<void(const EpochStats&)>& on_epoch = {}) {
  config.validate();
  check_task(model, task);
  if (config.loss != loss_for(task))
    fail(ErrorKind::invalid_argument, std::string("loss ") + loss_name(config.loss) + " does not match task " + task_name(task));
  const std::size_t steps_per_epoch = detail::full_batches(train_pairs.size(), config.batch_size, "train");
  detail::full_batches(val_pairs.size(), config.batch_size, "validation");

  TrainHistory h;
  std::vector<std::size_t> order(train_pairs.size());
  std::vector<std::size_t> idx(config.batch_size);
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats s;
    s.epoch = model.epoch;
    s.lr = lr_at_epoch(config, s.epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, s.epoch));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    try {
      for (std::size_t b = 0; b < steps_per_epoch; ++b) {
        std::copy_n(order.begin() + static_cast<std::ptrdiff_t>(b * config.batch_size), config.batch_size, idx.begin());
        const auto batch = make_batch<T>(train_pairs, idx, task);
        model.zero_grad();
        const auto out = model.forward(batch.inputs, Mode::train);
        const auto loss = batch_loss(model, out, batch, task);
        if (!std::isfinite(loss.loss))
          fail(ErrorKind::divergence, "non-finite training loss at epoch " + std::to_string(s.epoch) + " step " + std::to_string(b));
        model.backward(loss.grad);
        sgd_step(model, s.lr);
        loss_sum += loss.loss;
        ++s.steps;
        ++h.total_steps;
      }
      const auto val = evaluate(model, val_pairs, task, config.batch_size);
      if (!std::isfinite(val.mean_loss)) fail(ErrorKind::divergence, "non-finite validation loss at epoch " + std::to_string(s.epoch));
      s.val_loss = val.mean_loss;
      s.val_accuracy = val.accuracy;
      s.val_l1 = val.mean_l1;
    } catch (const Error& err) {
      if (err.kind() != ErrorKind::divergence) throw;
      h.diverged = true;
      h.divergence = err.what();
      break;
    }
    s.train_loss = loss_sum / static_cast<double>(s.steps);
    s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++model.epoch;
    h.epochs.push_back(s);
    if (on_epoch) on_epoch(s);
  }
  return h;
}

/// Line-per-epoch table. Timings live in a separate table so reruns compare
/// byte-for-byte.
inline std::string history_to_text(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch\tlr\ttrain_loss\tval_loss\tval_accuracy\tval_l1\tsteps\n";
  for (const auto& s : h.epochs) {
    os << s.epoch << "\t" << format_number(s.lr) << "\t" << format_number(s.train_loss) << "\t" << format_number(s.val_loss) << "\t"
       << (std::isnan(s.val_accuracy) ? "-" : format_number(s.val_accuracy)) << "\t";
    if (s.val_l1.empty()) os << "-";
    for (std::size_t i = 0; i < s.val_l1.size(); ++i) os << (i ? "," : "") << format_number(s.val_l1[i]);
    os << "\t" << s.steps << "\n";
  }
  if (h.diverged) os << "# diverged: " << h.divergence << "\n";
  return os.str();
}

inline std::string timings_to_text(const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch\tseconds\n";
  for (const auto& s : h.epochs) os << s.epoch << "\t" << format_number(s.seconds) << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Grid search

/// Each entry of a compressed set stands for two consecutive conv layers:
/// {7,5} over four convs is {7,7,5,5}.
inline std::vector<std::size_t> expand_double_compressed(const std::vector<std::size_t>& compressed, std::size_t convs) {
  if (compressed.empty() || compressed.size() * 2 != convs)
    fail(ErrorKind::invalid_argument, "a compressed set of " + std::to_string(compressed.size()) + " entries does not cover " +
                                          std::to_string(convs) + " conv layers (need exactly half as many)");
  std::vector<std::size_t> out;
  for (auto v : compressed) out.insert(out.end(), 2, v);
  return out;
}

struct GridSearchConfig {
  std::string arch = "4CL-3FC";
  Task task = Task::real;
  std::size_t frame_size = kFrameSize;
  std::vector<std::vector<std::size_t>> filter_sets{{7, 5}, {5, 5}, {5, 3}, {3, 3}};
  std::vector<std::vector<std::size_t>> stride_sets{{2, 1}, {2, 2}};
  TrainConfig train;
  std::size_t threads = 1;
};

struct GridRun {
  std::size_t index = 0;
  std::vector<std::size_t> filters;  // expanded
  std::vector<std::size_t> strides;  // expanded
  std::uint64_t seed = 0;
  double val_loss = std::numeric_limits<double>::infinity();
  std::vector<double> val_l1;
  std::size_t epochs_run = 0;
  std::string failure;  // divergence or build error; empty on success
};

inline std::size_t grid_conv_count(const GridSearchConfig& g) {
  if (g.task == Task::brake_throttle) return 4;
  const auto& names = realvalue_model_names();
  if (std::find(names.begin(), names.end(), g.arch) == names.end())
    fail(ErrorKind::invalid_argument, "unknown real-value model '" + g.arch + "'; valid: " + detail::join_names(names));
  return static_cast<std::size_t>(g.arch[0] - '0');
}

inline ModelSpec grid_model(const GridSearchConfig& g, const std::vector<std::size_t>& filters, const std::vector<std::size_t>& strides) {
  switch (g.task) {
    case Task::real: return make_realvalue_model(g.arch, filters, strides, g.frame_size);
    case Task::brake_throttle: return make_brake_throttle_model(filters, strides, g.frame_size);
    case Task::discrete: break;
  }
  fail(ErrorKind::invalid_argument, "grid search tunes real-valued or brake/throttle models, not discrete ones");
}

/// One training run per (filter set, stride set); run i uses seed
/// train.seed + i. Results are ranked by ascending validation loss with
/// failed runs last; ties keep grid order.
inline std::vector<GridRun> grid_search(const GridSearchConfig& g, std::span<const FramePair> train_pairs, std::span<const FramePair> val_pairs) {
  g.train.validate();
  if (g.task == Task::discrete) grid_model(g, {}, {});
  const std::size_t convs = grid_conv_count(g);
  std::vector<GridRun> runs;
  for (const auto& f : g.filter_sets)
    for (const auto& s : g.stride_sets) {
      GridRun r;
      r.index = runs.size();
      r.filters = expand_double_compressed(f, convs);
      r.strides = expand_double_compressed(s, convs);
      r.seed = g.train.seed + r.index;
      runs.push_back(std::move(r));
    }
  auto run_one = [&](GridRun& r) {
    try {
      Model<float> model(grid_model(g, r.filters, r.strides), r.seed);
      TrainConfig c = g.train;
      c.seed = r.seed;
      const auto h = train(model, train_pairs, val_pairs, g.task, c);
      r.epochs_run = h.epochs.size();
      if (h.diverged) {
        r.failure = "diverged: " + h.divergence;
      } else {
        r.val_loss = h.epochs.back().val_loss;
        r.val_l1 = h.epochs.back().val_l1;
      }
    } catch (const Error& e) {
      r.failure = e.what();
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(g.threads, 1, runs.size());
  if (workers == 1) {
    for (auto& r : runs) run_one(r);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < runs.size();) run_one(runs[i]);
      });
    for (auto& t : pool) t.join();
  }
  std::stable_sort(runs.begin(), runs.end(), [](const GridRun& a, const GridRun& b) {
    if (a.failure.empty() != b.failure.empty()) return a.failure.empty();
    return a.val_loss < b.val_loss;
  });
  return runs;
}

inline std::string grid_to_text(const std::vector<GridRun>& runs) {
  auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
    return s;
  };
  std::ostringstream os;
  os << "rank\trun\tfilters\tstrides\tseed\tval_loss\tval_l1\tepochs\tstatus\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& r = runs[i];
    os << i + 1 << "\t" << r.index << "\t" << join(r.filters) << "\t" << join(r.strides) << "\t" << r.seed << "\t"
       << (r.failure.empty() ? format_number(r.val_loss) : "-") << "\t";
    if (r.val_l1.empty()) os << "-";
    for (std::size_t j = 0; j < r.val_l1.size(); ++j) os << (j ? "," : "") << format_number(r.val_l1[j]);
    os << "\t" << r.epochs_run << "\t" << (r.failure.empty() ? "ok" : r.failure) << "\n";
  }
  return os.str();
}

}  // namespace fsdrive
