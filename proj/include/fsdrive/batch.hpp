#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsdrive/dataset.hpp"
#include "fsdrive/error.hpp"
#include "fsdrive/model.hpp"
#include "fsdrive/tensor.hpp"

namespace fsdrive {

/// What a model is trained to produce from a frame pair.
enum class Task { discrete, real, brake_throttle };

inline const char* task_name(Task t) {
  switch (t) {
    case Task::discrete: return "discrete";
    case Task::real: return "real";
    case Task::brake_throttle: return "brake_throttle";
  }
  return "?";
}

inline Task parse_task(std::string_view text) {
  if (text == "discrete") return Task::discrete;
  if (text == "real") return Task::real;
  if (text == "brake_throttle") return Task::brake_throttle;
  fail(ErrorKind::invalid_argument, "unknown task '" + std::string(text) + "' (expected discrete, real or brake_throttle)");
}

/// Motor speeds enter the network divided by 256, like pixels in [0, 1].
inline constexpr double kMotorInputScale = 1.0 / kSignalMax;

template <typename T>
struct Batch {
  Inputs<T> inputs;
  std::vector<int> classes;  // discrete: 1-based steering class per sample
  Tensor<T> targets;         // real: (N, 1) steering; brake_throttle: (N, 2) brake, throttle
};

template <typename T>
Batch<T> make_batch(std::span<const FramePair> pairs, std::span<const std::size_t> indices, Task task) {
  require(!indices.empty(), "empty batch");
  const Shape& frame = pairs[indices[0]].image.shape();
  const std::size_t n = indices.size(), per = shape_size(frame);
  Shape shape{n};
  shape.insert(shape.end(), frame.begin(), frame.end());
  Batch<T> b;
  Tensor<T> images(shape);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& img = pairs[indices[i]].image;
    if (img.shape() != frame)
      fail(ErrorKind::shape_mismatch, "frame " + std::to_string(pairs[indices[i]].frame_index) + " has shape " + to_string(img.shape()) +
                                          ", batch expects " + to_string(frame));
    std::copy(img.data(), img.data() + per, images.data() + i * per);
  }
  b.inputs.emplace("image", std::move(images));
  switch (task) {
    case Task::discrete:
      for (auto i : indices) b.classes.push_back(static_cast<int>(discretize_steering(pairs[i].record.steering)));
      break;
    case Task::real:
      b.targets = Tensor<T>({n, 1});
      for (std::size_t i = 0; i < n; ++i) b.targets[i] = static_cast<T>(pairs[indices[i]].record.steering);
      break;
    case Task::brake_throttle: {
      b.targets = Tensor<T>({n, 2});
      Tensor<T> motors({n, 2});
      for (std::size_t i = 0; i < n; ++i) {
        const auto& r = pairs[indices[i]].record;
        b.targets[2 * i] = static_cast<T>(r.brake);
        b.targets[2 * i + 1] = static_cast<T>(r.throttle);
        motors[2 * i] = static_cast<T>(r.left_motor_speed * kMotorInputScale);
        motors[2 * i + 1] = static_cast<T>(r.right_motor_speed * kMotorInputScale);
      }
      b.inputs.emplace("motor_speeds", std::move(motors));
      break;
    }
  }
  return b;
}

/// Rejects a model whose head does not fit the task.
template <typename T>
void check_task(const Model<T>& model, Task task) {
  const std::size_t width = model.output_width();
  const bool ok = task == Task::discrete ? model.is_classifier() && width == 3
                : task == Task::real     ? !model.is_classifier() && width == 1
                                         : !model.is_classifier() && width == 2;
  if (!ok)
    fail(ErrorKind::invalid_argument, "model '" + model.spec().name + "' (output width " + std::to_string(width) + ") does not fit task " +
                                          task_name(task));
}

/// Loss for one forward pass. Classifiers use cross-entropy on the logits,
/// regressors smooth L1 on the output.
template <typename T>
LossResult<T> batch_loss(const Model<T>& model, const Tensor<T>& output, const Batch<T>& b, Task task) {
  if (task == Task::discrete) return softmax_cross_entropy(model.logits(), std::span<const int>(b.classes));
  return smooth_l1(output, b.targets);
}

}  // namespace fsdrive
