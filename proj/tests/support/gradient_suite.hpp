#pragma once

// Finite-difference checks of every layer primitive and of whole models,
// shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fsdrive/grad_check.hpp"
#include "fsdrive/layers.hpp"
#include "fsdrive/model.hpp"
#include "fsdrive/rng.hpp"
#include "fsdrive/zoo.hpp"

namespace fsdrive::test_support {

inline constexpr double kStep = 1e-6;
inline constexpr double kKinkRetryAbove = 1e-6;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Uniform values with magnitude in [gap, 1], random sign.
inline Tensor<double> away_from_zero(Shape shape, Rng& rng, double gap) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(gap, 1.0);
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::span<const double> span_of(const Tensor<double>& t) { return t.values(); }

/// Worst relative error over the listed (tensor, analytic gradient) pairs for
/// the scalar `fn`.
struct Target {
  Tensor<double>* point;
  Tensor<double> analytic;
};

inline double worst_error(const std::function<double()>& fn, std::vector<Target> targets) {
  double worst = 0.0;
  for (auto& t : targets) {
    auto r = grad_check(fn, t.point->values(), span_of(t.analytic), kStep);
    if (r.non_finite_coordinate) return INFINITY;
    worst = std::max(worst, r.max_rel_error);
  }
  return worst;
}

inline double check_conv2d(std::uint64_t seed) {
  Rng rng(seed);
  auto x = random_tensor({1, 2, 11, 13}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  const std::size_t stride = 1 + seed % 2;
  auto probe = random_tensor(conv2d(x, w, b, stride).shape(), rng);
  auto fn = [&] { return dot(conv2d(x, w, b, stride), probe); };
  auto g = conv2d_backward(x, w, stride, probe);
  return worst_error(fn, {{&x, g.input}, {&w, g.weights}, {&b, g.bias}});
}

inline double check_linear(std::uint64_t seed) {
  Rng rng(seed);
  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto b = random_tensor({5}, rng);
  auto probe = random_tensor({3, 5}, rng);
  auto fn = [&] { return dot(linear(x, w, b), probe); };
  auto g = linear_backward(x, w, probe);
  return worst_error(fn, {{&x, g.input}, {&w, g.weights}, {&b, g.bias}});
}

inline double check_batchnorm(std::uint64_t seed, Mode mode = Mode::train) {
  Rng rng(seed);
  auto x = random_tensor({3, 2, 4, 4}, rng);
  LayerParams<double> p;
  p.gamma = random_tensor({2}, rng, 0.5, 1.5);
  p.beta = random_tensor({2}, rng);
  p.running_mean = random_tensor({2}, rng);
  p.running_var = random_tensor({2}, rng, 0.5, 2.0);
  auto probe = random_tensor(x.shape(), rng);
  auto fn = [&] {
    LayerParams<double> q = p;
    return dot(batchnorm2d(x, q, mode), probe);
  };
  BatchNormCache<double> cache;
  LayerParams<double> q = p;
  batchnorm2d(x, q, mode, kBatchNormEps, kBatchNormMomentum, &cache);
  auto dx = batchnorm2d_backward(cache, q, probe);
  return worst_error(fn, {{&x, dx}, {&p.gamma, q.grad_gamma}, {&p.beta, q.grad_beta}});
}

inline double check_maxpool(std::uint64_t seed) {
  Rng rng(seed);
  auto x = random_tensor({2, 2, 8, 8}, rng);
  auto probe = random_tensor({2, 2, 4, 4}, rng);
  auto fn = [&] { return dot(maxpool(x, 2, 2), probe); };
  std::vector<std::size_t> argmax;
  maxpool(x, 2, 2, &argmax);
  return worst_error(fn, {{&x, maxpool_backward(x.shape(), argmax, probe)}});
}

inline double check_relu(std::uint64_t seed) {
  Rng rng(seed);
  auto x = away_from_zero({4, 6}, rng, 0.05);
  auto probe = random_tensor(x.shape(), rng);
  auto fn = [&] { return dot(relu(x), probe); };
  return worst_error(fn, {{&x, relu_backward(x, probe)}});
}

inline double check_clamp_scale(std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> x({4, 6});
  for (auto& v : x.values()) {
    // inside (-90, 90) or clearly saturated
    const double u = rng.uniform();
    v = u < 0.2 ? rng.uniform(-200, -95) : u < 0.4 ? rng.uniform(95, 200) : rng.uniform(-85, 85);
  }
  auto probe = random_tensor(x.shape(), rng);
  auto fn = [&] { return dot(clamp_scale(x, -90, 90), probe); };
  return worst_error(fn, {{&x, clamp_scale_backward(x, -90, 90, probe)}});
}

inline double check_scaled_sigmoid(std::uint64_t seed) {
  Rng rng(seed);
  auto x = random_tensor({4, 2}, rng, -4, 4);
  auto probe = random_tensor(x.shape(), rng);
  auto fn = [&] { return dot(scaled_sigmoid(x, 256.0), probe); };
  return worst_error(fn, {{&x, scaled_sigmoid_backward(x, 256.0, probe)}});
}

inline double check_cross_entropy(std::uint64_t seed) {
  Rng rng(seed);
  auto logits = random_tensor({5, 3}, rng, -3, 3);
  std::vector<int> labels(5);
  for (auto& l : labels) l = 1 + static_cast<int>(rng.below(3));
  auto fn = [&] { return softmax_cross_entropy(logits, labels).loss; };
  return worst_error(fn, {{&logits, softmax_cross_entropy(logits, labels).grad}});
}

inline double check_smooth_l1(std::uint64_t seed) {
  Rng rng(seed);
  auto pred = random_tensor({4, 3}, rng, -3, 3);
  auto target = random_tensor({4, 3}, rng, -3, 3);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = std::abs(pred[i] - target[i]);
    if (std::abs(d - 1.0) < 0.05) pred[i] += 0.2;
  }
  auto fn = [&] { return smooth_l1(pred, target).loss; };
  return worst_error(fn, {{&pred, smooth_l1(pred, target).grad}});
}

struct LayerCheck {
  std::string name;
  std::function<double(std::uint64_t)> run;
};

inline std::vector<LayerCheck> layer_checks() {
  return {
      {"conv2d", check_conv2d},
      {"maxpool", check_maxpool},
      {"batchnorm2d(train)", [](std::uint64_t s) { return check_batchnorm(s, Mode::train); }},
      {"batchnorm2d(eval)", [](std::uint64_t s) { return check_batchnorm(s, Mode::eval); }},
      {"linear", check_linear},
      {"relu", check_relu},
      {"clamp_scale", check_clamp_scale},
      {"scaled_sigmoid", check_scaled_sigmoid},
      {"softmax_cross_entropy", check_cross_entropy},
      {"smooth_l1", check_smooth_l1},
  };
}

/// Loss of a model on fixed random inputs/targets, with the matching output
/// gradient. Classifiers use cross-entropy, others smooth L1.
struct ModelProblem {
  Inputs<double> inputs;
  std::vector<int> classes;
  Tensor<double> targets;
};

inline ModelProblem random_problem(Model<double>& model, std::size_t batch, Rng& rng) {
  ModelProblem p;
  for (const auto& name : model.spec().input_names()) {
    Shape s{batch};
    for (auto e : model.node_shape(name)) s.push_back(e);
    p.inputs[name] = name == "motor_speeds" ? random_tensor(s, rng, 0, 256) : random_tensor(s, rng, 0, 1);
  }
  if (model.is_classifier()) {
    for (std::size_t i = 0; i < batch; ++i) p.classes.push_back(1 + static_cast<int>(rng.below(model.output_width())));
  } else {
    const double hi = model.spec().node(model.spec().output).kind == LayerKind::scaled_sigmoid ? 256.0 : 90.0;
    const double lo = hi == 256.0 ? 0.0 : -90.0;
    p.targets = random_tensor({batch, model.output_width()}, rng, lo, hi);
  }
  return p;
}

inline LossResult<double> model_loss(Model<double>& model, const ModelProblem& p) {
  auto out = model.forward(p.inputs, Mode::train);
  return model.is_classifier() ? softmax_cross_entropy(model.logits(), p.classes) : smooth_l1(out, p.targets);
}

/// End-to-end finite-difference check of every parameter tensor and every
/// input (at most `per_tensor` sampled coordinates each).
inline double check_model(const ModelSpec& spec, std::uint64_t seed, std::size_t batch = 3, std::size_t per_tensor = 48) {
  Model<double> model(spec, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto problem = random_problem(model, batch, rng);
  auto result = model_loss(model, problem);
  model.backward(result.grad);

  std::vector<std::pair<Tensor<double>*, Tensor<double>>> targets;
  for (auto& ref : model.parameters()) targets.emplace_back(ref.value, *ref.grad);
  for (auto& [name, tensor] : problem.inputs) targets.emplace_back(&tensor, model.input_gradient(name));

  // A step that crosses a ReLU or max-pool switch gives a wrong numeric
  // derivative. Such a coordinate is retried at a tenth of the step and keeps
  // the smaller error; a wrong analytic gradient fails at both steps.
  auto fn = [&] { return model_loss(model, problem).loss; };
  double worst = 0.0;
  for (auto& [point, analytic] : targets) {
    const auto coords = sample_coordinates(point->size(), per_tensor, rng);
    for (auto c : coords) {
      const std::vector<std::size_t> one{c};
      auto r = grad_check(fn, point->values(), span_of(analytic), kStep, one);
      if (r.max_rel_error > kKinkRetryAbove) r = grad_check(fn, point->values(), span_of(analytic), kStep / 10, one);
      if (r.non_finite_coordinate) return INFINITY;
      worst = std::max(worst, r.max_rel_error);
    }
  }
  return worst;
}

/// Every zoo network reduced to a 16x16 input.
inline std::vector<ModelSpec> miniature_zoo(std::size_t size = 16) {
  std::vector<ModelSpec> zoo;
  for (const auto& name : discrete_model_names()) zoo.push_back(miniature(make_discrete_model(name), size, size));
  for (const auto& name : realvalue_model_names()) zoo.push_back(miniature(make_realvalue_model(name), size, size));
  zoo.push_back(miniature(make_brake_throttle_model(), size, size));
  return zoo;
}

}  // namespace fsdrive::test_support
