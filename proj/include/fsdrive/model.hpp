#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/graph.hpp"
#include "fsdrive/layers.hpp"
#include "fsdrive/rng.hpp"
#include "fsdrive/tensor.hpp"

namespace fsdrive {

/// Named entry-point tensors, each with a leading batch axis.
template <typename T>
using Inputs = std::map<std::string, Tensor<T>>;

/// A view of one parameter tensor and its gradient.
template <typename T>
struct ParamRef {
  std::string name;  // "<node>.<member>"
  Tensor<T>* value;
  Tensor<T>* grad;   // null for running statistics
};

/// Instantiated ModelSpec: parameters plus per-node activation state.
///
/// A softmax_head node outputs probabilities in forward. Its backward treats
/// the incoming gradient as the gradient with respect to its logits, which is
/// what softmax_cross_entropy produces, so the fused loss can be fed straight
/// into backward().
template <typename T>
class Model {
public:
  Model() = default;

  explicit Model(ModelSpec spec, std::uint64_t seed = 0) : spec_(std::move(spec)), seed_(seed) {
    shapes_ = infer_shapes(spec_);
    order_ = topological_order(spec_);
    params_.resize(spec_.nodes.size());
    state_.resize(spec_.nodes.size());
    initialize(seed);
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Completed training epochs, persisted by checkpoints.
  std::uint64_t epoch = 0;

  const std::vector<std::size_t>& execution_order() const noexcept { return order_; }

  /// Replaces the execution order; must be a topological order of the spec.
  void set_execution_order(std::vector<std::size_t> order) {
    std::vector<bool> done(spec_.nodes.size(), false);
    require(order.size() == spec_.nodes.size(), "execution order must list every node once");
    for (auto i : order) {
      require(i < done.size() && !done[i], "execution order must list every node once");
      for (const auto& p : spec_.nodes[i].inputs)
        require(done[spec_.index_of(p)], "execution order runs '" + spec_.nodes[i].name + "' before its parent '" + p + "'");
      done[i] = true;
    }
    order_ = std::move(order);
  }

  /// Per-sample output shape of a node.
  const Shape& node_shape(std::string_view node) const { return shapes_[spec_.index_of(node)]; }

  std::vector<std::string> node_names() const {
    std::vector<std::string> names;
    for (auto i : order_) names.push_back(spec_.nodes[i].name);
    return names;
  }

  bool is_classifier() const { return spec_.node(spec_.output).kind == LayerKind::softmax_head; }

  std::size_t output_width() const { return shapes_[spec_.index_of(spec_.output)][0]; }

  LayerParams<T>& params(std::string_view node) { return params_[spec_.index_of(node)]; }
  const LayerParams<T>& params(std::string_view node) const { return params_[spec_.index_of(node)]; }

  /// Every parameter tensor in execution order. Running statistics are
  /// included (with a null gradient) when `with_running_stats` is set.
  std::vector<ParamRef<T>> parameters(bool with_running_stats = false) {
    std::vector<ParamRef<T>> refs;
    for (auto i : order_) {
      auto& p = params_[i];
      const auto& name = spec_.nodes[i].name;
      if (!p.weights.empty()) refs.push_back({name + ".weights", &p.weights, &p.grad_weights});
      if (!p.bias.empty()) refs.push_back({name + ".bias", &p.bias, &p.grad_bias});
      if (!p.gamma.empty()) refs.push_back({name + ".gamma", &p.gamma, &p.grad_gamma});
      if (!p.beta.empty()) refs.push_back({name + ".beta", &p.beta, &p.grad_beta});
      if (with_running_stats && !p.running_mean.empty()) {
        refs.push_back({name + ".running_mean", &p.running_mean, nullptr});
        refs.push_back({name + ".running_var", &p.running_var, nullptr});
      }
    }
    return refs;
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (const auto& r : parameters()) total += r.value->size();
    return total;
  }

  void zero_grad() {
    for (auto& r : parameters()) r.grad->fill(T{0});
  }

  /// Evaluates the graph. When `node_ns` is given it receives the wall time
  /// of each node, indexed by spec index.
  Tensor<T> forward(const Inputs<T>& inputs, Mode mode, std::vector<std::int64_t>* node_ns = nullptr) {
    using clock = std::chrono::steady_clock;
    if (node_ns) node_ns->assign(spec_.nodes.size(), 0);
    has_train_cache_ = false;
    std::size_t batch = 0;
    for (auto i : order_) {
      const LayerSpec& n = spec_.nodes[i];
      if (n.kind != LayerKind::input) continue;
      auto it = inputs.find(n.name);
      if (it == inputs.end()) fail(ErrorKind::invalid_argument, "missing named input '" + n.name + "'");
      const Shape& s = it->second.shape();
      Shape want = shapes_[i];
      if (s.size() != want.size() + 1 || !std::equal(want.begin(), want.end(), s.begin() + 1))
        fail(ErrorKind::shape_mismatch, "input '" + n.name + "' has shape " + to_string(s) + ", expected (batch)x" + to_string(want));
      if (batch == 0) batch = s[0];
      if (s[0] != batch) fail(ErrorKind::shape_mismatch, "input '" + n.name + "' batch " + std::to_string(s[0]) + " differs from " + std::to_string(batch));
    }
    for (const auto& [name, _] : inputs) {
      const auto idx = spec_.index_of(name);
      if (spec_.nodes[idx].kind != LayerKind::input) fail(ErrorKind::invalid_argument, "'" + name + "' is not an input node");
    }
    for (auto i : order_) {
      const auto t0 = clock::now();
      run_node(i, inputs, mode);
      if (node_ns) (*node_ns)[i] = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - t0).count();
    }
    has_train_cache_ = mode == Mode::train;
    return state_[spec_.index_of(spec_.output)].output;
  }

  /// Activation of a node from the most recent forward.
  const Tensor<T>& activation(std::string_view node) const {
    const auto& t = state_[spec_.index_of(node)].output;
    require(!t.empty(), "no activation for node '" + std::string(node) + "'; run forward first");
    return t;
  }

  /// Logits feeding the softmax head (classifiers only).
  const Tensor<T>& logits() const {
    require(is_classifier(), "model '" + spec_.name + "' has no softmax head");
    return activation(spec_.node(spec_.output).inputs[0]);
  }

  /// Reverse-order pass from the output gradient. Fills every parameter
  /// gradient and the gradient of each input node.
  void backward(const Tensor<T>& grad_output) {
    if (!has_train_cache_) fail(ErrorKind::invalid_argument, "backward requires a preceding train-mode forward");
    const auto out_idx = spec_.index_of(spec_.output);
    if (grad_output.shape() != state_[out_idx].output.shape())
      fail(ErrorKind::shape_mismatch, "output gradient " + to_string(grad_output.shape()) + " vs output " +
                                          to_string(state_[out_idx].output.shape()));
    for (auto& s : state_) s.grad = Tensor<T>();
    state_[out_idx].grad = grad_output;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) backward_node(*it);
  }

  const Tensor<T>& input_gradient(std::string_view input) const {
    const auto& g = state_[spec_.index_of(input)].grad;
    require(!g.empty(), "no gradient recorded for '" + std::string(input) + "'");
    return g;
  }

private:
  struct NodeState {
    Tensor<T> output;
    Tensor<T> grad;
    std::vector<std::size_t> argmax;
    BatchNormCache<T> bn;
  };

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto i : order_) {
      const LayerSpec& n = spec_.nodes[i];
      auto& p = params_[i];
      const Shape& in = n.inputs.empty() ? Shape{} : shapes_[spec_.index_of(n.inputs[0])];
      auto uniform_fill = [&](Tensor<T>& t, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      };
      if (n.kind == LayerKind::conv) {
        p.weights = Tensor<T>({n.depth, in[0], n.filter, n.filter});
        uniform_fill(p.weights, in[0] * n.filter * n.filter);
        p.bias = Tensor<T>({n.depth});
      } else if (n.kind == LayerKind::linear) {
        p.weights = Tensor<T>({n.width, in[0]});
        uniform_fill(p.weights, in[0]);
        p.bias = Tensor<T>({n.width});
      } else if (n.kind == LayerKind::batchnorm) {
        p.gamma = Tensor<T>({in[0]}, T{1});
        p.beta = Tensor<T>({in[0]});
        p.running_mean = Tensor<T>({in[0]});
        p.running_var = Tensor<T>({in[0]}, T{1});
      }
      if (!p.weights.empty()) p.grad_weights = zeros_like(p.weights);
      if (!p.bias.empty()) p.grad_bias = zeros_like(p.bias);
      if (!p.gamma.empty()) p.grad_gamma = zeros_like(p.gamma);
      if (!p.beta.empty()) p.grad_beta = zeros_like(p.beta);
    }
  }

  const Tensor<T>& parent_output(const LayerSpec& n, std::size_t k = 0) const {
    return state_[spec_.index_of(n.inputs[k])].output;
  }

  void run_node(std::size_t i, const Inputs<T>& inputs, Mode mode) {
    const LayerSpec& n = spec_.nodes[i];
    auto& st = state_[i];
    auto& p = params_[i];
    switch (n.kind) {
      case LayerKind::input: st.output = inputs.at(n.name); break;
      case LayerKind::conv: st.output = conv2d(parent_output(n), p.weights, p.bias, n.stride); break;
      case LayerKind::batchnorm:
        st.output = batchnorm2d(parent_output(n), p, mode, kBatchNormEps, kBatchNormMomentum, &st.bn);
        break;
      case LayerKind::relu: st.output = relu(parent_output(n)); break;
      case LayerKind::maxpool: st.output = maxpool(parent_output(n), n.window, n.stride, &st.argmax); break;
      case LayerKind::flatten: {
        const auto& x = parent_output(n);
        st.output = x.reshaped({x.dim(0), x.size() / x.dim(0)});
        break;
      }
      case LayerKind::linear: st.output = linear(parent_output(n), p.weights, p.bias); break;
      case LayerKind::clamp_scale: st.output = clamp_scale(parent_output(n), n.lo, n.hi); break;
      case LayerKind::scaled_sigmoid: st.output = scaled_sigmoid(parent_output(n), n.scale); break;
      case LayerKind::softmax_head: st.output = softmax(parent_output(n)); break;
      case LayerKind::concat: {
        const std::size_t batch = parent_output(n).dim(0);
        std::size_t width = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) width += parent_output(n, k).dim(1);
        Tensor<T> out({batch, width});
        std::size_t offset = 0;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
          const auto& x = parent_output(n, k);
          const std::size_t w = x.dim(1);
          for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(x.data() + b * w, w, out.data() + b * width + offset);
          offset += w;
        }
        st.output = std::move(out);
        break;
      }
    }
  }

  void accumulate(std::size_t node, Tensor<T> g) {
    auto& dst = state_[node].grad;
    if (dst.empty()) {
      dst = std::move(g);
    } else {
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g[k];
    }
  }

  void backward_node(std::size_t i) {
    const LayerSpec& n = spec_.nodes[i];
    auto& st = state_[i];
    auto& p = params_[i];
    if (n.kind == LayerKind::input) return;
    if (st.grad.empty()) st.grad = zeros_like(st.output);
    const Tensor<T>& g = st.grad;
    const auto parent = n.inputs.empty() ? 0 : spec_.index_of(n.inputs[0]);
    const Tensor<T>& x = state_[parent].output;
    switch (n.kind) {
      case LayerKind::conv: {
        auto grads = conv2d_backward(x, p.weights, n.stride, g);
        p.grad_weights = std::move(grads.weights);
        p.grad_bias = std::move(grads.bias);
        accumulate(parent, std::move(grads.input));
        break;
      }
      case LayerKind::batchnorm: accumulate(parent, batchnorm2d_backward(st.bn, p, g)); break;
      case LayerKind::relu: accumulate(parent, relu_backward(x, g)); break;
      case LayerKind::maxpool: accumulate(parent, maxpool_backward(x.shape(), st.argmax, g)); break;
      case LayerKind::flatten: accumulate(parent, g.reshaped(x.shape())); break;
      case LayerKind::linear: {
        auto grads = linear_backward(x, p.weights, g);
        p.grad_weights = std::move(grads.weights);
        p.grad_bias = std::move(grads.bias);
        accumulate(parent, std::move(grads.input));
        break;
      }
      case LayerKind::clamp_scale: accumulate(parent, clamp_scale_backward(x, n.lo, n.hi, g)); break;
      case LayerKind::scaled_sigmoid: accumulate(parent, scaled_sigmoid_backward(x, n.scale, g)); break;
      case LayerKind::softmax_head: accumulate(parent, g); break;
      case LayerKind::concat: {
        const std::size_t batch = g.dim(0), width = g.dim(1);
        std::size_t offset = 0;
        for (const auto& name : n.inputs) {
          const auto pi = spec_.index_of(name);
          const std::size_t w = state_[pi].output.dim(1);
          Tensor<T> part({batch, w});
          for (std::size_t b = 0; b < batch; ++b)
            std::copy_n(g.data() + b * width + offset, w, part.data() + b * w);
          accumulate(pi, std::move(part));
          offset += w;
        }
        break;
      }
      case LayerKind::input: break;
    }
  }

  ModelSpec spec_;
  std::uint64_t seed_ = 0;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> order_;
  std::vector<LayerParams<T>> params_;
  std::vector<NodeState> state_;
  bool has_train_cache_ = false;
};

}  // namespace fsdrive
