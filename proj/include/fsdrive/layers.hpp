#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "fsdrive/error.hpp"
#include "fsdrive/tensor.hpp"

// Forward/backward primitives. Each backward takes the forward inputs (or a
// cache filled by forward) plus the upstream gradient and returns gradients
// for the input and, where present, the parameters.

namespace fsdrive {

enum class Mode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Parameters of one layer. Unused members stay empty.
template <typename T>
struct LayerParams {
  Tensor<T> weights;
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;

  Tensor<T> grad_weights;
  Tensor<T> grad_bias;
  Tensor<T> grad_gamma;
  Tensor<T> grad_beta;
};

namespace detail {

inline void expect_rank(std::size_t rank, std::size_t want, const char* op, const Shape& shape) {
  if (rank != want)
    fail(ErrorKind::shape_mismatch, std::string(op) + " expects a " + std::to_string(want) +
                                        "-D input, got " + to_string(shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d: valid (unpadded) convolution, square kernels.

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride) {
  return (in - k) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t stride) {
  detail::expect_rank(input.rank(), 4, "conv2d", input.shape());
  detail::expect_rank(weights.rank(), 4, "conv2d kernel", weights.shape());
  require(stride > 0, "conv2d stride must be positive");
  const std::size_t batch = input.dim(0), in_c = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t out_c = weights.dim(0), k = weights.dim(2);
  if (weights.dim(1) != in_c)
    fail(ErrorKind::shape_mismatch, "conv2d input " + to_string(input.shape()) + " has " + std::to_string(in_c) +
                                        " channels but kernel " + to_string(weights.shape()) + " expects " +
                                        std::to_string(weights.dim(1)));
  if (weights.dim(3) != k) fail(ErrorKind::shape_mismatch, "conv2d kernel must be square, got " + to_string(weights.shape()));
  if (k > in_h || k > in_w)
    fail(ErrorKind::shape_mismatch, "conv2d kernel " + to_string(weights.shape()) + " larger than input " +
                                        to_string(input.shape()));
  if (bias.size() != out_c)
    fail(ErrorKind::shape_mismatch, "conv2d bias " + to_string(bias.shape()) + " does not match kernel " +
                                        to_string(weights.shape()));

  const std::size_t out_h = conv_out_extent(in_h, k, stride), out_w = conv_out_extent(in_w, k, stride);
  Tensor<T> out({batch, out_c, out_h, out_w});
  const T* x = input.data();
  const T* w = weights.data();
  T* y = out.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      T* plane = y + (n * out_c + oc) * out_h * out_w;
      std::fill(plane, plane + out_h * out_w, bias[oc]);
      for (std::size_t ic = 0; ic < in_c; ++ic) {
        const T* xin = x + (n * in_c + ic) * in_h * in_w;
        const T* kern = w + (oc * in_c + ic) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const T wv = kern[kh * k + kw];
            for (std::size_t oh = 0; oh < out_h; ++oh) {
              const T* row = xin + (oh * stride + kh) * in_w + kw;
              T* orow = plane + oh * out_w;
              if (stride == 1) {
                for (std::size_t ow = 0; ow < out_w; ++ow) orow[ow] += wv * row[ow];
              } else {
                for (std::size_t ow = 0; ow < out_w; ++ow) orow[ow] += wv * row[ow * stride];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights, std::size_t stride,
                               const Tensor<T>& grad_out) {
  const std::size_t batch = input.dim(0), in_c = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t out_c = weights.dim(0), k = weights.dim(2);
  const std::size_t out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  Conv2dGrads<T> g{zeros_like(input), zeros_like(weights), Tensor<T>({out_c})};
  const T* x = input.data();
  const T* w = weights.data();
  const T* dy = grad_out.data();
  T* dx = g.input.data();
  T* dw = g.weights.data();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t oc = 0; oc < out_c; ++oc) {
      const T* gplane = dy + (n * out_c + oc) * out_h * out_w;
      T bsum = 0;
      for (std::size_t i = 0; i < out_h * out_w; ++i) bsum += gplane[i];
      g.bias[oc] += bsum;
      for (std::size_t ic = 0; ic < in_c; ++ic) {
        const T* xin = x + (n * in_c + ic) * in_h * in_w;
        T* dxin = dx + (n * in_c + ic) * in_h * in_w;
        const T* kern = w + (oc * in_c + ic) * k * k;
        T* dkern = dw + (oc * in_c + ic) * k * k;
        for (std::size_t kh = 0; kh < k; ++kh) {
          for (std::size_t kw = 0; kw < k; ++kw) {
            const T wv = kern[kh * k + kw];
            // Eight fixed lanes let the reduction vectorize without reordering across runs.
            T lanes[8] = {};
            T acc = 0;
            for (std::size_t oh = 0; oh < out_h; ++oh) {
              const T* row = xin + (oh * stride + kh) * in_w + kw;
              T* drow = dxin + (oh * stride + kh) * in_w + kw;
              const T* grow = gplane + oh * out_w;
              if (stride == 1) {
                std::size_t ow = 0;
                for (; ow + 8 <= out_w; ow += 8)
                  for (std::size_t l = 0; l < 8; ++l) lanes[l] += grow[ow + l] * row[ow + l];
                for (; ow < out_w; ++ow) acc += grow[ow] * row[ow];
                for (std::size_t i = 0; i < out_w; ++i) drow[i] += wv * grow[i];
              } else {
                for (std::size_t ow = 0; ow < out_w; ++ow) {
                  acc += grow[ow] * row[ow * stride];
                  drow[ow * stride] += wv * grow[ow];
                }
              }
            }
            for (T lane : lanes) acc += lane;
            dkern[kh * k + kw] += acc;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// maxpool

inline std::size_t pool_out_extent(std::size_t in, std::size_t window, std::size_t stride) {
  return (in - window) / stride + 1;
}

/// Max pooling. `argmax` receives, per output element, the flat input index
/// of the first (row-major) maximal element of its window.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& input, std::size_t window, std::size_t stride, std::vector<std::size_t>* argmax = nullptr) {
  detail::expect_rank(input.rank(), 4, "maxpool", input.shape());
  require(window > 0 && stride > 0, "maxpool window and stride must be positive");
  const std::size_t batch = input.dim(0), ch = input.dim(1), in_h = input.dim(2), in_w = input.dim(3);
  if (window > in_h || window > in_w)
    fail(ErrorKind::shape_mismatch, "maxpool window " + std::to_string(window) + " larger than input " +
                                        to_string(input.shape()));
  const std::size_t out_h = pool_out_extent(in_h, window, stride), out_w = pool_out_extent(in_w, window, stride);
  Tensor<T> out({batch, ch, out_h, out_w});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < batch * ch; ++plane) {
    const std::size_t base = plane * in_h * in_w;
    for (std::size_t oh = 0; oh < out_h; ++oh) {
      for (std::size_t ow = 0; ow < out_w; ++ow, ++o) {
        std::size_t best = base + oh * stride * in_w + ow * stride;
        for (std::size_t r = 0; r < window; ++r) {
          for (std::size_t c = 0; c < window; ++c) {
            const std::size_t idx = base + (oh * stride + r) * in_w + ow * stride + c;
            if (input[idx] > input[best]) best = idx;
          }
        }
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> maxpool_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax, const Tensor<T>& grad_out) {
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[argmax[o]] += grad_out[o];
  return dx;
}

// ---------------------------------------------------------------------------
// batchnorm2d: per-channel statistics over (batch, height, width).

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;      // x-hat
  std::vector<T> inv_std;    // 1 / sqrt(var + eps) per channel
  Mode mode = Mode::eval;
};

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, LayerParams<T>& params, Mode mode, double eps = kBatchNormEps,
                      double momentum = kBatchNormMomentum, BatchNormCache<T>* cache = nullptr) {
  detail::expect_rank(input.rank(), 4, "batchnorm2d", input.shape());
  require(eps > 0, "batchnorm2d eps must be positive");
  const std::size_t batch = input.dim(0), ch = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (params.gamma.size() != ch || params.beta.size() != ch)
    fail(ErrorKind::shape_mismatch, "batchnorm2d input " + to_string(input.shape()) + " vs gamma " +
                                        to_string(params.gamma.shape()));
  const std::size_t count = batch * hw;
  Tensor<T> out(input.shape());
  if (cache) {
    cache->normalized = Tensor<T>(input.shape());
    cache->inv_std.assign(ch, T{0});
    cache->mode = mode;
  }
  for (std::size_t c = 0; c < ch; ++c) {
    double mean = 0.0, var = 0.0;
    if (mode == Mode::train) {
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = input.data() + (n * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = input.data() + (n * ch + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      params.running_mean[c] = static_cast<T>((1.0 - momentum) * params.running_mean[c] + momentum * mean);
      params.running_var[c] = static_cast<T>((1.0 - momentum) * params.running_var[c] + momentum * unbiased);
    } else {
      mean = params.running_mean[c];
      var = params.running_var[c];
    }
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + eps));
    const T m = static_cast<T>(mean);
    const T g = params.gamma[c], b = params.beta[c];
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const T xhat = (input[off + i] - m) * inv_std;
        if (cache) cache->normalized[off + i] = xhat;
        out[off + i] = g * xhat + b;
      }
    }
    if (cache) cache->inv_std[c] = inv_std;
  }
  return out;
}

/// Fills params.grad_gamma / grad_beta and returns the input gradient.
template <typename T>
Tensor<T> batchnorm2d_backward(const BatchNormCache<T>& cache, LayerParams<T>& params, const Tensor<T>& grad_out) {
  const std::size_t batch = grad_out.dim(0), ch = grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  const T count = static_cast<T>(batch * hw);
  params.grad_gamma = Tensor<T>({ch});
  params.grad_beta = Tensor<T>({ch});
  Tensor<T> dx(grad_out.shape());
  for (std::size_t c = 0; c < ch; ++c) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xhat += grad_out[off + i] * cache.normalized[off + i];
      }
    }
    params.grad_gamma[c] = sum_dy_xhat;
    params.grad_beta[c] = sum_dy;
    const T scale = params.gamma[c] * cache.inv_std[c];
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * ch + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        if (cache.mode == Mode::train)
          dx[off + i] = scale * (grad_out[off + i] - sum_dy / count - cache.normalized[off + i] * sum_dy_xhat / count);
        else
          dx[off + i] = scale * grad_out[off + i];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// linear: y = x W^T + b, x is (batch, in_features).

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias) {
  detail::expect_rank(input.rank(), 2, "linear", input.shape());
  const std::size_t batch = input.dim(0), in = input.dim(1), out_f = weights.dim(0);
  if (weights.rank() != 2 || weights.dim(1) != in)
    fail(ErrorKind::shape_mismatch, "linear input " + to_string(input.shape()) + " does not match weights " +
                                        to_string(weights.shape()));
  if (bias.size() != out_f)
    fail(ErrorKind::shape_mismatch, "linear bias " + to_string(bias.shape()) + " does not match weights " +
                                        to_string(weights.shape()));
  Tensor<T> out({batch, out_f});
  for (std::size_t n = 0; n < batch; ++n) {
    const T* x = input.data() + n * in;
    for (std::size_t o = 0; o < out_f; ++o) {
      const T* w = weights.data() + o * in;
      T acc = 0;
      for (std::size_t i = 0; i < in; ++i) acc += x[i] * w[i];
      out[n * out_f + o] = acc + bias[o];
    }
  }
  return out;
}

template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& grad_out) {
  const std::size_t batch = input.dim(0), in = input.dim(1), out_f = weights.dim(0);
  LinearGrads<T> g{zeros_like(input), zeros_like(weights), Tensor<T>({out_f})};
  for (std::size_t n = 0; n < batch; ++n) {
    const T* x = input.data() + n * in;
    T* dx = g.input.data() + n * in;
    for (std::size_t o = 0; o < out_f; ++o) {
      const T gy = grad_out[n * out_f + o];
      if (gy == T{0}) continue;
      const T* w = weights.data() + o * in;
      T* dw = g.weights.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        dx[i] += gy * w[i];
        dw[i] += gy * x[i];
      }
      g.bias[o] += gy;
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Elementwise activations.

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return out;
}

/// Gradient is zero where the input is <= 0.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out) {
  Tensor<T> dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(input[i] > T{0})) dx[i] = T{0};
  return dx;
}

/// Hard-tanh with bounds [lo, hi].
template <typename T>
Tensor<T> clamp_scale(const Tensor<T>& input, double lo, double hi) {
  require(lo < hi, "clamp_scale requires lo < hi");
  Tensor<T> out = input;
  for (auto& v : out.values()) v = std::clamp(v, static_cast<T>(lo), static_cast<T>(hi));
  return out;
}

template <typename T>
Tensor<T> clamp_scale_backward(const Tensor<T>& input, double lo, double hi, const Tensor<T>& grad_out) {
  Tensor<T> dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(input[i] > static_cast<T>(lo) && input[i] < static_cast<T>(hi))) dx[i] = T{0};
  return dx;
}

namespace detail {

template <typename T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

}  // namespace detail

/// scale * sigmoid(x). Saturated float outputs are pulled back inside
/// (0, scale) so the open-interval bound holds at any precision.
template <typename T>
Tensor<T> scaled_sigmoid(const Tensor<T>& input, double scale) {
  require(scale > 0, "scaled_sigmoid scale must be positive");
  Tensor<T> out = input;
  const T s = static_cast<T>(scale);
  for (auto& v : out.values()) {
    T y = s * detail::sigmoid(v);
    if (!(y < s)) y = std::nextafter(s, T{0});
    if (!(y > T{0})) y = std::numeric_limits<T>::denorm_min();
    v = y;
  }
  return out;
}

template <typename T>
Tensor<T> scaled_sigmoid_backward(const Tensor<T>& input, double scale, const Tensor<T>& grad_out) {
  Tensor<T> dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    const T sg = detail::sigmoid(input[i]);
    dx[i] *= static_cast<T>(scale) * sg * (T{1} - sg);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax and losses.

/// Row-wise softmax of (batch, classes) logits, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  detail::expect_rank(logits.rank(), 2, "softmax", logits.shape());
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const T* row = logits.data() + n * classes;
    const T mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c] - mx));
    for (std::size_t c = 0; c < classes; ++c)
      out[n * classes + c] = static_cast<T>(std::exp(static_cast<double>(row[c] - mx)) / denom);
  }
  return out;
}

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

/// Mean cross-entropy of softmax(logits). Class indices are 1-based.
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> true_class) {
  detail::expect_rank(logits.rank(), 2, "softmax_cross_entropy", logits.shape());
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  require(classes >= 2, "softmax_cross_entropy needs at least two classes");
  if (true_class.size() != batch)
    fail(ErrorKind::shape_mismatch, "softmax_cross_entropy: " + std::to_string(true_class.size()) +
                                        " labels for logits " + to_string(logits.shape()));
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  for (std::size_t n = 0; n < batch; ++n) {
    const int label = true_class[n];
    if (label < 1 || static_cast<std::size_t>(label) > classes)
      fail(ErrorKind::invalid_argument, "class index " + std::to_string(label) + " outside [1, " +
                                            std::to_string(classes) + "]");
    const T* row = logits.data() + n * classes;
    const double mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t c = 0; c < classes; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
    const double log_denom = std::log(denom);
    const std::size_t t = static_cast<std::size_t>(label - 1);
    r.loss += -(static_cast<double>(row[t]) - mx - log_denom);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(static_cast<double>(row[c]) - mx - log_denom);
      r.grad[n * classes + c] = static_cast<T>((p - (c == t ? 1.0 : 0.0)) / static_cast<double>(batch));
    }
  }
  r.loss /= static_cast<double>(batch);
  return r;
}

/// Mean smooth-L1 (Huber, delta 1) over all elements.
template <typename T>
LossResult<T> smooth_l1(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape())
    fail(ErrorKind::shape_mismatch, "smooth_l1 prediction " + to_string(prediction.shape()) + " vs target " +
                                        to_string(target.shape()));
  const double n = static_cast<double>(prediction.size());
  LossResult<T> r{0.0, Tensor<T>(prediction.shape())};
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
    const double ad = std::abs(d);
    if (ad < 1.0) {
      r.loss += 0.5 * d * d;
      r.grad[i] = static_cast<T>(d / n);
    } else {
      r.loss += ad - 0.5;
      r.grad[i] = static_cast<T>((d > 0 ? 1.0 : -1.0) / n);
    }
  }
  r.loss /= n;
  return r;
}

}  // namespace fsdrive
