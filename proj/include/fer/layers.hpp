#pragma once

// Forward and backward passes for every layer kind the FER models use.
//
// Each layer exists twice: as a pair of free functions (`*_forward` returning
// the output plus a cache, `*_backward` consuming that cache) and as a
// stateful `Layer` wrapper that owns parameters, gradients and the cache of
// the most recent forward call.

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fer/error.hpp"
#include "fer/kernels.hpp"
#include "fer/random.hpp"
#include "fer/tensor.hpp"

namespace fer {

enum class Mode { train, infer };

// ---------------------------------------------------------------------------
// Convolution: stride 1, zero "same" padding, odd square kernel.

template <typename T>
struct ConvParams {
  Tensor<T> weights;  // [out, in, k, k]
  Tensor<T> bias;     // [out]
  T l2_lambda{};

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel() const { return weights.dim(2); }
};

template <typename T>
struct ConvCache {
  Tensor<T> input;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input, weights, bias;
};

template <typename T>
std::pair<Tensor<T>, ConvCache<T>> conv2d_forward(Tensor<T> x, const ConvParams<T>& p) {
  const Shape4 s = shape4(x, "conv2d input");
  if (s.c != p.in_channels()) {
    throw ShapeError("conv2d expects " + std::to_string(p.in_channels()) + " input channels, got " +
                     std::to_string(s.c));
  }
  const std::size_t k = p.kernel();
  if (k % 2 == 0 || p.weights.dim(3) != k) {
    throw ShapeError("conv2d kernel must be odd and square, got " + shape_string(p.weights.shape()));
  }
  const std::size_t out = p.out_channels(), patch = s.c * k * k, plane = s.plane();
  Tensor<T> y({s.n, out, s.h, s.w});
  std::vector<T> cols(patch * plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    kernels::im2col_same(x.raw() + n * s.image(), s.c, s.h, s.w, k, cols.data());
    T* yn = y.raw() + n * out * plane;
    kernels::gemm(false, false, out, plane, patch, p.weights.raw(), cols.data(), yn, false);
    for (std::size_t o = 0; o < out; ++o) {
      const T b = p.bias[o];
      T* row = yn + o * plane;
      for (std::size_t i = 0; i < plane; ++i) row[i] += b;
    }
  }
  return {std::move(y), ConvCache<T>{std::move(x)}};
}

template <typename T>
ConvGrads<T> conv2d_backward(const ConvParams<T>& p, const ConvCache<T>& cache,
                             const Tensor<T>& grad_out) {
  const Shape4 s = shape4(cache.input, "conv2d cache");
  const std::size_t k = p.kernel(), out = p.out_channels(), patch = s.c * k * k,
                    plane = s.plane();
  if (grad_out.shape() != Extents{s.n, out, s.h, s.w}) {
    throw ShapeError("conv2d upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  ConvGrads<T> g{Tensor<T>(cache.input.shape()), Tensor<T>(p.weights.shape()),
                 Tensor<T>(p.bias.shape())};
  std::vector<T> cols(patch * plane), dcols(patch * plane);
  for (std::size_t n = 0; n < s.n; ++n) {
    const T* dy = grad_out.raw() + n * out * plane;
    kernels::im2col_same(cache.input.raw() + n * s.image(), s.c, s.h, s.w, k, cols.data());
    kernels::gemm(false, true, out, patch, plane, dy, cols.data(), g.weights.raw(), true);
    for (std::size_t o = 0; o < out; ++o) {
      T acc{};
      for (std::size_t i = 0; i < plane; ++i) acc += dy[o * plane + i];
      g.bias[o] += acc;
    }
    kernels::gemm(true, false, patch, plane, out, p.weights.raw(), dy, dcols.data(), false);
    kernels::col2im_same_add(dcols.data(), s.c, s.h, s.w, k, g.input.raw() + n * s.image());
  }
  return g;
}

// ---------------------------------------------------------------------------
// 2x2 max pooling, stride 2. Odd trailing rows/cols are dropped.

struct PoolCache {
  Extents input_shape;
  std::vector<std::uint32_t> winners;  // flat input index per output element
};

template <typename T>
std::pair<Tensor<T>, PoolCache> maxpool2d_forward(const Tensor<T>& x) {
  const Shape4 s = shape4(x, "maxpool input");
  if (s.h < 2 || s.w < 2) {
    throw ShapeError("maxpool needs at least 2x2 spatial input, got " + shape_string(x.shape()));
  }
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor<T> y({s.n, s.c, oh, ow});
  PoolCache cache{x.shape(), std::vector<std::uint32_t>(y.size())};
  std::size_t o = 0;
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const std::size_t base = nc * s.plane();
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j, ++o) {
        std::size_t best = base + 2 * i * s.w + 2 * j;
        // Row-major scan; strict comparison keeps the earliest maximum.
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = base + (2 * i + di) * s.w + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        }
        y[o] = x[best];
        cache.winners[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

template <typename T>
Tensor<T> maxpool2d_backward(const PoolCache& cache, const Tensor<T>& grad_out) {
  if (grad_out.size() != cache.winners.size()) {
    throw ShapeError("maxpool upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  Tensor<T> dx(cache.input_shape);
  for (std::size_t o = 0; o < cache.winners.size(); ++o) dx[cache.winners[o]] += grad_out[o];
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU

struct ReluCache {
  std::vector<std::uint8_t> active;
};

template <typename T>
std::pair<Tensor<T>, ReluCache> relu_forward(Tensor<T> x) {
  ReluCache cache{std::vector<std::uint8_t>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool on = x[i] > T{};
    cache.active[i] = on;
    if (!on) x[i] = T{};
  }
  return {std::move(x), std::move(cache)};
}

template <typename T>
Tensor<T> relu_backward(const ReluCache& cache, Tensor<T> grad_out) {
  if (grad_out.size() != cache.active.size()) {
    throw ShapeError("relu upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    if (!cache.active[i]) grad_out[i] = T{};
  }
  return grad_out;
}

// ---------------------------------------------------------------------------
// Batch normalization. Channels are axis 1; statistics run over every other
// axis (n for [n, f], n/h/w for NCHW).

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma, beta, running_mean, running_var;
  double momentum = 0.99;
  double epsilon = 1e-5;

  static BatchNormParams identity(std::size_t channels) {
    return {Tensor<T>({channels}, T{1}), Tensor<T>({channels}, T{0}), Tensor<T>({channels}, T{0}),
            Tensor<T>({channels}, T{1})};
  }
  std::size_t channels() const { return gamma.size(); }
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;
  std::vector<double> inv_std;
  Mode mode = Mode::train;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input, gamma, beta;
};

namespace detail {

// (batch, channels, spatial) view of a rank-2 or rank-4 activation.
template <typename T>
std::array<std::size_t, 3> bn_geometry(const Tensor<T>& x, std::size_t channels) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batchnorm expects [n,f] or NCHW input, got " + shape_string(x.shape()));
  }
  if (x.dim(1) != channels) {
    throw ShapeError("batchnorm configured for " + std::to_string(channels) +
                     " channels, input has " + std::to_string(x.dim(1)));
  }
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  return {x.dim(0), channels, spatial};
}

}  // namespace detail

template <typename T>
std::pair<Tensor<T>, BatchNormCache<T>> batchnorm_forward(const Tensor<T>& x,
                                                          BatchNormParams<T>& p, Mode mode) {
  const auto [n, channels, spatial] = detail::bn_geometry(x, p.channels());
  if (mode == Mode::train && n < 2) {
    throw ShapeError("batchnorm in train mode needs a batch of at least 2, got " +
                     std::to_string(n));
  }
  Tensor<T> y(x.shape());
  BatchNormCache<T> cache{Tensor<T>(x.shape()), std::vector<double>(channels), mode};
  const double count = static_cast<double>(n * spatial);
  for (std::size_t c = 0; c < channels; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = x.raw() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) sum += src[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = x.raw() + (b * channels + c) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = src[i] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      p.running_mean[c] = static_cast<T>(p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean);
      p.running_var[c] = static_cast<T>(p.momentum * p.running_var[c] + (1.0 - p.momentum) * var);
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + p.epsilon);
    cache.inv_std[c] = inv_std;
    const double g = p.gamma[c], bt = p.beta[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double xh = (x[off + i] - mean) * inv_std;
        cache.normalized[off + i] = static_cast<T>(xh);
        y[off + i] = static_cast<T>(g * xh + bt);
      }
    }
  }
  return {std::move(y), std::move(cache)};
}

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BatchNormParams<T>& p, const BatchNormCache<T>& cache,
                                     const Tensor<T>& grad_out) {
  if (grad_out.shape() != cache.normalized.shape()) {
    throw ShapeError("batchnorm upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  const auto [n, channels, spatial] = detail::bn_geometry(grad_out, p.channels());
  BatchNormGrads<T> g{Tensor<T>(grad_out.shape()), Tensor<T>(p.gamma.shape()),
                      Tensor<T>(p.beta.shape())};
  const double count = static_cast<double>(n * spatial);
  for (std::size_t c = 0; c < channels; ++c) {
    double dgamma = 0.0, dbeta = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        dgamma += static_cast<double>(grad_out[off + i]) * cache.normalized[off + i];
        dbeta += grad_out[off + i];
      }
    }
    g.gamma[c] = static_cast<T>(dgamma);
    g.beta[c] = static_cast<T>(dbeta);
    const double scale = static_cast<double>(p.gamma[c]) * cache.inv_std[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels + c) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) {
        const double dy = grad_out[off + i];
        const double dx = cache.mode == Mode::train
                              ? scale / count *
                                    (count * dy - dbeta - cache.normalized[off + i] * dgamma)
                              : scale * dy;
        g.input[off + i] = static_cast<T>(dx);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Inverted dropout.

struct DropoutParams {
  double rate = 0.0;
};

template <typename T>
struct DropoutCache {
  std::vector<T> scale;  // empty means identity (infer mode or rate 0)
};

template <typename T>
std::pair<Tensor<T>, DropoutCache<T>> dropout_forward(Tensor<T> x, const DropoutParams& p,
                                                      Mode mode, Rng& rng) {
  if (!(p.rate >= 0.0 && p.rate < 1.0)) {
    throw ShapeError("dropout rate must lie in [0, 1), got " + std::to_string(p.rate));
  }
  DropoutCache<T> cache;
  if (mode == Mode::infer || p.rate == 0.0) return {std::move(x), std::move(cache)};
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p.rate));
  cache.scale.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T s = uniform01(rng) < p.rate ? T{} : keep_scale;
    cache.scale[i] = s;
    x[i] *= s;
  }
  return {std::move(x), std::move(cache)};
}

template <typename T>
Tensor<T> dropout_backward(const DropoutCache<T>& cache, Tensor<T> grad_out) {
  if (cache.scale.empty()) return grad_out;
  if (cache.scale.size() != grad_out.size()) {
    throw ShapeError("dropout upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out[i] *= cache.scale[i];
  return grad_out;
}

// ---------------------------------------------------------------------------
// Fully connected: y = x W^T + b.

template <typename T>
struct DenseParams {
  Tensor<T> weights;  // [out, in]
  Tensor<T> bias;     // [out]
  T l2_lambda{};

  std::size_t out_features() const { return weights.dim(0); }
  std::size_t in_features() const { return weights.dim(1); }
};

template <typename T>
struct DenseCache {
  Tensor<T> input;
};

template <typename T>
struct DenseGrads {
  Tensor<T> input, weights, bias;
};

template <typename T>
std::pair<Tensor<T>, DenseCache<T>> dense_forward(Tensor<T> x, const DenseParams<T>& p) {
  if (x.rank() != 2 || x.dim(1) != p.in_features()) {
    throw ShapeError("dense layer expects [n," + std::to_string(p.in_features()) + "] input, got " +
                     shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), in = p.in_features(), out = p.out_features();
  Tensor<T> y({n, out});
  kernels::gemm(false, true, n, out, in, x.raw(), p.weights.raw(), y.raw(), false);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out; ++o) y[r * out + o] += p.bias[o];
  }
  return {std::move(y), DenseCache<T>{std::move(x)}};
}

template <typename T>
DenseGrads<T> dense_backward(const DenseParams<T>& p, const DenseCache<T>& cache,
                             const Tensor<T>& grad_out) {
  const std::size_t n = cache.input.dim(0), in = p.in_features(), out = p.out_features();
  if (grad_out.shape() != Extents{n, out}) {
    throw ShapeError("dense upstream gradient has shape " + shape_string(grad_out.shape()));
  }
  DenseGrads<T> g{Tensor<T>({n, in}), Tensor<T>(p.weights.shape()), Tensor<T>(p.bias.shape())};
  kernels::gemm(false, false, n, in, out, grad_out.raw(), p.weights.raw(), g.input.raw(), false);
  kernels::gemm(true, false, out, in, n, grad_out.raw(), cache.input.raw(), g.weights.raw(), false);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < out; ++o) g.bias[o] += grad_out[r * out + o];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Softmax + categorical cross-entropy.

template <typename T>
struct SoftmaxCrossEntropy {
  double loss = 0.0;      // mean over the batch of -ln p[label]
  Tensor<T> probs;        // [n, classes], rows sum to 1
  Tensor<T> grad_logits;  // (probs - onehot) / n
};

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [n,k], got " + shape_string(logits.shape()));
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor<T> probs(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.raw() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = static_cast<T>(std::exp(row[j] - mx) / denom);
  }
  return probs;
}

template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits,
                                             std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross-entropy needs [n,k] logits and n labels, got " +
                     shape_string(logits.shape()) + " and " + std::to_string(labels.size()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  SoftmaxCrossEntropy<T> out{0.0, Tensor<T>(logits.shape()), Tensor<T>(logits.shape())};
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ShapeError("label " + std::to_string(label) + " at row " + std::to_string(r) +
                       " outside 0.." + std::to_string(k - 1));
    }
    const T* row = logits.raw() + r * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    total += log_denom - (row[label] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double pj = std::exp(row[j] - mx - log_denom);
      out.probs[r * k + j] = static_cast<T>(pj);
      out.grad_logits[r * k + j] =
          static_cast<T>((pj - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / n);
    }
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Stateful layer wrappers.

/// Trainable tensor with its gradient and L2 coefficient.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
  double l2 = 0.0;
};

/// Non-trainable persistent tensor (batchnorm running statistics).
template <typename T>
struct BufferRef {
  std::string name;
  Tensor<T>* value;
};

/// Sum of lambda * ||W||^2 over all params; when `grads` is true each gradient
/// additionally receives 2 * lambda * W.
template <typename T>
double l2_penalty(const std::vector<ParamRef<T>>& params, bool grads = true) {
  double penalty = 0.0;
  for (const auto& p : params) {
    if (p.l2 < 0.0) throw ConfigError("negative L2 coefficient on " + p.name);
    if (p.l2 == 0.0) continue;
    double sq = 0.0;
    for (T w : p.value->data()) sq += static_cast<double>(w) * w;
    penalty += p.l2 * sq;
    if (grads) {
      const T c = static_cast<T>(2.0 * p.l2);
      for (std::size_t i = 0; i < p.value->size(); ++i) (*p.grad)[i] += c * (*p.value)[i];
    }
  }
  return penalty;
}

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string_view kind() const = 0;
  virtual Tensor<T> forward(Tensor<T> x, Mode mode, Rng& rng) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual std::vector<ParamRef<T>> params() { return {}; }
  virtual std::vector<BufferRef<T>> buffers() { return {}; }

 protected:
  template <typename Cache>
  static Cache take(std::optional<Cache>& cache, std::string_view kind) {
    if (!cache) {
      throw Error(std::string(kind) + " backward called without a matching forward pass");
    }
    Cache c = std::move(*cache);
    cache.reset();
    return c;
  }
};

template <typename T>
class Conv2dLayer final : public Layer<T> {
 public:
  explicit Conv2dLayer(ConvParams<T> p)
      : p_(std::move(p)), dw_(p_.weights.shape()), db_(p_.bias.shape()) {}

  std::string_view kind() const override { return "conv2d"; }

  Tensor<T> forward(Tensor<T> x, Mode, Rng&) override {
    auto [y, cache] = conv2d_forward(std::move(x), p_);
    cache_ = std::move(cache);
    return std::move(y);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto cache = this->take(cache_, kind());
    auto g = conv2d_backward(p_, cache, grad_out);
    dw_ = std::move(g.weights);
    db_ = std::move(g.bias);
    return std::move(g.input);
  }

  std::vector<ParamRef<T>> params() override {
    return {{"weight", &p_.weights, &dw_, static_cast<double>(p_.l2_lambda)},
            {"bias", &p_.bias, &db_, 0.0}};
  }

  ConvParams<T>& parameters() { return p_; }

 private:
  ConvParams<T> p_;
  Tensor<T> dw_, db_;
  std::optional<ConvCache<T>> cache_;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  explicit BatchNormLayer(BatchNormParams<T> p)
      : p_(std::move(p)), dgamma_(p_.gamma.shape()), dbeta_(p_.beta.shape()) {}

  std::string_view kind() const override { return "batchnorm"; }

  Tensor<T> forward(Tensor<T> x, Mode mode, Rng&) override {
    auto [y, cache] = batchnorm_forward(x, p_, mode);
    cache_ = std::move(cache);
    return std::move(y);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto cache = this->take(cache_, kind());
    auto g = batchnorm_backward(p_, cache, grad_out);
    dgamma_ = std::move(g.gamma);
    dbeta_ = std::move(g.beta);
    return std::move(g.input);
  }

  std::vector<ParamRef<T>> params() override {
    return {{"gamma", &p_.gamma, &dgamma_, 0.0}, {"beta", &p_.beta, &dbeta_, 0.0}};
  }
  std::vector<BufferRef<T>> buffers() override {
    return {{"running_mean", &p_.running_mean}, {"running_var", &p_.running_var}};
  }

  BatchNormParams<T>& parameters() { return p_; }

 private:
  BatchNormParams<T> p_;
  Tensor<T> dgamma_, dbeta_;
  std::optional<BatchNormCache<T>> cache_;
};

template <typename T>
class ReluLayer final : public Layer<T> {
 public:
  std::string_view kind() const override { return "relu"; }

  Tensor<T> forward(Tensor<T> x, Mode, Rng&) override {
    auto [y, cache] = relu_forward(std::move(x));
    cache_ = std::move(cache);
    return std::move(y);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return relu_backward(this->take(cache_, kind()), grad_out);
  }

 private:
  std::optional<ReluCache> cache_;
};

template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  std::string_view kind() const override { return "maxpool"; }

  Tensor<T> forward(Tensor<T> x, Mode, Rng&) override {
    auto [y, cache] = maxpool2d_forward(x);
    cache_ = std::move(cache);
    return std::move(y);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return maxpool2d_backward(this->take(cache_, kind()), grad_out);
  }

 private:
  std::optional<PoolCache> cache_;
};

template <typename T>
class DropoutLayer final : public Layer<T> {
 public:
  explicit DropoutLayer(DropoutParams p) : p_(p) {}

  std::string_view kind() const override { return "dropout"; }

  Tensor<T> forward(Tensor<T> x, Mode mode, Rng& rng) override {
    auto [y, cache] = dropout_forward(std::move(x), p_, mode, rng);
    cache_ = std::move(cache);
    return std::move(y);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return dropout_backward(this->take(cache_, kind()), grad_out);
  }

  DropoutParams& parameters() { return p_; }

 private:
  DropoutParams p_;
  std::optional<DropoutCache<T>> cache_;
};

template <typename T>
class FlattenLayer final : public Layer<T> {
 public:
  std::string_view kind() const override { return "flatten"; }

  Tensor<T> forward(Tensor<T> x, Mode, Rng&) override {
    input_shape_ = x.shape();
    const std::size_t n = x.dim(0), features = x.size() / n;
    return std::move(x).reshaped({n, features});
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto shape = this->take(input_shape_, kind());
    return grad_out.reshaped(std::move(shape));
  }

 private:
  std::optional<Extents> input_shape_;
};

template <typename T>
class DenseLayer final : public Layer<T> {
 public:
  explicit DenseLayer(DenseParams<T> p)
      : p_(std::move(p)), dw_(p_.weights.shape()), db_(p_.bias.shape()) {}

  std::string_view kind() const override { return "dense"; }

  Tensor<T> forward(Tensor<T> x, Mode, Rng&) override {
    auto [y, cache] = dense_forward(std::move(x), p_);
    cache_ = std::move(cache);
    return std::move(y);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    auto cache = this->take(cache_, kind());
    auto g = dense_backward(p_, cache, grad_out);
    dw_ = std::move(g.weights);
    db_ = std::move(g.bias);
    return std::move(g.input);
  }

  std::vector<ParamRef<T>> params() override {
    return {{"weight", &p_.weights, &dw_, static_cast<double>(p_.l2_lambda)},
            {"bias", &p_.bias, &db_, 0.0}};
  }

  DenseParams<T>& parameters() { return p_; }

 private:
  DenseParams<T> p_;
  Tensor<T> dw_, db_;
  std::optional<DenseCache<T>> cache_;
};

}  // namespace fer
