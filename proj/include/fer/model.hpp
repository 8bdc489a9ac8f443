#pragma once

// Declarative layer-list architectures and the Model that instantiates them.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fer/error.hpp"
#include "fer/layers.hpp"
#include "fer/random.hpp"
#include "fer/tensor.hpp"

namespace fer {

inline constexpr std::size_t kNumClasses = 7;
inline constexpr std::size_t kImageSide = 48;

enum class LayerKind { conv2d, batchnorm, relu, maxpool, dropout, flatten, dense };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
  }
  return "?";
}

inline LayerKind layer_kind_from(const std::string& s) {
  for (auto k : {LayerKind::conv2d, LayerKind::batchnorm, LayerKind::relu, LayerKind::maxpool,
                 LayerKind::dropout, LayerKind::flatten, LayerKind::dense}) {
    if (s == to_string(k)) return k;
  }
  throw ParseError("unknown layer kind '" + s + "'");
}

/// One entry of a model's layer list. `in`/`out` are channels for conv and
/// batchnorm, features for dense; the declared `in` is checked against the
/// predecessor's output when the spec is validated.
struct LayerDesc {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  double l2 = 0.0;
  double rate = 0.0;
  double momentum = 0.99;
  double epsilon = 1e-5;

  static LayerDesc conv(std::size_t in, std::size_t out, double l2 = 0.0) {
    return {LayerKind::conv2d, in, out, 3, l2};
  }
  static LayerDesc batchnorm(std::size_t channels) {
    return {LayerKind::batchnorm, channels, channels};
  }
  static LayerDesc relu() { return {LayerKind::relu}; }
  static LayerDesc maxpool() { return {LayerKind::maxpool}; }
  static LayerDesc dropout(double rate) {
    LayerDesc d{LayerKind::dropout};
    d.rate = rate;
    return d;
  }
  static LayerDesc flatten() { return {LayerKind::flatten}; }
  static LayerDesc dense(std::size_t in, std::size_t out, double l2 = 0.0) {
    return {LayerKind::dense, in, out, 0, l2};
  }

  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

struct ModelSpec {
  std::string name;
  Shape4 input{1, 1, kImageSide, kImageSide};  // n is ignored
  std::vector<LayerDesc> layers;
  std::size_t num_classes = kNumClasses;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Per-example output extents after every layer. Throws ShapeError naming the
/// first layer whose declared input disagrees with its predecessor.
inline std::vector<Extents> validate_spec(const ModelSpec& spec) {
  std::vector<Extents> trace;
  Extents cur{spec.input.c, spec.input.h, spec.input.w};
  auto fail = [&](std::size_t i, const std::string& why) -> void {
    throw ShapeError("model '" + spec.name + "' layer " + std::to_string(i) + " (" +
                     to_string(spec.layers[i].kind) + "): " + why);
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerDesc& d = spec.layers[i];
    switch (d.kind) {
      case LayerKind::conv2d:
        if (cur.size() != 3) fail(i, "needs an image input, got " + shape_string(cur));
        if (d.in != cur[0]) {
          fail(i, "declares " + std::to_string(d.in) + " input channels, predecessor yields " +
                      std::to_string(cur[0]));
        }
        if (d.kernel % 2 == 0 || d.out == 0) fail(i, "kernel must be odd and out positive");
        cur[0] = d.out;
        break;
      case LayerKind::batchnorm:
        if (cur.empty() || d.in != cur[0]) {
          fail(i, "declares " + std::to_string(d.in) + " channels, predecessor yields " +
                      shape_string(cur));
        }
        break;
      case LayerKind::relu:
        break;
      case LayerKind::maxpool:
        if (cur.size() != 3 || cur[1] < 2 || cur[2] < 2) {
          fail(i, "needs an image of at least 2x2, got " + shape_string(cur));
        }
        cur[1] /= 2;
        cur[2] /= 2;
        break;
      case LayerKind::dropout:
        if (!(d.rate >= 0.0 && d.rate < 1.0)) fail(i, "rate must lie in [0, 1)");
        break;
      case LayerKind::flatten:
        cur = {extent_product(cur)};
        break;
      case LayerKind::dense:
        if (cur.size() != 1) fail(i, "needs a flat input, got " + shape_string(cur));
        if (d.in != cur[0]) {
          fail(i, "declares " + std::to_string(d.in) + " input features, predecessor yields " +
                      std::to_string(cur[0]));
        }
        if (d.out == 0) fail(i, "out must be positive");
        cur = {d.out};
        break;
    }
    trace.push_back(cur);
  }
  if (cur != Extents{spec.num_classes}) {
    throw ShapeError("model '" + spec.name + "' ends in " + shape_string(cur) + ", expected [" +
                     std::to_string(spec.num_classes) + "] logits");
  }
  return trace;
}

/// Trainable parameter count, a pure function of the spec.
inline std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& d : spec.layers) {
    if (d.kind == LayerKind::conv2d) total += d.out * d.in * d.kernel * d.kernel + d.out;
    if (d.kind == LayerKind::dense) total += d.out * d.in + d.out;
    if (d.kind == LayerKind::batchnorm) total += 2 * d.in;
  }
  return total;
}

/// Two 32-filter convs, then two 64-filter convs, three 2x2 pools, batchnorm
/// on every conv, 20% dropout ahead of the single classifier layer.
inline ModelSpec baseline_spec() {
  using L = LayerDesc;
  ModelSpec s{"baseline"};
  s.layers = {L::conv(1, 32),  L::batchnorm(32), L::relu(),    L::conv(32, 32), L::batchnorm(32),
              L::relu(),       L::maxpool(),     L::conv(32, 64), L::batchnorm(64), L::relu(),
              L::maxpool(),    L::conv(64, 64),  L::batchnorm(64), L::relu(),     L::maxpool(),
              L::flatten(),    L::dropout(0.2),  L::dense(64 * 6 * 6, kNumClasses)};
  return s;
}

/// Four stages of [conv32, conv32, pool, dropout 0.5]. The very first conv
/// carries L2 0.01 and no batchnorm; every other conv is followed by
/// batchnorm. Head: dense 512, ReLU, dropout 0.5, dense 7.
inline ModelSpec five_layer_spec() {
  using L = LayerDesc;
  ModelSpec s{"five-layer"};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    if (stage == 0) {
      s.layers.push_back(L::conv(1, 32, 0.01));
    } else {
      s.layers.push_back(L::conv(32, 32));
      s.layers.push_back(L::batchnorm(32));
    }
    s.layers.push_back(L::relu());
    s.layers.push_back(L::conv(32, 32));
    s.layers.push_back(L::batchnorm(32));
    s.layers.push_back(L::relu());
    s.layers.push_back(L::maxpool());
    s.layers.push_back(L::dropout(0.5));
  }
  s.layers.push_back(L::flatten());
  s.layers.push_back(L::dense(32 * 3 * 3, 512));
  s.layers.push_back(L::relu());
  s.layers.push_back(L::dropout(0.5));
  s.layers.push_back(L::dense(512, kNumClasses));
  return s;
}

inline ModelSpec spec_by_name(const std::string& name) {
  if (name == "baseline") return baseline_spec();
  if (name == "five-layer") return five_layer_spec();
  throw ConfigError("unknown model '" + name + "' (expected baseline or five-layer)");
}

inline void to_json(nlohmann::json& j, const LayerDesc& d) {
  j = {{"kind", to_string(d.kind)}};
  switch (d.kind) {
    case LayerKind::conv2d:
      j.update({{"in", d.in}, {"out", d.out}, {"kernel", d.kernel}, {"l2", d.l2}});
      break;
    case LayerKind::batchnorm:
      j.update({{"channels", d.in}, {"momentum", d.momentum}, {"epsilon", d.epsilon}});
      break;
    case LayerKind::dropout:
      j["rate"] = d.rate;
      break;
    case LayerKind::dense:
      j.update({{"in", d.in}, {"out", d.out}, {"l2", d.l2}});
      break;
    default:
      break;
  }
}

inline void from_json(const nlohmann::json& j, LayerDesc& d) {
  d = LayerDesc{layer_kind_from(j.at("kind").get<std::string>())};
  switch (d.kind) {
    case LayerKind::conv2d:
      d.in = j.at("in");
      d.out = j.at("out");
      d.kernel = j.at("kernel");
      d.l2 = j.at("l2");
      break;
    case LayerKind::batchnorm:
      d.in = d.out = j.at("channels");
      d.momentum = j.at("momentum");
      d.epsilon = j.at("epsilon");
      break;
    case LayerKind::dropout:
      d.rate = j.at("rate");
      break;
    case LayerKind::dense:
      d.in = j.at("in");
      d.out = j.at("out");
      d.kernel = 0;
      d.l2 = j.at("l2");
      break;
    default:
      break;
  }
}

inline void to_json(nlohmann::json& j, const ModelSpec& s) {
  j = {{"name", s.name},
       {"input", {s.input.c, s.input.h, s.input.w}},
       {"num_classes", s.num_classes},
       {"layers", s.layers}};
}

inline void from_json(const nlohmann::json& j, ModelSpec& s) {
  s.name = j.at("name");
  const auto in = j.at("input").get<std::vector<std::size_t>>();
  if (in.size() != 3) throw ParseError("model input must list [c, h, w]");
  s.input = {1, in[0], in[1], in[2]};
  s.num_classes = j.at("num_classes");
  s.layers = j.at("layers").get<std::vector<LayerDesc>>();
}

/// Instantiated network. Owns one Layer per spec entry; caches of the most
/// recent forward pass live inside the layers.
template <typename T>
class Model {
 public:
  /// He-normal weights (std sqrt(2/fan_in)), zero biases, identity batchnorm;
  /// fully determined by `seed`.
  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    validate_spec(spec_);
    Rng rng(seed);
    for (const LayerDesc& d : spec_.layers) layers_.push_back(make_layer(d, rng));
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelSpec& spec() const { return spec_; }
  std::size_t num_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  /// Throw on NaN/Inf after every layer (debug aid; off by default).
  void set_check_finite(bool on) { check_finite_ = on; }

  /// Logits [n, classes] for an NCHW batch.
  Tensor<T> forward(Tensor<T> x, Mode mode, Rng& rng) {
    const Shape4 s = shape4(x, "model input");
    if (s.c != spec_.input.c || s.h != spec_.input.h || s.w != spec_.input.w) {
      throw ShapeError("model '" + spec_.name + "' expects input [n," +
                       std::to_string(spec_.input.c) + "," + std::to_string(spec_.input.h) + "," +
                       std::to_string(spec_.input.w) + "], got " + shape_string(x.shape()));
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        x = layers_[i]->forward(std::move(x), mode, rng);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + std::string(layers_[i]->kind()) +
                         "): " + e.what());
      }
      if (check_finite_) {
        check_finite(x, "output of layer " + std::to_string(i) + " (" +
                            std::string(layers_[i]->kind()) + ")");
      }
    }
    return x;
  }

  /// Backpropagates d(loss)/d(logits); fills every parameter gradient and
  /// returns d(loss)/d(input).
  Tensor<T> backward(Tensor<T> grad) {
    for (std::size_t i = layers_.size(); i-- > 0;) grad = layers_[i]->backward(grad);
    return grad;
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto p : layers_[i]->params()) {
        p.name = layer_prefix(i) + p.name;
        out.push_back(std::move(p));
      }
    }
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (auto b : layers_[i]->buffers()) {
        b.name = layer_prefix(i) + b.name;
        out.push_back(std::move(b));
      }
    }
    return out;
  }

  /// Every persistent tensor (parameters then buffers) in a fixed order.
  std::vector<BufferRef<T>> state_tensors() {
    std::vector<BufferRef<T>> out;
    for (auto& p : params()) out.push_back({p.name, p.value});
    for (auto& b : buffers()) out.push_back(b);
    return out;
  }

 private:
  std::string layer_prefix(std::size_t i) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "layer%02zu.%s.", i, to_string(spec_.layers[i].kind));
    return buf;
  }

  static Tensor<T> he_normal(Extents shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> w(std::move(shape));
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = static_cast<T>(standard_normal(rng) * scale);
    return w;
  }

  static std::unique_ptr<Layer<T>> make_layer(const LayerDesc& d, Rng& rng) {
    switch (d.kind) {
      case LayerKind::conv2d: {
        ConvParams<T> p{he_normal({d.out, d.in, d.kernel, d.kernel}, d.in * d.kernel * d.kernel, rng),
                        Tensor<T>({d.out}), static_cast<T>(d.l2)};
        return std::make_unique<Conv2dLayer<T>>(std::move(p));
      }
      case LayerKind::batchnorm: {
        auto p = BatchNormParams<T>::identity(d.in);
        p.momentum = d.momentum;
        p.epsilon = d.epsilon;
        return std::make_unique<BatchNormLayer<T>>(std::move(p));
      }
      case LayerKind::relu:
        return std::make_unique<ReluLayer<T>>();
      case LayerKind::maxpool:
        return std::make_unique<MaxPoolLayer<T>>();
      case LayerKind::dropout:
        return std::make_unique<DropoutLayer<T>>(DropoutParams{d.rate});
      case LayerKind::flatten:
        return std::make_unique<FlattenLayer<T>>();
      case LayerKind::dense: {
        DenseParams<T> p{he_normal({d.out, d.in}, d.in, rng), Tensor<T>({d.out}),
                         static_cast<T>(d.l2)};
        return std::make_unique<DenseLayer<T>>(std::move(p));
      }
    }
    throw Error("unhandled layer kind");
  }

  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool check_finite_ = false;
};

/// Softmax probabilities [n, classes] for a batch.
template <typename T>
Tensor<T> model_forward(Model<T>& m, Tensor<T> batch, Mode mode, Rng& rng) {
  return softmax_rows(m.forward(std::move(batch), mode, rng));
}

}  // namespace fer
