/*
 * Copyright 2026 The ExciteFuzz Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "exfuzz/error.hpp"
#include "exfuzz/tensor.hpp"

namespace exfuzz {

enum class LayerKind { kDense, kConv2d, kRelu, kMaxPool2d, kFlatten, kSoftmax };

inline std::string_view KindName(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kMaxPool2d: return "maxpool2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "?";
}

inline LayerKind ParseKind(std::string_view name) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kConv2d, LayerKind::kRelu,
                      LayerKind::kMaxPool2d, LayerKind::kFlatten,
                      LayerKind::kSoftmax}) {
    if (KindName(k) == name) return k;
  }
  throw DataError("unknown layer kind '" + std::string(name) + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int in_dim = 0;
  int out_dim = 0;
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 0;
  int kernel_w = 0;
  int stride = 1;
  int padding = 0;
  int window = 0;

  static LayerSpec Dense(int in, int out) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.in_dim = in;
    s.out_dim = out;
    return s;
  }
  static LayerSpec Conv2d(int in_ch, int out_ch, int kh, int kw, int stride = 1,
                          int padding = 0) {
    LayerSpec s;
    s.kind = LayerKind::kConv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec Relu() { return LayerSpec{}; }
  static LayerSpec MaxPool2d(int window, int stride) {
    LayerSpec s;
    s.kind = LayerKind::kMaxPool2d;
    s.window = window;
    s.stride = stride;
    return s;
  }
  static LayerSpec Flatten() {
    LayerSpec s;
    s.kind = LayerKind::kFlatten;
    return s;
  }
  static LayerSpec Softmax() {
    LayerSpec s;
    s.kind = LayerKind::kSoftmax;
    return s;
  }

  // Dense units and conv output channels are the addressable neurons.
  bool countable() const {
    return kind == LayerKind::kDense || kind == LayerKind::kConv2d;
  }

  std::size_t WeightCount() const {
    switch (kind) {
      case LayerKind::kDense:
        return static_cast<std::size_t>(in_dim) * out_dim;
      case LayerKind::kConv2d:
        return static_cast<std::size_t>(out_channels) * in_channels * kernel_h *
               kernel_w;
      default:
        return 0;
    }
  }
  std::size_t BiasCount() const {
    switch (kind) {
      case LayerKind::kDense: return static_cast<std::size_t>(out_dim);
      case LayerKind::kConv2d: return static_cast<std::size_t>(out_channels);
      default: return 0;
    }
  }
  std::size_t ParamCount() const { return WeightCount() + BiasCount(); }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NeuronId {
  int layer = 0;
  int unit = 0;
  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

inline std::string ToString(NeuronId n) {
  return "L" + std::to_string(n.layer) + ":" + std::to_string(n.unit);
}

// Set of neurons whose post-activation output is forced to zero.
class AblationMask {
 public:
  AblationMask() = default;
  AblationMask(std::initializer_list<NeuronId> neurons) : disabled_(neurons) {}
  explicit AblationMask(std::set<NeuronId> neurons)
      : disabled_(std::move(neurons)) {}

  void Disable(NeuronId n) { disabled_.insert(n); }
  void Enable(NeuronId n) { disabled_.erase(n); }
  bool disabled(NeuronId n) const { return disabled_.count(n) != 0; }
  bool empty() const { return disabled_.empty(); }
  const std::set<NeuronId>& neurons() const { return disabled_; }

  friend bool operator==(const AblationMask&, const AblationMask&) = default;

 private:
  std::set<NeuronId> disabled_;
};

// One scalar per countable neuron, in Network::neurons() order. Dense units
// report their post-activation value, conv channels the spatial mean of
// their post-activation map.
struct ActivationTrace {
  std::vector<NeuronId> neurons;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  double at(NeuronId n) const {
    auto it = std::lower_bound(neurons.begin(), neurons.end(), n);
    if (it == neurons.end() || *it != n) {
      throw UsageError("neuron " + ToString(n) + " is not in the trace");
    }
    return values[static_cast<std::size_t>(it - neurons.begin())];
  }
};

// Layered classifier: architecture, per-layer parameters and metadata.
// Parameters for each layer are stored flat: dense as [out][in] weights then
// biases, conv2d as [out_ch][in_ch][kh][kw] then biases.
class Network {
 public:
  Network() = default;

  Network(Shape input_shape, std::vector<LayerSpec> layers, int class_count)
      : input_shape_(std::move(input_shape)),
        layers_(std::move(layers)),
        class_count_(class_count) {
    Validate();
    params_.reserve(layers_.size());
    for (const LayerSpec& layer : layers_) {
      if (layer.ParamCount() == 0) {
        params_.emplace_back();
      } else {
        params_.emplace_back(Shape{static_cast<int>(layer.ParamCount())});
      }
    }
  }

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  int class_count() const { return class_count_; }

  const Shape& layer_input_shape(std::size_t layer) const {
    return layer == 0 ? input_shape_ : shapes_[layer - 1];
  }
  const Shape& layer_output_shape(std::size_t layer) const {
    return shapes_[layer];
  }

  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }

  std::size_t ParamCount() const {
    std::size_t n = 0;
    for (const LayerSpec& l : layers_) n += l.ParamCount();
    return n;
  }

  const std::vector<NeuronId>& neurons() const { return neurons_; }
  std::size_t neuron_count() const { return neurons_.size(); }

  int unit_count(int layer) const {
    if (layer < 0 || layer >= static_cast<int>(layers_.size())) return 0;
    const LayerSpec& l = layers_[static_cast<std::size_t>(layer)];
    if (l.kind == LayerKind::kDense) return l.out_dim;
    if (l.kind == LayerKind::kConv2d) return l.out_channels;
    return 0;
  }

  std::vector<int> countable_layers() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].countable()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  // Index of the layer whose output holds the post-activation values of a
  // countable layer: the directly following ReLU if present, else itself.
  int activation_point(int layer) const {
    const auto next = static_cast<std::size_t>(layer) + 1;
    if (next < layers_.size() && layers_[next].kind == LayerKind::kRelu) {
      return layer + 1;
    }
    return layer;
  }

  // Position of n in neurons(); throws for invalid addresses.
  std::size_t NeuronIndex(NeuronId n) const {
    auto it = std::lower_bound(neurons_.begin(), neurons_.end(), n);
    if (it == neurons_.end() || *it != n) {
      throw UsageError("neuron " + ToString(n) +
                       " does not address a countable unit");
    }
    return static_cast<std::size_t>(it - neurons_.begin());
  }
  bool IsNeuron(NeuronId n) const {
    return std::binary_search(neurons_.begin(), neurons_.end(), n);
  }

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

 private:
  [[noreturn]] void Fail(std::size_t i, const std::string& what) const {
    throw DataError("layer " + std::to_string(i) + " (" +
                    std::string(KindName(layers_[i].kind)) + "): " + what);
  }

  void Validate() {
    if (class_count_ <= 0) throw DataError("class_count must be positive");
    if (layers_.empty() || layers_.back().kind != LayerKind::kSoftmax) {
      throw DataError("the last layer must be softmax");
    }
    for (int d : input_shape_) {
      if (d <= 0) throw DataError("input shape has a non-positive dimension");
    }
    if (input_shape_.empty()) throw DataError("input shape is empty");
    Shape cur = input_shape_;
    shapes_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      switch (l.kind) {
        case LayerKind::kDense:
          if (l.in_dim <= 0 || l.out_dim <= 0) Fail(i, "dimensions must be positive");
          if (cur != Shape{l.in_dim}) {
            Fail(i, "expects input [" + std::to_string(l.in_dim) + "], got " +
                        ShapeString(cur));
          }
          cur = Shape{l.out_dim};
          break;
        case LayerKind::kConv2d: {
          if (l.in_channels <= 0 || l.out_channels <= 0 || l.kernel_h <= 0 ||
              l.kernel_w <= 0 || l.stride <= 0 || l.padding < 0) {
            Fail(i, "invalid convolution parameters");
          }
          if (cur.size() != 3 || cur[0] != l.in_channels) {
            Fail(i, "expects input with " + std::to_string(l.in_channels) +
                        " channels (CxHxW), got " + ShapeString(cur));
          }
          const int oh = (cur[1] + 2 * l.padding - l.kernel_h) / l.stride + 1;
          const int ow = (cur[2] + 2 * l.padding - l.kernel_w) / l.stride + 1;
          if (cur[1] + 2 * l.padding < l.kernel_h ||
              cur[2] + 2 * l.padding < l.kernel_w || oh <= 0 || ow <= 0) {
            Fail(i, "kernel larger than padded input " + ShapeString(cur));
          }
          cur = Shape{l.out_channels, oh, ow};
          break;
        }
        case LayerKind::kRelu:
          break;
        case LayerKind::kMaxPool2d: {
          if (l.window <= 0 || l.stride <= 0) Fail(i, "invalid pooling parameters");
          if (cur.size() != 3 || cur[1] < l.window || cur[2] < l.window) {
            Fail(i, "expects CxHxW input of at least the window, got " +
                        ShapeString(cur));
          }
          cur = Shape{cur[0], (cur[1] - l.window) / l.stride + 1,
                      (cur[2] - l.window) / l.stride + 1};
          break;
        }
        case LayerKind::kFlatten:
          cur = Shape{static_cast<int>(ShapeSize(cur))};
          break;
        case LayerKind::kSoftmax:
          if (i + 1 != layers_.size()) Fail(i, "softmax must be the last layer");
          if (cur != Shape{class_count_}) {
            Fail(i, "expects [" + std::to_string(class_count_) + "] logits, got " +
                        ShapeString(cur));
          }
          break;
      }
      shapes_.push_back(cur);
    }
    neurons_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      for (int u = 0; u < unit_count(static_cast<int>(i)); ++u) {
        neurons_.push_back(NeuronId{static_cast<int>(i), u});
      }
    }
  }

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  int class_count_ = 0;
  std::vector<Shape> shapes_;
  std::vector<Tensor> params_;
  std::vector<NeuronId> neurons_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

namespace kernels {

// Forward kernels shared by the float inference path and the double-precision
// coalition evaluator. Reductions always accumulate in double.

template <typename In, typename Out>
void Dense(const LayerSpec& l, const float* params, const In* in, Out* out) {
  const float* w = params;
  const float* b = params + l.WeightCount();
  for (int o = 0; o < l.out_dim; ++o) {
    double acc = b[o];
    const float* row = w + static_cast<std::size_t>(o) * l.in_dim;
    for (int i = 0; i < l.in_dim; ++i) acc += static_cast<double>(row[i]) * in[i];
    out[o] = static_cast<Out>(acc);
  }
}

template <typename In, typename Out>
void Conv2dChannel(const LayerSpec& l, const float* params, const Shape& in_shape,
                   const Shape& out_shape, const In* in, Out* out, int o) {
  const int ih = in_shape[1], iw = in_shape[2];
  const int oh = out_shape[1], ow = out_shape[2];
  const float* w = params + static_cast<std::size_t>(o) * l.in_channels *
                                l.kernel_h * l.kernel_w;
  const double bias = params[l.WeightCount() + static_cast<std::size_t>(o)];
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      double acc = bias;
      for (int c = 0; c < l.in_channels; ++c) {
        const In* plane = in + static_cast<std::size_t>(c) * ih * iw;
        const float* kern = w + static_cast<std::size_t>(c) * l.kernel_h * l.kernel_w;
        for (int ky = 0; ky < l.kernel_h; ++ky) {
          const int y = oy * l.stride - l.padding + ky;
          if (y < 0 || y >= ih) continue;
          for (int kx = 0; kx < l.kernel_w; ++kx) {
            const int x = ox * l.stride - l.padding + kx;
            if (x < 0 || x >= iw) continue;
            acc += static_cast<double>(kern[ky * l.kernel_w + kx]) *
                   plane[static_cast<std::size_t>(y) * iw + x];
          }
        }
      }
      out[(static_cast<std::size_t>(o) * oh + oy) * ow + ox] = static_cast<Out>(acc);
    }
  }
}

template <typename In, typename Out>
void Conv2d(const LayerSpec& l, const float* params, const Shape& in_shape,
            const Shape& out_shape, const In* in, Out* out) {
  for (int o = 0; o < l.out_channels; ++o) {
    Conv2dChannel(l, params, in_shape, out_shape, in, out, o);
  }
}

template <typename T>
void MaxPoolChannel(const LayerSpec& l, const Shape& in_shape,
                    const Shape& out_shape, const T* in, T* out, int c) {
  const int ih = in_shape[1], iw = in_shape[2];
  const int oh = out_shape[1], ow = out_shape[2];
  const T* plane = in + static_cast<std::size_t>(c) * ih * iw;
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T best = plane[static_cast<std::size_t>(oy * l.stride) * iw + ox * l.stride];
      for (int ky = 0; ky < l.window; ++ky) {
        for (int kx = 0; kx < l.window; ++kx) {
          best = std::max(best, plane[static_cast<std::size_t>(oy * l.stride + ky) * iw +
                                      ox * l.stride + kx]);
        }
      }
      out[(static_cast<std::size_t>(c) * oh + oy) * ow + ox] = best;
    }
  }
}

template <typename T>
void MaxPool(const LayerSpec& l, const Shape& in_shape, const Shape& out_shape,
             const T* in, T* out) {
  for (int c = 0; c < in_shape[0]; ++c) {
    MaxPoolChannel(l, in_shape, out_shape, in, out, c);
  }
}

// Softmax over logits, computed in double.
template <typename T>
std::vector<double> Softmax(std::span<const T> logits) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

}  // namespace kernels

// Probabilities below this floor are clamped inside the cross-entropy.
inline constexpr double kProbabilityFloor = 1e-12;

inline double CrossEntropy(double probability) {
  return -std::log(std::max(probability, kProbabilityFloor));
}

// Cross-entropy of the true class straight from logits.
template <typename T>
double CrossEntropyFromLogits(std::span<const T> logits, int label) {
  double mx = -std::numeric_limits<double>::infinity();
  for (T v : logits) mx = std::max(mx, static_cast<double>(v));
  double sum = 0.0;
  for (T v : logits) sum += std::exp(static_cast<double>(v) - mx);
  const double p = std::exp(static_cast<double>(logits[static_cast<std::size_t>(label)]) - mx) / sum;
  return CrossEntropy(p);
}

struct ForwardResult {
  Tensor probabilities;
  Tensor logits;
  ActivationTrace trace;
};

namespace detail {

inline void CheckInput(const Network& model, const Tensor& input) {
  if (input.shape() != model.input_shape()) {
    throw DataError("input shape " + ShapeString(input.shape()) +
                    " does not match model input " +
                    ShapeString(model.input_shape()));
  }
}

// Per-layer disabled flags derived from a mask, validated against the model.
inline std::vector<std::vector<char>> MaskFlags(const Network& model,
                                                const AblationMask& mask) {
  std::vector<std::vector<char>> flags(model.layers().size());
  for (std::size_t i = 0; i < flags.size(); ++i) {
    flags[i].assign(static_cast<std::size_t>(model.unit_count(static_cast<int>(i))), 0);
  }
  for (NeuronId n : mask.neurons()) {
    if (!model.IsNeuron(n)) {
      throw UsageError("mask addresses invalid neuron " + ToString(n));
    }
    flags[static_cast<std::size_t>(n.layer)][static_cast<std::size_t>(n.unit)] = 1;
  }
  return flags;
}

// Size of one unit's slice in a countable layer's output.
inline std::size_t UnitSpan(const Shape& out_shape) {
  return out_shape.size() == 3
             ? static_cast<std::size_t>(out_shape[1]) * out_shape[2]
             : 1;
}

[[noreturn]] inline void NonFinite(std::size_t layer, LayerKind kind,
                                   const char* what) {
  throw NumericError(std::string("non-finite ") + what + " at layer " +
                     std::to_string(layer) + " (" + std::string(KindName(kind)) +
                     ")");
}

// Runs every layer, keeping all outputs. outputs[i] is layer i's output.
inline std::vector<std::vector<float>> RunLayers(
    const Network& model, std::span<const float> input,
    const std::vector<std::vector<char>>* flags) {
  const auto& layers = model.layers();
  std::vector<std::vector<float>> outputs(layers.size());
  const float* in = input.data();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const Shape& in_shape = model.layer_input_shape(i);
    const Shape& out_shape = model.layer_output_shape(i);
    std::vector<float>& out = outputs[i];
    out.resize(ShapeSize(out_shape));
    const std::size_t in_size = ShapeSize(in_shape);
    switch (l.kind) {
      case LayerKind::kDense:
        kernels::Dense(l, model.params()[i].data(), in, out.data());
        break;
      case LayerKind::kConv2d:
        kernels::Conv2d(l, model.params()[i].data(), in_shape, out_shape, in,
                        out.data());
        break;
      case LayerKind::kRelu:
        for (std::size_t k = 0; k < in_size; ++k) out[k] = std::max(in[k], 0.0f);
        break;
      case LayerKind::kMaxPool2d:
        kernels::MaxPool(l, in_shape, out_shape, in, out.data());
        break;
      case LayerKind::kFlatten:
        std::copy(in, in + in_size, out.begin());
        break;
      case LayerKind::kSoftmax: {
        auto p = kernels::Softmax(std::span<const float>(in, in_size));
        for (std::size_t k = 0; k < p.size(); ++k) out[k] = static_cast<float>(p[k]);
        break;
      }
    }
    if (flags != nullptr && l.countable()) {
      const std::size_t span = UnitSpan(out_shape);
      const auto& f = (*flags)[i];
      for (std::size_t u = 0; u < f.size(); ++u) {
        if (f[u]) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(u * span), span, 0.0f);
      }
    }
    for (float v : out) {
      if (!std::isfinite(v)) NonFinite(i, l.kind, "activation");
    }
    in = out.data();
  }
  return outputs;
}

inline ActivationTrace TraceFrom(const Network& model,
                                 const std::vector<std::vector<float>>& outputs) {
  ActivationTrace trace;
  trace.neurons = model.neurons();
  trace.values.reserve(trace.neurons.size());
  for (NeuronId n : trace.neurons) {
    const auto ap = static_cast<std::size_t>(model.activation_point(n.layer));
    const std::size_t span = UnitSpan(model.layer_output_shape(static_cast<std::size_t>(n.layer)));
    const float* v = outputs[ap].data() + static_cast<std::size_t>(n.unit) * span;
    double acc = 0.0;
    for (std::size_t k = 0; k < span; ++k) acc += v[k];
    trace.values.push_back(acc / static_cast<double>(span));
  }
  return trace;
}

}  // namespace detail

// Inference with optional neuron ablation. Disabled neurons emit zero at
// their post-activation point (the whole spatial map for conv channels).
inline ForwardResult Forward(const Network& model, const Tensor& input,
                             const AblationMask& mask = {}) {
  detail::CheckInput(model, input);
  const auto flags = detail::MaskFlags(model, mask);
  const auto outputs = detail::RunLayers(model, input.values(), &flags);
  const std::size_t last = model.layers().size() - 1;
  ForwardResult r;
  r.probabilities = Tensor(Shape{model.class_count()}, outputs[last]);
  if (last == 0) {
    r.logits = input.Reshaped(Shape{model.class_count()});
  } else {
    r.logits = Tensor(Shape{model.class_count()}, outputs[last - 1]);
  }
  r.trace = detail::TraceFrom(model, outputs);
  return r;
}

inline int Argmax(std::span<const float> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) -
                          values.begin());
}

inline int Predict(const Network& model, const Tensor& input) {
  return Argmax(Forward(model, input).probabilities.values());
}

// Mean cross-entropy of a batch under an optional mask.
inline double Loss(const Network& model, std::span<const Tensor> inputs,
                   std::span<const int> labels, const AblationMask& mask = {}) {
  if (inputs.empty()) throw UsageError("loss of an empty batch");
  if (inputs.size() != labels.size()) {
    throw UsageError("loss: inputs and labels differ in length");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= model.class_count()) {
      throw UsageError("label " + std::to_string(labels[i]) + " out of range");
    }
    const ForwardResult r = Forward(model, inputs[i], mask);
    // Use the logits so the tail stays accurate below float resolution.
    total += CrossEntropyFromLogits(r.logits.values(), labels[i]);
  }
  return total / static_cast<double>(inputs.size());
}

inline double Loss(const Network& model, const Tensor& input, int label,
                   const AblationMask& mask = {}) {
  return Loss(model, std::span<const Tensor>(&input, 1),
              std::span<const int>(&label, 1), mask);
}

struct Gradients {
  std::vector<Tensor> params;  // same layout as Network::params()
  Tensor input;
  double loss = 0.0;
};

namespace detail {

// Backpropagates an arbitrary gradient on the logits (the softmax input)
// given the stored layer outputs, adding parameter gradients into
// `param_acc` when it is non-null. Returns the gradient on the input.
inline std::vector<double> BackwardFromLogits(
    const Network& model, std::span<const float> input,
    const std::vector<std::vector<float>>& outputs, std::vector<double> grad,
    std::vector<std::vector<double>>* param_acc) {
  const auto& layers = model.layers();
  const std::size_t last = layers.size() - 1;
  for (std::size_t ii = last; ii-- > 0;) {
    const LayerSpec& l = layers[ii];
    const Shape& in_shape = model.layer_input_shape(ii);
    const Shape& out_shape = model.layer_output_shape(ii);
    const float* in = ii == 0 ? input.data() : outputs[ii - 1].data();
    std::vector<double> gin(ShapeSize(in_shape), 0.0);
    switch (l.kind) {
      case LayerKind::kDense: {
        const float* w = model.params()[ii].data();
        const std::size_t wc = l.WeightCount();
        for (int o = 0; o < l.out_dim; ++o) {
          const double g = grad[static_cast<std::size_t>(o)];
          if (g == 0.0) continue;
          const std::size_t row = static_cast<std::size_t>(o) * l.in_dim;
          for (int i = 0; i < l.in_dim; ++i) {
            gin[static_cast<std::size_t>(i)] += g * w[row + i];
          }
          if (param_acc) {
            auto& acc = (*param_acc)[ii];
            for (int i = 0; i < l.in_dim; ++i) acc[row + i] += g * in[i];
            acc[wc + static_cast<std::size_t>(o)] += g;
          }
        }
        break;
      }
      case LayerKind::kConv2d: {
        const float* w = model.params()[ii].data();
        std::vector<double>* acc = param_acc ? &(*param_acc)[ii] : nullptr;
        const int ih = in_shape[1], iw = in_shape[2];
        const int oh = out_shape[1], ow = out_shape[2];
        const std::size_t wc = l.WeightCount();
        for (int o = 0; o < l.out_channels; ++o) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const double g = grad[(static_cast<std::size_t>(o) * oh + oy) * ow + ox];
              if (g == 0.0) continue;
              if (acc) (*acc)[wc + static_cast<std::size_t>(o)] += g;
              for (int c = 0; c < l.in_channels; ++c) {
                const std::size_t kbase =
                    (static_cast<std::size_t>(o) * l.in_channels + c) * l.kernel_h * l.kernel_w;
                for (int ky = 0; ky < l.kernel_h; ++ky) {
                  const int y = oy * l.stride - l.padding + ky;
                  if (y < 0 || y >= ih) continue;
                  for (int kx = 0; kx < l.kernel_w; ++kx) {
                    const int x = ox * l.stride - l.padding + kx;
                    if (x < 0 || x >= iw) continue;
                    const std::size_t at = (static_cast<std::size_t>(c) * ih + y) * iw + x;
                    const std::size_t kat = kbase + static_cast<std::size_t>(ky) * l.kernel_w + kx;
                    if (acc) (*acc)[kat] += g * in[at];
                    gin[at] += g * w[kat];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case LayerKind::kRelu:
        for (std::size_t j = 0; j < gin.size(); ++j) gin[j] = in[j] > 0.0f ? grad[j] : 0.0;
        break;
      case LayerKind::kMaxPool2d: {
        const int ih = in_shape[1], iw = in_shape[2];
        const int oh = out_shape[1], ow = out_shape[2];
        for (int c = 0; c < in_shape[0]; ++c) {
          const float* plane = in + static_cast<std::size_t>(c) * ih * iw;
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              std::size_t best = static_cast<std::size_t>(oy * l.stride) * iw + ox * l.stride;
              for (int ky = 0; ky < l.window; ++ky) {
                for (int kx = 0; kx < l.window; ++kx) {
                  const std::size_t at = static_cast<std::size_t>(oy * l.stride + ky) * iw +
                                         ox * l.stride + kx;
                  if (plane[at] > plane[best]) best = at;
                }
              }
              gin[static_cast<std::size_t>(c) * ih * iw + best] +=
                  grad[(static_cast<std::size_t>(c) * oh + oy) * ow + ox];
            }
          }
        }
        break;
      }
      case LayerKind::kFlatten:
        gin = grad;
        break;
      case LayerKind::kSoftmax:
        throw InvariantError("softmax before the last layer");
    }
    for (double v : gin) {
      if (!std::isfinite(v)) NonFinite(ii, l.kind, "gradient");
    }
    grad = std::move(gin);
  }
  return grad;
}

// Backpropagates the cross-entropy of one example.
inline std::vector<double> Backward(const Network& model,
                                    std::span<const float> input, int label,
                                    std::vector<std::vector<double>>& param_acc,
                                    double* loss_out) {
  const auto outputs = RunLayers(model, input, nullptr);
  const std::size_t last = model.layers().size() - 1;
  const std::size_t k = static_cast<std::size_t>(model.class_count());
  const float* logits = last == 0 ? input.data() : outputs[last - 1].data();
  const auto p = kernels::Softmax(std::span<const float>(logits, k));
  if (loss_out) {
    *loss_out = CrossEntropyFromLogits(std::span<const float>(logits, k), label);
  }
  std::vector<double> grad(p.begin(), p.end());
  grad[static_cast<std::size_t>(label)] -= 1.0;
  return BackwardFromLogits(model, input, outputs, std::move(grad), &param_acc);
}

inline std::vector<std::vector<double>> ZeroParamAcc(const Network& model) {
  std::vector<std::vector<double>> acc;
  for (const LayerSpec& l : model.layers()) acc.emplace_back(l.ParamCount(), 0.0);
  return acc;
}

}  // namespace detail

// Gradients of the cross-entropy of (input, label) with respect to every
// parameter and to the input.
inline Gradients ComputeGradients(const Network& model, const Tensor& input,
                                  int label) {
  detail::CheckInput(model, input);
  if (label < 0 || label >= model.class_count()) {
    throw UsageError("label " + std::to_string(label) + " out of range");
  }
  auto acc = detail::ZeroParamAcc(model);
  Gradients g;
  const auto gin = detail::Backward(model, input.values(), label, acc, &g.loss);
  for (std::size_t i = 0; i < acc.size(); ++i) {
    if (acc[i].empty()) {
      g.params.emplace_back();
      continue;
    }
    std::vector<float> v(acc[i].size());
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (!std::isfinite(acc[i][j])) {
        detail::NonFinite(i, model.layers()[i].kind, "parameter gradient");
      }
      v[j] = static_cast<float>(acc[i][j]);
    }
    g.params.emplace_back(Shape{static_cast<int>(v.size())}, std::move(v));
  }
  std::vector<float> gi(gin.begin(), gin.end());
  g.input = Tensor(input.shape(), std::move(gi));
  return g;
}

struct LogitJacobian {
  std::vector<double> logits;
  std::vector<std::vector<double>> rows;  // rows[k] = d logit_k / d input
};

// Logits at `input` and the input gradient of every logit.
inline LogitJacobian ComputeLogitJacobian(const Network& model,
                                          const Tensor& input) {
  detail::CheckInput(model, input);
  const auto outputs = detail::RunLayers(model, input.values(), nullptr);
  const std::size_t last = model.layers().size() - 1;
  const std::size_t k = static_cast<std::size_t>(model.class_count());
  const float* logits = last == 0 ? input.data() : outputs[last - 1].data();
  LogitJacobian j;
  j.logits.assign(logits, logits + k);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> seed(k, 0.0);
    seed[c] = 1.0;
    j.rows.push_back(detail::BackwardFromLogits(model, input.values(), outputs,
                                                std::move(seed), nullptr));
  }
  return j;
}

// One plain SGD step on the batch-mean cross-entropy. Returns the batch loss
// measured before the update.
inline double SgdStep(Network& model, std::span<const Tensor> batch,
                      std::span<const int> labels, double learning_rate) {
  if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
  if (batch.empty() || batch.size() != labels.size()) {
    throw UsageError("sgd step needs a nonempty batch with one label per input");
  }
  auto acc = detail::ZeroParamAcc(model);
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    detail::CheckInput(model, batch[b]);
    if (labels[b] < 0 || labels[b] >= model.class_count()) {
      throw UsageError("label " + std::to_string(labels[b]) + " out of range");
    }
    double l = 0.0;
    detail::Backward(model, batch[b].values(), labels[b], acc, &l);
    loss += l;
  }
  const double scale = learning_rate / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < acc.size(); ++i) {
    Tensor& p = model.params()[i];
    for (std::size_t j = 0; j < acc[i].size(); ++j) {
      const float updated = static_cast<float>(p[j] - scale * acc[i][j]);
      if (!std::isfinite(updated)) {
        detail::NonFinite(i, model.layers()[i].kind, "parameter update");
      }
      p[j] = updated;
    }
  }
  return loss / static_cast<double>(batch.size());
}

}  // namespace exfuzz
