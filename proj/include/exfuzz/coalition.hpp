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

#include <cstddef>
#include <span>
#include <vector>

#include "exfuzz/error.hpp"
#include "exfuzz/network.hpp"

namespace exfuzz {

// Double-precision masked forward pass over one input that supports cheap
// toggling of single neurons. Used to evaluate coalition utilities: toggling
// a neuron only recomputes what lies downstream of it, and when the neuron
// feeds a dense layer through channel-local layers (relu, maxpool, flatten)
// its contribution is applied to that layer as a delta.
//
// Enabled flags are indexed like Network::neurons().
class CoalitionEvaluator {
 public:
  struct Snapshot {
    std::vector<std::vector<double>> out;
    std::vector<std::vector<double>> raw;
    std::vector<char> enabled;
  };

  CoalitionEvaluator(const Network& model, std::span<const float> input)
      : model_(&model), input_(input.begin(), input.end()) {
    if (input.size() != ShapeSize(model.input_shape())) {
      throw DataError("coalition evaluator: input has " +
                      std::to_string(input.size()) + " values, model expects " +
                      ShapeString(model.input_shape()));
    }
    const auto& layers = model.layers();
    out_.resize(layers.size());
    raw_.resize(layers.size());
    consumer_.assign(layers.size(), -1);
    first_neuron_.assign(layers.size(), 0);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      out_[i].assign(ShapeSize(model.layer_output_shape(i)), 0.0);
      if (layers[i].countable()) {
        raw_[i].assign(out_[i].size(), 0.0);
        std::size_t j = i + 1;
        while (j < layers.size() && (layers[j].kind == LayerKind::kRelu ||
                                     layers[j].kind == LayerKind::kMaxPool2d ||
                                     layers[j].kind == LayerKind::kFlatten)) {
          ++j;
        }
        if (j < layers.size() && layers[j].kind == LayerKind::kDense) {
          consumer_[i] = static_cast<int>(j);
        }
      }
    }
    std::size_t idx = 0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      first_neuron_[i] = idx;
      idx += static_cast<std::size_t>(model.unit_count(static_cast<int>(i)));
    }
    enabled_.assign(model.neuron_count(), 1);
    Recompute(0);
  }

  const Network& model() const { return *model_; }
  std::span<const char> enabled() const { return enabled_; }

  // Replaces all flags and recomputes the whole network from scratch. The
  // result depends only on the flags, never on the toggle history.
  void Assign(std::span<const char> enabled) {
    if (enabled.size() != enabled_.size()) {
      throw UsageError("coalition evaluator: flag count mismatch");
    }
    enabled_.assign(enabled.begin(), enabled.end());
    Recompute(0);
  }

  // Swaps in a new input of the same shape, keeping the flags.
  void SetInput(std::span<const float> input) {
    if (input.size() != input_.size()) {
      throw DataError("coalition evaluator: input size changed");
    }
    std::copy(input.begin(), input.end(), input_.begin());
    Recompute(0);
  }

  void SetEnabled(std::size_t neuron_index, bool on) {
    const char flag = on ? 1 : 0;
    if (enabled_[neuron_index] == flag) return;
    enabled_[neuron_index] = flag;
    const NeuronId n = model_->neurons()[neuron_index];
    const auto l = static_cast<std::size_t>(n.layer);
    const std::size_t span = detail::UnitSpan(model_->layer_output_shape(l));
    const std::size_t begin = static_cast<std::size_t>(n.unit) * span;
    const int consumer = consumer_[l];
    if (consumer < 0) {
      for (std::size_t k = begin; k < begin + span; ++k) out_[l][k] = on ? raw_[l][k] : 0.0;
      Recompute(l + 1);
      return;
    }
    const auto d = static_cast<std::size_t>(consumer);
    // Locate the unit's slice at the dense layer's input.
    std::size_t b = begin, e = begin + span;
    for (std::size_t i = l + 1; i < d; ++i) {
      if (model_->layers()[i].kind == LayerKind::kMaxPool2d) {
        const Shape& os = model_->layer_output_shape(i);
        const std::size_t plane = static_cast<std::size_t>(os[1]) * os[2];
        b = static_cast<std::size_t>(n.unit) * plane;
        e = b + plane;
      }
    }
    old_.assign(out_[d - 1].begin() + static_cast<std::ptrdiff_t>(b),
                out_[d - 1].begin() + static_cast<std::ptrdiff_t>(e));
    for (std::size_t k = begin; k < begin + span; ++k) out_[l][k] = on ? raw_[l][k] : 0.0;
    std::size_t cb = begin, ce = begin + span;
    for (std::size_t i = l + 1; i < d; ++i) {
      const LayerSpec& li = model_->layers()[i];
      const std::vector<double>& prev = out_[i - 1];
      std::vector<double>& cur = out_[i];
      switch (li.kind) {
        case LayerKind::kRelu:
          for (std::size_t k = cb; k < ce; ++k) cur[k] = prev[k] > 0.0 ? prev[k] : 0.0;
          break;
        case LayerKind::kMaxPool2d: {
          kernels::MaxPoolChannel(li, model_->layer_input_shape(i),
                                  model_->layer_output_shape(i), prev.data(),
                                  cur.data(), n.unit);
          const Shape& os = model_->layer_output_shape(i);
          const std::size_t plane = static_cast<std::size_t>(os[1]) * os[2];
          cb = static_cast<std::size_t>(n.unit) * plane;
          ce = cb + plane;
          break;
        }
        case LayerKind::kFlatten:
          for (std::size_t k = cb; k < ce; ++k) cur[k] = prev[k];
          break;
        default:
          throw InvariantError("unexpected layer in channel-local chain");
      }
    }
    const LayerSpec& dense = model_->layers()[d];
    const float* w = model_->params()[d].data();
    const std::vector<double>& now = out_[d - 1];
    std::vector<double>& raw = raw_[d];
    for (int o = 0; o < dense.out_dim; ++o) {
      const float* row = w + static_cast<std::size_t>(o) * dense.in_dim;
      double delta = 0.0;
      for (std::size_t k = b; k < e; ++k) delta += static_cast<double>(row[k]) * (now[k] - old_[k - b]);
      raw[static_cast<std::size_t>(o)] += delta;
    }
    ApplyMask(d);
    Recompute(d + 1);
  }

  std::span<const double> logits() const {
    const std::size_t last = model_->layers().size() - 1;
    if (last == 0) return input_;
    return out_[last - 1];
  }

  double Loss(int label) const {
    return CrossEntropyFromLogits(logits(), label);
  }

  void Save(Snapshot& s) const {
    s.out = out_;
    s.raw = raw_;
    s.enabled = enabled_;
  }
  void Restore(const Snapshot& s) {
    for (std::size_t i = 0; i < out_.size(); ++i) {
      std::copy(s.out[i].begin(), s.out[i].end(), out_[i].begin());
      std::copy(s.raw[i].begin(), s.raw[i].end(), raw_[i].begin());
    }
    std::copy(s.enabled.begin(), s.enabled.end(), enabled_.begin());
  }

 private:
  void ApplyMask(std::size_t i) {
    const std::size_t span = detail::UnitSpan(model_->layer_output_shape(i));
    const std::size_t units = static_cast<std::size_t>(model_->unit_count(static_cast<int>(i)));
    const std::size_t first = first_neuron_[i];
    for (std::size_t u = 0; u < units; ++u) {
      const bool on = enabled_[first + u] != 0;
      for (std::size_t k = u * span; k < (u + 1) * span; ++k) {
        out_[i][k] = on ? raw_[i][k] : 0.0;
      }
    }
  }

  void Recompute(std::size_t from) {
    const auto& layers = model_->layers();
    const std::size_t last = layers.size() - 1;
    for (std::size_t i = from; i < last; ++i) {
      const LayerSpec& l = layers[i];
      const double* in = i == 0 ? input_.data() : out_[i - 1].data();
      const Shape& in_shape = model_->layer_input_shape(i);
      const Shape& out_shape = model_->layer_output_shape(i);
      std::vector<double>& out = out_[i];
      switch (l.kind) {
        case LayerKind::kDense:
          kernels::Dense(l, model_->params()[i].data(), in, raw_[i].data());
          ApplyMask(i);
          break;
        case LayerKind::kConv2d:
          kernels::Conv2d(l, model_->params()[i].data(), in_shape, out_shape, in,
                          raw_[i].data());
          ApplyMask(i);
          break;
        case LayerKind::kRelu:
          for (std::size_t k = 0; k < out.size(); ++k) out[k] = in[k] > 0.0 ? in[k] : 0.0;
          break;
        case LayerKind::kMaxPool2d:
          kernels::MaxPool(l, in_shape, out_shape, in, out.data());
          break;
        case LayerKind::kFlatten:
          std::copy(in, in + out.size(), out.begin());
          break;
        case LayerKind::kSoftmax:
          break;
      }
    }
  }

  const Network* model_;
  std::vector<double> input_;
  std::vector<std::vector<double>> out_;
  std::vector<std::vector<double>> raw_;
  std::vector<char> enabled_;
  std::vector<int> consumer_;
  std::vector<std::size_t> first_neuron_;
  std::vector<double> old_;
};

}  // namespace exfuzz
