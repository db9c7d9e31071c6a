// Copyright 2026  Sub-center Embeddings Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Small feed-forward encoder mapping utterance features to embeddings.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "subcenter/linalg.hpp"
#include "subcenter/rng.hpp"

namespace subcenter {

enum class Activation { kRelu, kTanh };

inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation: " + s);
}

struct EncoderConfig {
  int input_dim = 32;
  std::vector<int> hidden_dims{64, 64};
  int embedding_dim = 16;
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 0;

  void validate() const {
    if (input_dim < 1) throw std::invalid_argument("input_dim must be >= 1");
    if (embedding_dim < 2) throw std::invalid_argument("embedding_dim must be >= 2");
    for (int h : hidden_dims)
      if (h < 1) throw std::invalid_argument("hidden dims must be >= 1");
  }
};

struct DenseLayer {
  int in = 0, out = 0;
  std::vector<double> w;  // out x in, row-major
  std::vector<double> b;  // out
};

// Hidden layers carry the configured activation; the output layer is
// linear. Raw outputs are normalized by the caller (the loss differentiates
// through that normalization).
struct Encoder {
  EncoderConfig config;
  std::vector<DenseLayer> layers;

  static Encoder init(const EncoderConfig& cfg) {
    cfg.validate();
    Encoder enc;
    enc.config = cfg;
    Rng rng(cfg.seed);
    std::vector<int> dims{cfg.input_dim};
    dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
    dims.push_back(cfg.embedding_dim);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      DenseLayer layer;
      layer.in = dims[i];
      layer.out = dims[i + 1];
      // He scaling for relu, Xavier for tanh.
      double sd = cfg.activation == Activation::kRelu ? std::sqrt(2.0 / layer.in)
                                                      : std::sqrt(1.0 / layer.in);
      layer.w.resize(static_cast<std::size_t>(layer.out) * layer.in);
      for (auto& x : layer.w) x = sd * rng.next_gaussian();
      layer.b.assign(layer.out, 0.0);
      enc.layers.push_back(std::move(layer));
    }
    return enc;
  }

  // Raw (unnormalized) embedding.
  Vec forward(std::span<const double> input) const {
    if (input.size() != static_cast<std::size_t>(config.input_dim))
      throw std::invalid_argument("input dim mismatch");
    Vec a(input.begin(), input.end());
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto& layer = layers[li];
      Vec z(layer.out);
      for (int o = 0; o < layer.out; ++o) {
        double acc = layer.b[o];
        const double* wrow = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
        for (int k = 0; k < layer.in; ++k) acc += wrow[k] * a[k];
        z[o] = acc;
      }
      if (li + 1 < layers.size()) {
        if (config.activation == Activation::kRelu)
          for (auto& x : z) x = x > 0.0 ? x : 0.0;
        else
          for (auto& x : z) x = std::tanh(x);
      }
      a = std::move(z);
    }
    return a;
  }

  struct ForwardTrace {
    std::vector<Vec> activations;  // input + post-activation of each layer
  };

  Vec forward_traced(std::span<const double> input, ForwardTrace& trace) const {
    trace.activations.clear();
    trace.activations.emplace_back(input.begin(), input.end());
    Vec a(input.begin(), input.end());
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto& layer = layers[li];
      Vec z(layer.out);
      for (int o = 0; o < layer.out; ++o) {
        double acc = layer.b[o];
        const double* wrow = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
        for (int k = 0; k < layer.in; ++k) acc += wrow[k] * a[k];
        z[o] = acc;
      }
      if (li + 1 < layers.size()) {
        if (config.activation == Activation::kRelu)
          for (auto& x : z) x = x > 0.0 ? x : 0.0;
        else
          for (auto& x : z) x = std::tanh(x);
      }
      trace.activations.push_back(z);
      a = std::move(z);
    }
    return a;
  }

  struct Gradients {
    std::vector<DenseLayer> layers;  // same shapes, holding dW / db
  };

  Gradients zero_gradients() const {
    Gradients g;
    g.layers = layers;
    for (auto& layer : g.layers) {
      std::fill(layer.w.begin(), layer.w.end(), 0.0);
      std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
    return g;
  }

  // Accumulates parameter gradients for one example given d loss / d raw
  // embedding. Uses the post-activation values recorded in trace.
  void backward(const ForwardTrace& trace, std::span<const double> grad_output,
                Gradients& grads) const {
    Vec delta(grad_output.begin(), grad_output.end());
    for (std::size_t li = layers.size(); li-- > 0;) {
      const auto& layer = layers[li];
      const Vec& a_in = trace.activations[li];
      auto& g = grads.layers[li];
      for (int o = 0; o < layer.out; ++o) {
        g.b[o] += delta[o];
        double* grow = g.w.data() + static_cast<std::size_t>(o) * layer.in;
        for (int k = 0; k < layer.in; ++k) grow[k] += delta[o] * a_in[k];
      }
      if (li == 0) break;
      Vec prev(layer.in, 0.0);
      for (int o = 0; o < layer.out; ++o) {
        const double* wrow = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
        for (int k = 0; k < layer.in; ++k) prev[k] += wrow[k] * delta[o];
      }
      // activation derivative of the producing layer, from its output value
      const Vec& a_prev = trace.activations[li];
      if (config.activation == Activation::kRelu) {
        for (int k = 0; k < layer.in; ++k)
          if (!(a_prev[k] > 0.0)) prev[k] = 0.0;
      } else {
        for (int k = 0; k < layer.in; ++k) prev[k] *= 1.0 - a_prev[k] * a_prev[k];
      }
      delta = std::move(prev);
    }
  }

  bool finite() const {
    for (const auto& layer : layers)
      if (!all_finite(layer.w) || !all_finite(layer.b)) return false;
    return true;
  }
};

}  // namespace subcenter
