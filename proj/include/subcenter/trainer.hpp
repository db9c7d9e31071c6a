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
// Deterministic training loop: seeded shuffling, Adam or SGD, sub-center
// bank re-projected to the unit sphere after every step.

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "subcenter/corpus.hpp"
#include "subcenter/encoder.hpp"
#include "subcenter/loss.hpp"

namespace subcenter {

enum class Optimizer { kAdam, kSgd };

inline std::string to_string(Optimizer o) { return o == Optimizer::kAdam ? "adam" : "sgd"; }
inline Optimizer optimizer_from_string(const std::string& s) {
  if (s == "adam") return Optimizer::kAdam;
  if (s == "sgd") return Optimizer::kSgd;
  throw std::invalid_argument("unknown optimizer: " + s);
}

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-4;
  Optimizer optimizer = Optimizer::kAdam;
  LossConfig loss;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    loss.validate();
  }
};

struct TrainedModel {
  Encoder encoder;
  SubCenterBank bank;
  TrainConfig train_config;
  std::vector<int> class_speakers;   // class index -> original speaker id
  std::vector<double> loss_history;  // per-epoch mean loss

  int class_of(int speaker_id) const {
    int cls = try_class_of(speaker_id);
    if (cls < 0) throw std::invalid_argument("speaker not in training set");
    return cls;
  }

  // -1 when the speaker was not part of training.
  int try_class_of(int speaker_id) const {
    auto it = std::lower_bound(class_speakers.begin(), class_speakers.end(), speaker_id);
    if (it == class_speakers.end() || *it != speaker_id) return -1;
    return static_cast<int>(it - class_speakers.begin());
  }
};

// Unit-norm embedding for one utterance feature vector.
inline Vec encode(const TrainedModel& model, std::span<const double> features) {
  Vec raw = model.encoder.forward(features);
  normalize_in_place(raw);
  return raw;
}

struct EmbeddingSet {
  std::vector<Vec> embeddings;
  std::vector<int> speaker_ids;
  std::vector<int> subcluster_ids;

  std::size_t size() const { return embeddings.size(); }
};

inline EmbeddingSet extract_all(const TrainedModel& model, const SyntheticCorpus& corpus) {
  EmbeddingSet set;
  set.embeddings.reserve(corpus.utterances.size());
  for (const auto& u : corpus.utterances) {
    set.embeddings.push_back(encode(model, u.features));
    set.speaker_ids.push_back(u.speaker_id);
    set.subcluster_ids.push_back(u.subcluster_id);
  }
  return set;
}

namespace detail {

// First-moment/second-moment state over one flat parameter vector.
struct AdamState {
  std::vector<double> m, v;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

inline void adam_step(std::vector<double>& params, const std::vector<double>& grads,
                      AdamState& state, double lr, long step) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * grads[i] * grads[i];
    params[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + eps);
  }
}

inline void sgd_step(std::vector<double>& params, const std::vector<double>& grads, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
}

}  // namespace detail

inline TrainedModel train(const SyntheticCorpus& corpus_train, const EncoderConfig& encoder_cfg,
                          const TrainConfig& train_cfg) {
  train_cfg.validate();
  encoder_cfg.validate();
  if (corpus_train.utterances.empty()) throw std::invalid_argument("empty training corpus");
  if (corpus_train.feature_dim != encoder_cfg.input_dim)
    throw std::invalid_argument("corpus feature_dim disagrees with encoder input_dim");

  TrainedModel model;
  model.train_config = train_cfg;
  model.class_speakers = corpus_train.speaker_ids();
  const int num_classes = static_cast<int>(model.class_speakers.size());
  if (num_classes < 2) throw std::invalid_argument("need at least 2 speakers to train");

  model.encoder = Encoder::init(encoder_cfg);
  Rng bank_rng = Rng(train_cfg.seed).stream(0xb0b);
  model.bank = SubCenterBank::random(num_classes, train_cfg.loss.subcenters,
                                     encoder_cfg.embedding_dim, bank_rng);

  std::vector<detail::AdamState> enc_state;
  for (const auto& layer : model.encoder.layers) {
    enc_state.emplace_back(layer.w.size());
    enc_state.emplace_back(layer.b.size());
  }
  detail::AdamState bank_state(model.bank.weights.size());

  const std::size_t n = corpus_train.utterances.size();
  const std::size_t l = static_cast<std::size_t>(encoder_cfg.embedding_dim);
  Rng shuffle_root(train_cfg.seed);
  long step = 0;

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    Rng epoch_rng = shuffle_root.stream(static_cast<std::uint64_t>(epoch) + 1);
    auto perm = epoch_rng.permutation(n);
    double epoch_loss = 0.0;

    for (std::size_t start = 0; start < n; start += train_cfg.batch_size) {
      std::size_t bsz = std::min<std::size_t>(train_cfg.batch_size, n - start);

      Batch batch;
      batch.count = bsz;
      batch.dim = l;
      batch.features.resize(bsz * l);
      batch.labels.resize(bsz);
      std::vector<Encoder::ForwardTrace> traces(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        const auto& utt = corpus_train.utterances[perm[start + b]];
        Vec raw = model.encoder.forward_traced(utt.features, traces[b]);
        std::copy(raw.begin(), raw.end(), batch.features.begin() + b * l);
        batch.labels[b] = model.class_of(utt.speaker_id);
      }

      LossOutput lo = subcenter_loss(batch, model.bank, train_cfg.loss);
      if (!std::isfinite(lo.loss))
        throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(start / train_cfg.batch_size));
      epoch_loss += lo.loss * static_cast<double>(bsz);

      auto grads = model.encoder.zero_gradients();
      for (std::size_t b = 0; b < bsz; ++b)
        model.encoder.backward(traces[b],
                               std::span<const double>(lo.grad_embeddings).subspan(b * l, l),
                               grads);

      ++step;
      std::size_t si = 0;
      for (std::size_t li = 0; li < model.encoder.layers.size(); ++li) {
        auto& layer = model.encoder.layers[li];
        auto& g = grads.layers[li];
        if (train_cfg.optimizer == Optimizer::kAdam) {
          detail::adam_step(layer.w, g.w, enc_state[si], train_cfg.learning_rate, step);
          detail::adam_step(layer.b, g.b, enc_state[si + 1], train_cfg.learning_rate, step);
        } else {
          detail::sgd_step(layer.w, g.w, train_cfg.learning_rate);
          detail::sgd_step(layer.b, g.b, train_cfg.learning_rate);
        }
        si += 2;
      }
      if (train_cfg.optimizer == Optimizer::kAdam)
        detail::adam_step(model.bank.weights, lo.grad_weights, bank_state, train_cfg.learning_rate,
                          step);
      else
        detail::sgd_step(model.bank.weights, lo.grad_weights, train_cfg.learning_rate);
      model.bank.renormalize();  // projected gradient on the sphere
    }

    if (!model.encoder.finite() || !all_finite(model.bank.weights))
      throw std::runtime_error("non-finite weights after epoch " + std::to_string(epoch));
    model.loss_history.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

// --- checkpoint serialization -------------------------------------------

inline nlohmann::json encoder_config_to_json(const EncoderConfig& cfg) {
  return {{"input_dim", cfg.input_dim},
          {"hidden_dims", cfg.hidden_dims},
          {"embedding_dim", cfg.embedding_dim},
          {"activation", to_string(cfg.activation)},
          {"seed", cfg.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.hidden_dims = j.at("hidden_dims").get<std::vector<int>>();
  cfg.embedding_dim = j.at("embedding_dim").get<int>();
  cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline nlohmann::json loss_config_to_json(const LossConfig& cfg) {
  return {{"margin", cfg.margin},
          {"scale", cfg.scale},
          {"temperature", cfg.temperature},
          {"subcenters", cfg.subcenters}};
}

inline LossConfig loss_config_from_json(const nlohmann::json& j) {
  LossConfig cfg;
  cfg.margin = j.at("margin").get<double>();
  cfg.scale = j.at("scale").get<double>();
  cfg.temperature = j.at("temperature").get<double>();
  cfg.subcenters = j.at("subcenters").get<int>();
  return cfg;
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"optimizer", to_string(cfg.optimizer)},
          {"loss", loss_config_to_json(cfg.loss)},
          {"seed", cfg.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.learning_rate = j.at("learning_rate").get<double>();
  cfg.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  cfg.loss = loss_config_from_json(j.at("loss"));
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_to_json(const TrainedModel& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : model.encoder.layers)
    layers.push_back({{"in", layer.in}, {"out", layer.out}, {"w", layer.w}, {"b", layer.b}});
  return {{"format_version", kCheckpointVersion},
          {"encoder_config", encoder_config_to_json(model.encoder.config)},
          {"train_config", train_config_to_json(model.train_config)},
          {"layers", layers},
          {"bank",
           {{"num_classes", model.bank.num_classes},
            {"num_subcenters", model.bank.num_subcenters},
            {"dim", model.bank.dim},
            {"weights", model.bank.weights}}},
          {"class_speakers", model.class_speakers},
          {"loss_history", model.loss_history}};
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  if (j.at("format_version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version");
  TrainedModel model;
  model.encoder.config = encoder_config_from_json(j.at("encoder_config"));
  model.train_config = train_config_from_json(j.at("train_config"));
  for (const auto& lj : j.at("layers")) {
    DenseLayer layer;
    layer.in = lj.at("in").get<int>();
    layer.out = lj.at("out").get<int>();
    layer.w = lj.at("w").get<std::vector<double>>();
    layer.b = lj.at("b").get<std::vector<double>>();
    model.encoder.layers.push_back(std::move(layer));
  }
  const auto& bj = j.at("bank");
  model.bank.num_classes = bj.at("num_classes").get<int>();
  model.bank.num_subcenters = bj.at("num_subcenters").get<int>();
  model.bank.dim = bj.at("dim").get<int>();
  model.bank.weights = bj.at("weights").get<std::vector<double>>();
  model.class_speakers = j.at("class_speakers").get<std::vector<int>>();
  model.loss_history = j.at("loss_history").get<std::vector<double>>();
  return model;
}

inline void save_checkpoint(const TrainedModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << model_to_json(model).dump(2) << "\n";
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  nlohmann::json j;
  f >> j;
  return model_from_json(j);
}

}  // namespace subcenter
