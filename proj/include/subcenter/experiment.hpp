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
// Config-driven experiment orchestration: variant x seed training runs,
// evaluation on the unseen-speaker split, median summaries per variant.

#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "subcenter/corpus.hpp"
#include "subcenter/metrics.hpp"
#include "subcenter/trainer.hpp"

namespace subcenter {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// Exhaustive key validation: every listed key must be present, nothing
// else may appear. Silent config typos are the main reproducibility hazard.
inline void require_keys(const nlohmann::json& j, const std::string& section,
                         const std::vector<std::string>& keys) {
  if (!j.is_object()) throw ConfigError("config section `" + section + "` must be an object");
  for (const auto& k : keys)
    if (!j.contains(k)) throw ConfigError("config section `" + section + "` is missing `" + k + "`");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("config section `" + section + "` has unknown key `" + k + "`");
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

struct LossVariant {
  std::string name;
  LossConfig loss;
};

struct ExperimentConfig {
  CorpusConfig corpus;
  EncoderConfig encoder;  // input_dim is derived from corpus.feature_dim
  TrainConfig train_base;  // loss and seed filled in per variant/seed
  std::vector<LossVariant> variants;
  std::size_t trials = 0;
  std::vector<std::uint64_t> seeds;
  double train_fraction = 0.8;
  std::string output_dir;

  void validate() const {
    corpus.validate();
    encoder.validate();
    if (variants.empty()) throw ConfigError("config needs at least one variant");
    std::set<std::string> names;
    for (const auto& v : variants) {
      v.loss.validate();
      if (!names.insert(v.name).second) throw ConfigError("duplicate variant name `" + v.name + "`");
    }
    if (seeds.empty()) throw ConfigError("config needs at least one seed");
    if (trials < 2) throw ConfigError("trials must be >= 2");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw ConfigError("train_fraction must be in (0, 1)");
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
    if (train_base.epochs < 1) throw ConfigError("epochs must be >= 1");
    if (train_base.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(train_base.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  }
};

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  detail::require_keys(j, "corpus",
                       {"num_speakers", "subclusters_per_speaker", "utterances_per_speaker",
                        "feature_dim", "speaker_spread", "subcluster_spread", "noise_sigma",
                        "seed"});
  CorpusConfig cfg;
  cfg.num_speakers = j.at("num_speakers").get<int>();
  cfg.subclusters_per_speaker = j.at("subclusters_per_speaker").get<int>();
  cfg.utterances_per_speaker = j.at("utterances_per_speaker").get<int>();
  cfg.feature_dim = j.at("feature_dim").get<int>();
  cfg.speaker_spread = j.at("speaker_spread").get<double>();
  cfg.subcluster_spread = j.at("subcluster_spread").get<double>();
  cfg.noise_sigma = j.at("noise_sigma").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

inline nlohmann::json corpus_config_to_json(const CorpusConfig& cfg) {
  return {{"num_speakers", cfg.num_speakers},
          {"subclusters_per_speaker", cfg.subclusters_per_speaker},
          {"utterances_per_speaker", cfg.utterances_per_speaker},
          {"feature_dim", cfg.feature_dim},
          {"speaker_spread", cfg.speaker_spread},
          {"subcluster_spread", cfg.subcluster_spread},
          {"noise_sigma", cfg.noise_sigma},
          {"seed", cfg.seed}};
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  detail::require_keys(j, "(root)", {"corpus", "encoder", "train", "variants", "trials", "seeds",
                                     "train_fraction", "output_dir"});
  ExperimentConfig cfg;
  cfg.corpus = corpus_config_from_json(j.at("corpus"));

  const auto& ej = j.at("encoder");
  detail::require_keys(ej, "encoder", {"hidden_dims", "embedding_dim", "activation", "seed"});
  cfg.encoder.input_dim = cfg.corpus.feature_dim;
  cfg.encoder.hidden_dims = ej.at("hidden_dims").get<std::vector<int>>();
  cfg.encoder.embedding_dim = ej.at("embedding_dim").get<int>();
  cfg.encoder.activation = activation_from_string(ej.at("activation").get<std::string>());
  cfg.encoder.seed = ej.at("seed").get<std::uint64_t>();

  const auto& tj = j.at("train");
  detail::require_keys(tj, "train", {"epochs", "batch_size", "learning_rate", "optimizer"});
  cfg.train_base.epochs = tj.at("epochs").get<int>();
  cfg.train_base.batch_size = tj.at("batch_size").get<int>();
  cfg.train_base.learning_rate = tj.at("learning_rate").get<double>();
  cfg.train_base.optimizer = optimizer_from_string(tj.at("optimizer").get<std::string>());

  if (!j.at("variants").is_array()) throw ConfigError("`variants` must be an array");
  for (const auto& vj : j.at("variants")) {
    detail::require_keys(vj, "variant", {"name", "loss"});
    const auto& lj = vj.at("loss");
    detail::require_keys(lj, "variant loss", {"margin", "scale", "temperature", "subcenters"});
    LossVariant v;
    v.name = vj.at("name").get<std::string>();
    v.loss.margin = lj.at("margin").get<double>();
    v.loss.scale = lj.at("scale").get<double>();
    v.loss.temperature = lj.at("temperature").get<double>();
    v.loss.subcenters = lj.at("subcenters").get<int>();
    cfg.variants.push_back(std::move(v));
  }

  cfg.trials = j.at("trials").get<std::size_t>();
  cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.train_fraction = j.at("train_fraction").get<double>();
  cfg.output_dir = j.at("output_dir").get<std::string>();
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return experiment_config_from_json(j);
}

// The split is a function of the corpus seed alone, so every variant and
// training seed sees the same unseen-speaker protocol.
inline std::pair<SyntheticCorpus, SyntheticCorpus> make_split(const ExperimentConfig& cfg,
                                                              const SyntheticCorpus& corpus) {
  return split_corpus(corpus, cfg.train_fraction, mix64(cfg.corpus.seed ^ 0x5914a));
}

inline TrainedModel train_variant(const ExperimentConfig& cfg, const SyntheticCorpus& train_split,
                                  const LossVariant& variant, std::uint64_t seed) {
  EncoderConfig enc = cfg.encoder;
  enc.seed = mix64(enc.seed ^ mix64(seed));
  TrainConfig tc = cfg.train_base;
  tc.loss = variant.loss;
  tc.seed = seed;
  return train(train_split, enc, tc);
}

// Metrics over the eval split plus utilization over the training split.
inline MetricsReport evaluate_model(const TrainedModel& model, const SyntheticCorpus& eval_split,
                                    const SyntheticCorpus& utilization_corpus, std::size_t trials,
                                    std::uint64_t seed) {
  EmbeddingSet set = extract_all(model, eval_split);
  TrialSet trial_set = build_trials(set, trials, seed);
  MetricsReport rep;
  rep.eer = eer_of(trial_set);
  rep.intra_var = intra_class_variance(set);
  rep.inter_var = inter_class_variance(set);
  rep.var_ratio = rep.intra_var / rep.inter_var;
  UtilizationReport util = subcenter_utilization(model, utilization_corpus);
  rep.utilization_mean = util.mean;
  rep.utilization_per_class = util.per_class;
  return rep;
}

struct VariantResult {
  std::string name;
  bool failed = false;
  std::string error;
  std::vector<MetricsReport> per_seed;
  double median_eer = 0.0;
  double median_var_ratio = 0.0;
  double median_utilization = 0.0;
};

struct ExperimentResult {
  std::vector<VariantResult> rows;
  bool any_failed = false;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  SyntheticCorpus corpus = generate_corpus(cfg.corpus);
  auto [train_split, eval_split] = make_split(cfg, corpus);

  ExperimentResult result;
  for (const auto& variant : cfg.variants) {
    VariantResult row;
    row.name = variant.name;
    try {
      std::vector<double> eers, ratios, utils;
      for (std::uint64_t seed : cfg.seeds) {
        TrainedModel model = train_variant(cfg, train_split, variant, seed);
        MetricsReport rep = evaluate_model(model, eval_split, train_split, cfg.trials, seed);
        eers.push_back(rep.eer);
        ratios.push_back(rep.var_ratio);
        utils.push_back(rep.utilization_mean);
        row.per_seed.push_back(std::move(rep));
      }
      row.median_eer = detail::median(eers);
      row.median_var_ratio = detail::median(ratios);
      row.median_utilization = detail::median(utils);
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      result.any_failed = true;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

inline nlohmann::json experiment_result_to_json(const ExperimentResult& result) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : result.rows) {
    nlohmann::json rj{{"variant", row.name}, {"status", row.failed ? "failed" : "ok"}};
    if (row.failed) {
      rj["error"] = row.error;
    } else {
      rj["median_eer"] = row.median_eer;
      rj["median_var_ratio"] = row.median_var_ratio;
      rj["median_utilization"] = row.median_utilization;
      nlohmann::json per_seed = nlohmann::json::array();
      for (const auto& rep : row.per_seed) per_seed.push_back(metrics_report_to_json(rep));
      rj["per_seed"] = per_seed;
    }
    rows.push_back(std::move(rj));
  }
  return {{"rows", rows}};
}

// Aligned text table with one row per variant: variant, EER, var, util.
inline std::string experiment_result_to_table(const ExperimentResult& result) {
  std::size_t name_w = 7;
  for (const auto& row : result.rows) name_w = std::max(name_w, row.name.size());
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-*s  %9s  %8s  %8s\n", static_cast<int>(name_w), "variant",
                "EER(%)", "var", "util");
  out << buf;
  for (const auto& row : result.rows) {
    if (row.failed) {
      std::snprintf(buf, sizeof buf, "%-*s  %9s  %8s  %8s\n", static_cast<int>(name_w),
                    row.name.c_str(), "failed", "-", "-");
    } else {
      std::snprintf(buf, sizeof buf, "%-*s  %9.3f  %8.4f  %8.2f\n", static_cast<int>(name_w),
                    row.name.c_str(), 100.0 * row.median_eer, row.median_var_ratio,
                    row.median_utilization);
    }
    out << buf;
  }
  return out.str();
}

}  // namespace subcenter
