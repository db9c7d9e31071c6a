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
// Seeded multi-speaker corpus generator. Each speaker is a mixture of
// latent sub-style clusters in feature space; utterances are noisy draws
// around sub-cluster means. Stands in for a real speech corpus.

#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "subcenter/linalg.hpp"
#include "subcenter/rng.hpp"

namespace subcenter {

struct CorpusConfig {
  int num_speakers = 50;
  int subclusters_per_speaker = 4;
  int utterances_per_speaker = 200;
  int feature_dim = 32;
  double speaker_spread = 3.0;     // radius of the sphere speaker means live on
  double subcluster_spread = 1.0;  // distance of sub-cluster means from the speaker mean
  double noise_sigma = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (num_speakers < 1) throw std::invalid_argument("num_speakers must be >= 1");
    if (subclusters_per_speaker < 1) throw std::invalid_argument("subclusters_per_speaker must be >= 1");
    if (utterances_per_speaker < 1) throw std::invalid_argument("utterances_per_speaker must be >= 1");
    if (feature_dim < 1) throw std::invalid_argument("feature_dim must be >= 1");
    if (speaker_spread < 0.0) throw std::invalid_argument("speaker_spread must be >= 0");
    if (subcluster_spread < 0.0) throw std::invalid_argument("subcluster_spread must be >= 0");
    if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
    if (subcluster_spread >= speaker_spread)
      throw std::invalid_argument("subcluster_spread must be < speaker_spread");
  }
};

struct Utterance {
  int speaker_id = 0;
  int subcluster_id = 0;  // ground-truth latent style, diagnostics only
  Vec features;
};

struct SyntheticCorpus {
  int feature_dim = 0;
  std::vector<Utterance> utterances;

  std::vector<int> speaker_ids() const {
    std::set<int> ids;
    for (const auto& u : utterances) ids.insert(u.speaker_id);
    return {ids.begin(), ids.end()};
  }
};

namespace detail {

// Uniform direction on the sphere via normalized Gaussian draw.
inline Vec random_direction(Rng& rng, int dim) {
  Vec v;
  do {
    v = rng.gaussian_vector(static_cast<std::size_t>(dim));
  } while (!(norm(v) > 0.0));
  normalize_in_place(v);
  return v;
}

}  // namespace detail

// One independent stream per speaker, so growing num_speakers never
// perturbs earlier speakers' draws.
inline SyntheticCorpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  SyntheticCorpus corpus;
  corpus.feature_dim = cfg.feature_dim;
  corpus.utterances.reserve(static_cast<std::size_t>(cfg.num_speakers) * cfg.utterances_per_speaker);

  for (int s = 0; s < cfg.num_speakers; ++s) {
    Rng rng = root.stream(static_cast<std::uint64_t>(s));

    Vec speaker_mean = detail::random_direction(rng, cfg.feature_dim);
    for (auto& x : speaker_mean) x *= cfg.speaker_spread;

    std::vector<Vec> cluster_means(cfg.subclusters_per_speaker);
    for (auto& cm : cluster_means) {
      Vec offset = detail::random_direction(rng, cfg.feature_dim);
      cm = speaker_mean;
      for (int d = 0; d < cfg.feature_dim; ++d) cm[d] += cfg.subcluster_spread * offset[d];
    }

    for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
      int k = u % cfg.subclusters_per_speaker;  // balanced assignment
      Utterance utt;
      utt.speaker_id = s;
      utt.subcluster_id = k;
      utt.features = cluster_means[k];
      for (int d = 0; d < cfg.feature_dim; ++d)
        utt.features[d] += cfg.noise_sigma * rng.next_gaussian();
      corpus.utterances.push_back(std::move(utt));
    }
  }
  return corpus;
}

// Speaker-level split: eval speakers are entirely unseen in training.
inline std::pair<SyntheticCorpus, SyntheticCorpus> split_corpus(const SyntheticCorpus& corpus,
                                                                double train_fraction,
                                                                std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must be in (0, 1)");
  std::vector<int> speakers = corpus.speaker_ids();
  if (speakers.size() < 2) throw std::invalid_argument("need at least 2 speakers to split");

  auto n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(speakers.size())));
  if (n_train == 0 || n_train >= speakers.size())
    throw std::invalid_argument("split leaves an empty side");

  Rng rng(seed);
  auto perm = rng.permutation(speakers.size());
  std::set<int> train_set;
  for (std::size_t i = 0; i < n_train; ++i) train_set.insert(speakers[perm[i]]);

  SyntheticCorpus train, eval;
  train.feature_dim = eval.feature_dim = corpus.feature_dim;
  for (const auto& u : corpus.utterances)
    (train_set.count(u.speaker_id) ? train : eval).utterances.push_back(u);
  return {std::move(train), std::move(eval)};
}

// CSV: header `speaker_id,subcluster_id,f0..f{D-1}`, shortest round-trip
// double formatting, '\n' line ends. Byte-identical for identical corpora.
inline std::string corpus_to_csv(const SyntheticCorpus& corpus) {
  std::ostringstream out;
  out << "speaker_id,subcluster_id";
  for (int d = 0; d < corpus.feature_dim; ++d) out << ",f" << d;
  out << "\n";
  char buf[40];
  for (const auto& u : corpus.utterances) {
    out << u.speaker_id << "," << u.subcluster_id;
    for (double x : u.features) {
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out << "," << buf;
    }
    out << "\n";
  }
  return out.str();
}

inline void save_corpus_csv(const SyntheticCorpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << corpus_to_csv(corpus);
}

inline SyntheticCorpus load_corpus_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open corpus: " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty corpus file: " + path);
  int dim = 0;
  {
    std::stringstream hs(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(hs, col, ',')) cols.push_back(col);
    if (cols.size() < 3 || cols[0] != "speaker_id" || cols[1] != "subcluster_id")
      throw std::runtime_error("bad corpus header: " + path);
    dim = static_cast<int>(cols.size()) - 2;
  }
  SyntheticCorpus corpus;
  corpus.feature_dim = dim;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    Utterance u;
    if (!std::getline(ls, cell, ',')) throw std::runtime_error("bad corpus row");
    u.speaker_id = std::stoi(cell);
    if (!std::getline(ls, cell, ',')) throw std::runtime_error("bad corpus row");
    u.subcluster_id = std::stoi(cell);
    u.features.reserve(dim);
    while (std::getline(ls, cell, ',')) u.features.push_back(std::stod(cell));
    if (static_cast<int>(u.features.size()) != dim) throw std::runtime_error("bad corpus row width");
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

}  // namespace subcenter
