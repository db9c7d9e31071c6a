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
// Embedding-space diagnostics: intra/inter-class cosine variance and their
// ratio, verification trials with EER, and sub-center utilization.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "subcenter/linalg.hpp"
#include "subcenter/rng.hpp"
#include "subcenter/trainer.hpp"

namespace subcenter {

namespace detail {

struct SpeakerGroup {
  std::vector<std::size_t> indices;
  Vec mean;  // arithmetic mean, not renormalized
};

inline std::map<int, SpeakerGroup> group_by_speaker(const EmbeddingSet& set) {
  if (set.embeddings.empty()) throw std::invalid_argument("empty embedding set");
  std::map<int, SpeakerGroup> groups;
  const std::size_t dim = set.embeddings.front().size();
  for (std::size_t i = 0; i < set.size(); ++i) groups[set.speaker_ids[i]].indices.push_back(i);
  for (auto& [id, g] : groups) {
    g.mean.assign(dim, 0.0);
    for (std::size_t i : g.indices)
      for (std::size_t d = 0; d < dim; ++d) g.mean[d] += set.embeddings[i][d];
    for (auto& x : g.mean) x /= static_cast<double>(g.indices.size());
    if (!(norm(g.mean) > 0.0)) throw std::invalid_argument("degenerate speaker mean");
  }
  return groups;
}

}  // namespace detail

// Population variance of cosine(x_{s,i}, mean_s) over all utterances.
inline double intra_class_variance(const EmbeddingSet& set) {
  auto groups = detail::group_by_speaker(set);
  std::vector<double> sims;
  sims.reserve(set.size());
  for (const auto& [id, g] : groups)
    for (std::size_t i : g.indices) sims.push_back(cosine_similarity(set.embeddings[i], g.mean));
  double mu = 0.0;
  for (double s : sims) mu += s;
  mu /= static_cast<double>(sims.size());
  double var = 0.0;
  for (double s : sims) var += (s - mu) * (s - mu);
  return var / static_cast<double>(sims.size());
}

// Population variance of cosine(x_{s,i}, mean_{s'}) over all N*(S-1)
// utterance/other-speaker pairs.
inline double inter_class_variance(const EmbeddingSet& set) {
  auto groups = detail::group_by_speaker(set);
  if (groups.size() < 2) throw std::invalid_argument("need at least 2 speakers");
  std::vector<double> sims;
  sims.reserve(set.size() * (groups.size() - 1));
  for (const auto& [id, g] : groups)
    for (std::size_t i : g.indices)
      for (const auto& [other_id, other] : groups) {
        if (other_id == id) continue;
        sims.push_back(cosine_similarity(set.embeddings[i], other.mean));
      }
  double mu = 0.0;
  for (double s : sims) mu += s;
  mu /= static_cast<double>(sims.size());
  double var = 0.0;
  for (double s : sims) var += (s - mu) * (s - mu);
  return var / static_cast<double>(sims.size());
}

inline double variance_ratio(const EmbeddingSet& set) {
  double inter = inter_class_variance(set);
  if (!(inter > 0.0)) throw std::invalid_argument("degenerate configuration");
  return intra_class_variance(set) / inter;
}

struct Trial {
  std::size_t a = 0, b = 0;
  bool same_speaker = false;
  double score = 0.0;  // cosine similarity
};

struct TrialSet {
  std::vector<Trial> trials;

  std::vector<double> positive_scores() const {
    std::vector<double> s;
    for (const auto& t : trials)
      if (t.same_speaker) s.push_back(t.score);
    return s;
  }
  std::vector<double> negative_scores() const {
    std::vector<double> s;
    for (const auto& t : trials)
      if (!t.same_speaker) s.push_back(t.score);
    return s;
  }
};

// Seeded 50/50 target/nontarget pair sampling without duplicate unordered
// pairs. Odd request counts put the extra trial on the negative side.
inline TrialSet build_trials(const EmbeddingSet& set, std::size_t num_trials, std::uint64_t seed) {
  auto groups = detail::group_by_speaker(set);
  if (groups.size() < 2) throw std::invalid_argument("need at least 2 speakers");
  for (const auto& [id, g] : groups)
    if (g.indices.size() < 2) throw std::invalid_argument("every speaker needs >= 2 embeddings");

  std::size_t pos_avail = 0;
  for (const auto& [id, g] : groups)
    pos_avail += g.indices.size() * (g.indices.size() - 1) / 2;
  std::size_t all_pairs = set.size() * (set.size() - 1) / 2;
  std::size_t neg_avail = all_pairs - pos_avail;

  std::size_t pos_needed = num_trials / 2;
  std::size_t neg_needed = num_trials - pos_needed;
  if (pos_needed > pos_avail || neg_needed > neg_avail)
    throw std::invalid_argument("requested trials exceed available distinct pairs");

  std::vector<const detail::SpeakerGroup*> speaker_list;
  for (const auto& [id, g] : groups) speaker_list.push_back(&g);

  Rng rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> used;
  TrialSet out;
  out.trials.reserve(num_trials);

  auto add_pair = [&](std::size_t i, std::size_t j, bool same) {
    if (i > j) std::swap(i, j);
    if (i == j || !used.insert({i, j}).second) return false;
    Trial t;
    t.a = i;
    t.b = j;
    t.same_speaker = same;
    t.score = cosine_similarity(set.embeddings[i], set.embeddings[j]);
    out.trials.push_back(t);
    return true;
  };

  std::size_t made = 0;
  while (made < pos_needed) {
    const auto* g = speaker_list[rng.next_below(speaker_list.size())];
    std::size_t i = g->indices[rng.next_below(g->indices.size())];
    std::size_t j = g->indices[rng.next_below(g->indices.size())];
    if (add_pair(i, j, true)) ++made;
  }
  made = 0;
  while (made < neg_needed) {
    std::size_t i = rng.next_below(set.size());
    std::size_t j = rng.next_below(set.size());
    if (set.speaker_ids[i] == set.speaker_ids[j]) continue;
    if (add_pair(i, j, false)) ++made;
  }
  return out;
}

// EER via a threshold sweep over all observed scores with linear
// interpolation between adjacent ROC points at the FAR/FRR crossing.
inline double compute_eer(std::vector<double> pos, std::vector<double> neg) {
  if (pos.empty() || neg.empty()) throw std::invalid_argument("empty score list");
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  std::vector<double> thresholds;
  thresholds.reserve(pos.size() + neg.size());
  thresholds.insert(thresholds.end(), pos.begin(), pos.end());
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  // Accept when score >= t. FRR rises and FAR falls as t sweeps upward.
  auto frr_at = [&](double t) {
    auto below = std::lower_bound(pos.begin(), pos.end(), t) - pos.begin();
    return static_cast<double>(below) / static_cast<double>(pos.size());
  };
  auto far_at = [&](double t) {
    auto below = std::lower_bound(neg.begin(), neg.end(), t) - neg.begin();
    return static_cast<double>(neg.size() - below) / static_cast<double>(neg.size());
  };

  double prev_far = 1.0, prev_frr = 0.0;  // t = -inf
  for (double t : thresholds) {
    double far = far_at(t), frr = frr_at(t);
    if (frr >= far) {
      double d_prev = prev_frr - prev_far;  // <= 0
      double d_cur = frr - far;             // >= 0
      double span = d_cur - d_prev;
      double alpha = span > 0.0 ? -d_prev / span : 0.0;
      return prev_far + alpha * (far - prev_far);  // crossing in the (FAR, FRR) plane
    }
    prev_far = far;
    prev_frr = frr;
  }
  // t beyond the largest score: FAR = 0, FRR = 1.
  {
    double d_prev = prev_frr - prev_far;
    double d_cur = 1.0;
    double span = d_cur - d_prev;
    double alpha = span > 0.0 ? -d_prev / span : 0.0;
    return prev_far + alpha * (0.0 - prev_far);
  }
}

inline double eer_of(const TrialSet& trials) {
  return compute_eer(trials.positive_scores(), trials.negative_scores());
}

struct UtilizationReport {
  std::vector<int> per_class;  // active sub-center count per class
  double mean = 0.0;
};

// A sub-center is active when it is the argmax match for at least one of
// its own class's training utterances. Utterances from speakers unknown to
// the model are skipped.
inline UtilizationReport subcenter_utilization(const TrainedModel& model,
                                               const SyntheticCorpus& corpus) {
  const int c = model.bank.num_subcenters;
  std::vector<std::set<int>> active(model.bank.num_classes);
  for (const auto& u : corpus.utterances) {
    int cls = model.try_class_of(u.speaker_id);
    if (cls < 0) continue;
    Vec x = encode(model, u.features);
    int best = 0;
    double best_sim = -2.0;
    for (int q = 0; q < c; ++q) {
      double s = dot(x, model.bank.row(cls, q));
      if (s > best_sim) {
        best_sim = s;
        best = q;
      }
    }
    active[cls].insert(best);
  }
  UtilizationReport rep;
  rep.per_class.reserve(active.size());
  double total = 0.0;
  for (const auto& a : active) {
    rep.per_class.push_back(static_cast<int>(a.size()));
    total += static_cast<double>(a.size());
  }
  rep.mean = total / static_cast<double>(active.size());
  return rep;
}

struct MetricsReport {
  double eer = 0.0;
  double intra_var = 0.0;
  double inter_var = 0.0;
  double var_ratio = 0.0;
  double utilization_mean = 0.0;
  std::vector<int> utilization_per_class;
};

inline nlohmann::json metrics_report_to_json(const MetricsReport& r) {
  return {{"eer", r.eer},
          {"intra_var", r.intra_var},
          {"inter_var", r.inter_var},
          {"var_ratio", r.var_ratio},
          {"utilization_mean", r.utilization_mean},
          {"utilization_per_class", r.utilization_per_class}};
}

// Scores file: CSV `label,score` with label in {target, nontarget}.
inline std::string trials_to_csv(const TrialSet& trials) {
  std::ostringstream out;
  out << "label,score\n";
  char buf[40];
  for (const auto& t : trials.trials) {
    std::snprintf(buf, sizeof buf, "%.17g", t.score);
    out << (t.same_speaker ? "target" : "nontarget") << "," << buf << "\n";
  }
  return out.str();
}

}  // namespace subcenter
