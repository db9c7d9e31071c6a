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
// Additive-angular-margin softmax over class centers, and its sub-center
// generalization where each class owns C unit directions and the class
// angle comes from a temperature-softmax aggregation of the per-sub-center
// cosines. All math in double; hand-derived gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "subcenter/linalg.hpp"
#include "subcenter/rng.hpp"

namespace subcenter {

inline constexpr double kCosineClamp = 1e-7;  // arccos input kept in [-1+eps, 1-eps]
inline constexpr double kHalfPi = 1.5707963267948966;

struct LossConfig {
  double margin = 0.4;       // radians, additive on the target angle
  double scale = 30.0;       // logit scale s
  double temperature = 1.0;  // sub-center softmax temperature T
  int subcenters = 1;        // C

  void validate() const {
    if (!(margin >= 0.0 && margin < kHalfPi)) throw std::invalid_argument("margin out of [0, pi/2)");
    if (!(scale > 0.0)) throw std::invalid_argument("invalid scale");
    if (!(temperature > 0.0)) throw std::invalid_argument("invalid temperature");
    if (subcenters < 1) throw std::invalid_argument("subcenters must be >= 1");
  }
};

// N x C x L unit-norm sub-center directions. C = 1 is the plain
// single-center bank of standard AAM-Softmax.
struct SubCenterBank {
  int num_classes = 0;
  int num_subcenters = 0;
  int dim = 0;
  std::vector<double> weights;  // flat N*C*L

  SubCenterBank() = default;
  SubCenterBank(int n, int c, int l)
      : num_classes(n), num_subcenters(c), dim(l), weights(static_cast<std::size_t>(n) * c * l, 0.0) {
    if (n < 2 || c < 1 || l < 1) throw std::invalid_argument("invalid bank shape");
  }

  static SubCenterBank random(int n, int c, int l, Rng& rng) {
    SubCenterBank bank(n, c, l);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c; ++j) {
        auto r = bank.row(i, j);
        for (auto& x : r) x = rng.next_gaussian();
        normalize_in_place(r);
      }
    return bank;
  }

  std::span<double> row(int cls, int sub) {
    return {weights.data() + (static_cast<std::size_t>(cls) * num_subcenters + sub) * dim,
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> row(int cls, int sub) const {
    return {weights.data() + (static_cast<std::size_t>(cls) * num_subcenters + sub) * dim,
            static_cast<std::size_t>(dim)};
  }

  void renormalize() {
    for (int i = 0; i < num_classes; ++i)
      for (int j = 0; j < num_subcenters; ++j) normalize_in_place(row(i, j));
  }
};

// A labeled batch of raw (not necessarily unit) embeddings, flat row-major.
struct Batch {
  std::size_t count = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // count * dim
  std::vector<int> labels;       // count

  std::span<const double> example(std::size_t i) const {
    return {features.data() + i * dim, dim};
  }
};

struct LossOutput {
  double loss = 0.0;
  std::vector<double> grad_embeddings;  // d loss / d raw features, count * dim
  std::vector<double> grad_weights;     // d loss / d raw bank weights, N*C*L
  std::vector<double> target_angles;    // per-example aggregated target angle, radians
};

// Softmax-weighted sum of the C sub-center cosines: sum_c a_c * sim_c with
// a = softmax(sim / T). Collapses to the single cosine at C = 1 and to the
// max cosine as T -> 0.
inline double aggregate_similarity(std::span<const double> x, std::span<const double> centers,
                                   int num_subcenters, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("invalid temperature");
  if (num_subcenters < 1) throw std::invalid_argument("subcenters must be >= 1");
  const std::size_t l = x.size();
  double max_sim = -2.0;
  std::vector<double> sims(num_subcenters);
  for (int c = 0; c < num_subcenters; ++c) {
    sims[c] = dot(x, centers.subspan(static_cast<std::size_t>(c) * l, l));
    max_sim = std::max(max_sim, sims[c]);
  }
  double z = 0.0, acc = 0.0;
  for (int c = 0; c < num_subcenters; ++c) {
    double w = std::exp((sims[c] - max_sim) / temperature);
    z += w;
    acc += w * sims[c];
  }
  return acc / z;
}

namespace detail {

inline void check_batch(const Batch& batch, const SubCenterBank& bank, const LossConfig& cfg) {
  cfg.validate();
  if (batch.dim != static_cast<std::size_t>(bank.dim)) throw std::invalid_argument("embedding dim mismatch");
  if (batch.labels.size() != batch.count) throw std::invalid_argument("label count mismatch");
  for (int y : batch.labels)
    if (y < 0 || y >= bank.num_classes) throw std::invalid_argument("label out of range");
  if (!all_finite(batch.features)) throw std::invalid_argument("non-finite features");
}

inline double clamp_cos(double u) {
  return std::clamp(u, -1.0 + kCosineClamp, 1.0 - kCosineClamp);
}

// grad of raw vector given grad wrt its normalized image: (g - (g.v̂)v̂)/||v||.
inline void backprop_normalize(std::span<const double> unit, double raw_norm,
                               std::span<const double> grad_unit, std::span<double> grad_raw_out) {
  double g_dot = dot(grad_unit, unit);
  for (std::size_t k = 0; k < unit.size(); ++k)
    grad_raw_out[k] += (grad_unit[k] - g_dot * unit[k]) / raw_norm;
}

}  // namespace detail

// Standard AAM-Softmax (single center per class). Mean negative
// log-probability over the batch with margin m added to the target angle
// and logits scaled by s.
inline LossOutput aam_softmax_loss(const Batch& batch, const SubCenterBank& bank,
                                   const LossConfig& cfg) {
  detail::check_batch(batch, bank, cfg);
  if (bank.num_subcenters != 1) throw std::invalid_argument("aam_softmax_loss requires C=1");

  const int n = bank.num_classes;
  const std::size_t l = batch.dim;
  const double inv_b = 1.0 / static_cast<double>(batch.count);

  LossOutput out;
  out.grad_embeddings.assign(batch.count * l, 0.0);
  out.grad_weights.assign(bank.weights.size(), 0.0);
  out.target_angles.resize(batch.count);

  // Unit rows plus raw norms, shared across the batch.
  std::vector<double> unit_w(bank.weights.size());
  std::vector<double> w_norms(n);
  std::vector<double> grad_unit_w(bank.weights.size(), 0.0);
  for (int j = 0; j < n; ++j) {
    auto src = bank.row(j, 0);
    w_norms[j] = norm(src);
    if (!(w_norms[j] > 0.0)) throw std::invalid_argument("degenerate vector");
    for (std::size_t k = 0; k < l; ++k) unit_w[j * l + k] = src[k] / w_norms[j];
  }

  std::vector<double> theta(n), logits(n), probs(n);
  for (std::size_t i = 0; i < batch.count; ++i) {
    const int y = batch.labels[i];
    Vec xn = normalize(batch.example(i));
    double x_norm = norm(batch.example(i));

    for (int j = 0; j < n; ++j) {
      double u = detail::clamp_cos(dot(xn, std::span<const double>(unit_w).subspan(j * l, l)));
      theta[j] = std::acos(u);
      logits[j] = cfg.scale * std::cos(theta[j] + (j == y ? cfg.margin : 0.0));
    }
    out.target_angles[i] = theta[y];

    double zmax = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (int j = 0; j < n; ++j) lse += std::exp(logits[j] - zmax);
    lse = zmax + std::log(lse);
    out.loss += (lse - logits[y]) * inv_b;
    for (int j = 0; j < n; ++j) probs[j] = std::exp(logits[j] - lse);

    Vec grad_xn(l, 0.0);
    for (int j = 0; j < n; ++j) {
      double dz = (probs[j] - (j == y ? 1.0 : 0.0)) * inv_b;
      double ang = theta[j] + (j == y ? cfg.margin : 0.0);
      double u = std::cos(theta[j]);
      // dz/dtheta = -s sin(ang); dtheta/dcos = -1/sqrt(1-u^2)
      double dsim = dz * cfg.scale * std::sin(ang) / std::sqrt(1.0 - u * u);
      auto wj = std::span<const double>(unit_w).subspan(j * l, l);
      for (std::size_t k = 0; k < l; ++k) {
        grad_xn[k] += dsim * wj[k];
        grad_unit_w[j * l + k] += dsim * xn[k];
      }
    }
    detail::backprop_normalize(xn, x_norm,
                               grad_xn, std::span<double>(out.grad_embeddings).subspan(i * l, l));
  }

  for (int j = 0; j < n; ++j) {
    auto unit = std::span<const double>(unit_w).subspan(j * l, l);
    auto g = std::span<const double>(grad_unit_w).subspan(j * l, l);
    detail::backprop_normalize(unit, w_norms[j], g,
                               std::span<double>(out.grad_weights).subspan(j * l, l));
  }
  if (!std::isfinite(out.loss)) throw std::runtime_error("non-finite loss");
  return out;
}

// Sub-center AAM-Softmax: every class angle is arccos of the aggregated
// cosine over that class's sub-centers; margin only on the target class.
// Exactly reduces to aam_softmax_loss at C=1.
inline LossOutput subcenter_loss(const Batch& batch, const SubCenterBank& bank,
                                 const LossConfig& cfg) {
  detail::check_batch(batch, bank, cfg);
  if (cfg.subcenters != bank.num_subcenters)
    throw std::invalid_argument("config subcenters disagrees with bank");

  const int n = bank.num_classes;
  const int c = bank.num_subcenters;
  const std::size_t l = batch.dim;
  const double inv_b = 1.0 / static_cast<double>(batch.count);
  const double inv_t = 1.0 / cfg.temperature;

  LossOutput out;
  out.grad_embeddings.assign(batch.count * l, 0.0);
  out.grad_weights.assign(bank.weights.size(), 0.0);
  out.target_angles.resize(batch.count);

  const std::size_t rows = static_cast<std::size_t>(n) * c;
  std::vector<double> unit_w(rows * l);
  std::vector<double> w_norms(rows);
  std::vector<double> grad_unit_w(rows * l, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    auto src = std::span<const double>(bank.weights).subspan(r * l, l);
    w_norms[r] = norm(src);
    if (!(w_norms[r] > 0.0)) throw std::invalid_argument("degenerate vector");
    for (std::size_t k = 0; k < l; ++k) unit_w[r * l + k] = src[k] / w_norms[r];
  }

  std::vector<double> sims(rows), soft(rows);
  std::vector<double> agg(n), angle(n), logits(n), probs(n);
  for (std::size_t i = 0; i < batch.count; ++i) {
    const int y = batch.labels[i];
    Vec xn = normalize(batch.example(i));
    double x_norm = norm(batch.example(i));

    for (int j = 0; j < n; ++j) {
      double smax = -2.0;
      for (int q = 0; q < c; ++q) {
        std::size_t r = static_cast<std::size_t>(j) * c + q;
        sims[r] = dot(xn, std::span<const double>(unit_w).subspan(r * l, l));
        smax = std::max(smax, sims[r]);
      }
      double z = 0.0, acc = 0.0;
      for (int q = 0; q < c; ++q) {
        std::size_t r = static_cast<std::size_t>(j) * c + q;
        soft[r] = std::exp((sims[r] - smax) * inv_t);
        z += soft[r];
        acc += soft[r] * sims[r];
      }
      for (int q = 0; q < c; ++q) soft[static_cast<std::size_t>(j) * c + q] /= z;
      agg[j] = acc / z;
      double u = detail::clamp_cos(agg[j]);
      angle[j] = std::acos(u);
      logits[j] = cfg.scale * std::cos(angle[j] + (j == y ? cfg.margin : 0.0));
    }
    out.target_angles[i] = angle[y];

    double zmax = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (int j = 0; j < n; ++j) lse += std::exp(logits[j] - zmax);
    lse = zmax + std::log(lse);
    out.loss += (lse - logits[y]) * inv_b;
    for (int j = 0; j < n; ++j) probs[j] = std::exp(logits[j] - lse);

    Vec grad_xn(l, 0.0);
    for (int j = 0; j < n; ++j) {
      double dz = (probs[j] - (j == y ? 1.0 : 0.0)) * inv_b;
      double ang = angle[j] + (j == y ? cfg.margin : 0.0);
      double u = detail::clamp_cos(agg[j]);
      double dagg = dz * cfg.scale * std::sin(ang) / std::sqrt(1.0 - u * u);
      for (int q = 0; q < c; ++q) {
        std::size_t r = static_cast<std::size_t>(j) * c + q;
        // d agg / d sim_q = a_q (1 + (sim_q - agg)/T)
        double dsim = dagg * soft[r] * (1.0 + (sims[r] - agg[j]) * inv_t);
        auto wr = std::span<const double>(unit_w).subspan(r * l, l);
        for (std::size_t k = 0; k < l; ++k) {
          grad_xn[k] += dsim * wr[k];
          grad_unit_w[r * l + k] += dsim * xn[k];
        }
      }
    }
    detail::backprop_normalize(xn, x_norm,
                               grad_xn, std::span<double>(out.grad_embeddings).subspan(i * l, l));
  }

  for (std::size_t r = 0; r < rows; ++r) {
    auto unit = std::span<const double>(unit_w).subspan(r * l, l);
    auto g = std::span<const double>(grad_unit_w).subspan(r * l, l);
    detail::backprop_normalize(unit, w_norms[r], g,
                               std::span<double>(out.grad_weights).subspan(r * l, l));
  }
  if (!std::isfinite(out.loss)) throw std::runtime_error("non-finite loss");
  return out;
}

// Central-difference check of the hand-derived gradients. Returns the max
// relative error over every embedding and weight coordinate.
inline double loss_backward_check(const Batch& batch, const SubCenterBank& bank,
                                  const LossConfig& cfg, double h) {
  if (!(h >= 1e-6 && h <= 1e-4)) throw std::invalid_argument("step h out of [1e-6, 1e-4]");
  LossOutput analytic = subcenter_loss(batch, bank, cfg);

  double max_err = 0.0;
  auto rel = [](double a, double b) {
    return std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-12);
  };

  Batch b = batch;
  for (std::size_t k = 0; k < b.features.size(); ++k) {
    double saved = b.features[k];
    b.features[k] = saved + h;
    double up = subcenter_loss(b, bank, cfg).loss;
    b.features[k] = saved - h;
    double dn = subcenter_loss(b, bank, cfg).loss;
    b.features[k] = saved;
    max_err = std::max(max_err, rel(analytic.grad_embeddings[k], (up - dn) / (2.0 * h)));
  }

  SubCenterBank bk = bank;
  for (std::size_t k = 0; k < bk.weights.size(); ++k) {
    double saved = bk.weights[k];
    bk.weights[k] = saved + h;
    double up = subcenter_loss(batch, bk, cfg).loss;
    bk.weights[k] = saved - h;
    double dn = subcenter_loss(batch, bk, cfg).loss;
    bk.weights[k] = saved;
    max_err = std::max(max_err, rel(analytic.grad_weights[k], (up - dn) / (2.0 * h)));
  }
  return max_err;
}

}  // namespace subcenter
