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

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace subcenter {

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

// v / ||v||. Throws on the zero vector.
inline Vec normalize(std::span<const double> v) {
  double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("degenerate vector");
  Vec out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

inline void normalize_in_place(std::span<double> v) {
  double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("degenerate vector");
  for (auto& x : v) x /= n;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) throw std::invalid_argument("degenerate vector");
  return dot(a, b) / (na * nb);
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace subcenter
