#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "subcenter/loss.hpp"
#include "subcenter/rng.hpp"

using namespace subcenter;
using Catch::Approx;

namespace {

Batch random_batch(Rng& rng, std::size_t count, std::size_t dim, int num_classes) {
  Batch b;
  b.count = count;
  b.dim = dim;
  b.features = rng.gaussian_vector(count * dim);
  for (std::size_t i = 0; i < count; ++i)
    b.labels.push_back(static_cast<int>(rng.next_below(num_classes)));
  return b;
}

// Instances for finite-difference checks: moderate scales and clustered
// sub-centers keep every gradient coordinate above the central-difference
// roundoff floor, so the relative-error bound is meaningful.
SubCenterBank gradcheck_bank(Rng& rng, int n, int c, int l) {
  SubCenterBank bank(n, c, l);
  for (int j = 0; j < n; ++j) {
    Vec parent = normalize(rng.gaussian_vector(l));
    for (int q = 0; q < c; ++q) {
      auto row = bank.row(j, q);
      for (int d = 0; d < l; ++d) row[d] = parent[d] + 0.15 * rng.next_gaussian();
      normalize_in_place(row);
    }
  }
  return bank;
}

LossConfig gradcheck_cfg(Rng& rng, int c, double temperature) {
  LossConfig cfg;
  cfg.subcenters = c;
  cfg.temperature = temperature;
  cfg.margin = 0.5 * rng.next_double();
  cfg.scale = 1.0 + 2.0 * rng.next_double();
  return cfg;
}

// Plain scaled softmax cross-entropy over given logits, the margin-free
// reference route.
double softmax_ce(const std::vector<double>& logits, int target) {
  double zmax = *std::max_element(logits.begin(), logits.end());
  double lse = 0.0;
  for (double z : logits) lse += std::exp(z - zmax);
  return zmax + std::log(lse) - logits[target];
}

}  // namespace

TEST_CASE("normalize") {
  Vec v = normalize(Vec{3.0, 4.0});
  CHECK(v[0] == Approx(0.6).margin(1e-12));
  CHECK(v[1] == Approx(0.8).margin(1e-12));

  Vec e = normalize(Vec{1.0, 0.0, 0.0});
  CHECK(e == Vec{1.0, 0.0, 0.0});

  CHECK(std::abs(norm(normalize(Vec{0.3, -2.0, 7.1})) - 1.0) < 1e-9);

  CHECK_THROWS_WITH(normalize(Vec{0.0, 0.0}), "degenerate vector");
}

TEST_CASE("aggregate_similarity scalar cases") {
  Vec x{1.0, 0.0};

  SECTION("single sub-center passes the cosine through") {
    Vec w{0.5, std::sqrt(0.75)};
    CHECK(aggregate_similarity(x, w, 1, 1.0) == Approx(0.5).margin(1e-15));
  }

  SECTION("identical sub-centers collapse to the shared similarity") {
    Vec one{0.3, std::sqrt(0.91)};
    Vec w;
    for (int i = 0; i < 3; ++i) w.insert(w.end(), one.begin(), one.end());
    CHECK(aggregate_similarity(x, w, 3, 1.0) == Approx(0.3).margin(1e-12));
  }

  SECTION("two sub-centers, sims {0.8, 0}, T=1") {
    Vec w{0.8, 0.6, 0.0, 1.0};
    // (e^0.8 * 0.8) / (e^0.8 + 1), frozen from a high-precision oracle
    CHECK(aggregate_similarity(x, w, 2, 1.0) == Approx(0.55197958490208995).margin(1e-12));
  }

  SECTION("invalid temperature") {
    Vec w{1.0, 0.0};
    CHECK_THROWS_WITH(aggregate_similarity(x, w, 1, 0.0), "invalid temperature");
    CHECK_THROWS_WITH(aggregate_similarity(x, w, 1, -1.0), "invalid temperature");
  }
}

TEST_CASE("aggregate_similarity stays within per-sub-center bounds") {
  Rng rng(41);
  for (int iter = 0; iter < 200; ++iter) {
    int c = 1 + static_cast<int>(rng.next_below(6));
    int l = 2 + static_cast<int>(rng.next_below(6));
    Vec x = normalize(rng.gaussian_vector(l));
    Vec centers;
    double lo = 2.0, hi = -2.0;
    for (int q = 0; q < c; ++q) {
      Vec w = normalize(rng.gaussian_vector(l));
      double s = dot(x, w);
      lo = std::min(lo, s);
      hi = std::max(hi, s);
      centers.insert(centers.end(), w.begin(), w.end());
    }
    double t = std::pow(10.0, -2.0 + 3.0 * rng.next_double());
    double agg = aggregate_similarity(x, centers, c, t);
    CHECK(agg >= lo - 1e-12);
    CHECK(agg <= hi + 1e-12);
  }
}

TEST_CASE("aggregate_similarity sharpens monotonically toward the max") {
  Rng rng(42);
  const double grid[] = {10.0, 1.0, 0.1, 0.01};
  for (int iter = 0; iter < 100; ++iter) {
    int c = 2 + static_cast<int>(rng.next_below(5));
    int l = 3 + static_cast<int>(rng.next_below(5));
    Vec x = normalize(rng.gaussian_vector(l));
    Vec centers;
    double max_sim = -2.0;
    for (int q = 0; q < c; ++q) {
      Vec w = normalize(rng.gaussian_vector(l));
      max_sim = std::max(max_sim, dot(x, w));
      centers.insert(centers.end(), w.begin(), w.end());
    }
    double prev = -2.0;
    for (double t : grid) {
      double agg = aggregate_similarity(x, centers, c, t);
      CHECK(agg >= prev - 1e-12);
      CHECK(agg <= max_sim + 1e-12);
      prev = agg;
    }
  }
}

TEST_CASE("sharpening limit at tiny temperature") {
  Rng rng(43);
  for (int iter = 0; iter < 200; ++iter) {
    int c = 2 + static_cast<int>(rng.next_below(8));
    int l = 2 + static_cast<int>(rng.next_below(8));
    Vec x = normalize(rng.gaussian_vector(l));
    Vec centers;
    double max_sim = -2.0;
    for (int q = 0; q < c; ++q) {
      Vec w = normalize(rng.gaussian_vector(l));
      max_sim = std::max(max_sim, dot(x, w));
      centers.insert(centers.end(), w.begin(), w.end());
    }
    CHECK(std::abs(aggregate_similarity(x, centers, c, 1e-6) - max_sim) < 1e-6);
  }
}

TEST_CASE("aam_softmax_loss closed-form case") {
  // x on the target center, non-target orthogonal, m=0, s=1:
  // loss = -log(e / (e + 1))
  SubCenterBank bank(2, 1, 2);
  bank.weights = {1.0, 0.0, 0.0, 1.0};
  Batch batch;
  batch.count = 1;
  batch.dim = 2;
  batch.features = {1.0, 0.0};
  batch.labels = {0};
  LossConfig cfg;
  cfg.margin = 0.0;
  cfg.scale = 1.0;
  cfg.subcenters = 1;
  LossOutput out = aam_softmax_loss(batch, bank, cfg);
  CHECK(out.loss == Approx(0.31326168751822286).margin(1e-6));
  CHECK(out.target_angles[0] == Approx(0.0).margin(1e-3));
}

TEST_CASE("aam_softmax_loss with m=0 is scaled softmax cross-entropy") {
  Rng rng(44);
  for (int iter = 0; iter < 20; ++iter) {
    int n = 2 + static_cast<int>(rng.next_below(5));
    int l = 3;
    SubCenterBank bank = SubCenterBank::random(n, 1, l, rng);
    Batch batch = random_batch(rng, 4, l, n);
    LossConfig cfg;
    cfg.margin = 0.0;
    cfg.scale = 7.5;
    cfg.subcenters = 1;
    LossOutput out = aam_softmax_loss(batch, bank, cfg);

    double expected = 0.0;
    for (std::size_t i = 0; i < batch.count; ++i) {
      Vec xn = normalize(batch.example(i));
      std::vector<double> logits(n);
      for (int j = 0; j < n; ++j) logits[j] = cfg.scale * dot(xn, bank.row(j, 0));
      expected += softmax_ce(logits, batch.labels[i]) / static_cast<double>(batch.count);
    }
    CHECK(out.loss == Approx(expected).margin(1e-9));
  }
}

TEST_CASE("default margin and scale are accepted") {
  Rng rng(45);
  SubCenterBank bank = SubCenterBank::random(3, 1, 4, rng);
  Batch batch = random_batch(rng, 3, 4, 3);
  LossConfig cfg;  // m=0.4, s=30 defaults
  cfg.subcenters = 1;
  CHECK_NOTHROW(aam_softmax_loss(batch, bank, cfg));
}

TEST_CASE("loss input validation") {
  Rng rng(46);
  SubCenterBank bank = SubCenterBank::random(3, 2, 4, rng);
  Batch batch = random_batch(rng, 2, 4, 3);
  LossConfig cfg;
  cfg.subcenters = 2;

  SECTION("label out of range") {
    batch.labels[0] = 3;
    CHECK_THROWS_AS(subcenter_loss(batch, bank, cfg), std::invalid_argument);
    batch.labels[0] = -1;
    CHECK_THROWS_AS(subcenter_loss(batch, bank, cfg), std::invalid_argument);
  }
  SECTION("config/bank sub-center mismatch") {
    cfg.subcenters = 3;
    CHECK_THROWS_AS(subcenter_loss(batch, bank, cfg), std::invalid_argument);
  }
  SECTION("dimension mismatch") {
    batch.dim = 3;
    batch.features.resize(batch.count * 3);
    CHECK_THROWS_AS(subcenter_loss(batch, bank, cfg), std::invalid_argument);
  }
  SECTION("invalid temperature") {
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(subcenter_loss(batch, bank, cfg), std::invalid_argument);
  }
}

TEST_CASE("subcenter_loss frozen oracle value") {
  // 2 classes, C=2, L=2, m=0.4, s=30, T=1, x = normalize([0.3, 1]).
  SubCenterBank bank(2, 2, 2);
  const double r = 1.0 / std::sqrt(2.0);
  bank.weights = {r, r, r, -r, 0.0, 1.0, -r, r};
  Batch batch;
  batch.count = 1;
  batch.dim = 2;
  batch.features = normalize(Vec{0.3, 1.0});
  batch.labels = {0};
  LossConfig cfg;
  cfg.subcenters = 2;
  LossOutput out = subcenter_loss(batch, bank, cfg);
  CHECK(out.loss == Approx(15.872047544629492).epsilon(1e-10));
}

TEST_CASE("C=1 sub-center loss reduces to the baseline") {
  Rng rng(47);
  for (int iter = 0; iter < 50; ++iter) {
    int n = 2 + static_cast<int>(rng.next_below(6));
    int l = 2 + static_cast<int>(rng.next_below(6));
    SubCenterBank bank = SubCenterBank::random(n, 1, l, rng);
    Batch batch = random_batch(rng, 3, l, n);
    LossConfig cfg;
    cfg.subcenters = 1;
    cfg.temperature = 0.5 + rng.next_double();

    LossOutput a = aam_softmax_loss(batch, bank, cfg);
    LossOutput b = subcenter_loss(batch, bank, cfg);
    CHECK(std::abs(a.loss - b.loss) < 1e-9);
    for (std::size_t k = 0; k < a.grad_embeddings.size(); ++k)
      CHECK(std::abs(a.grad_embeddings[k] - b.grad_embeddings[k]) < 1e-9);
    for (std::size_t k = 0; k < a.grad_weights.size(); ++k)
      CHECK(std::abs(a.grad_weights[k] - b.grad_weights[k]) < 1e-9);
  }
}

TEST_CASE("margin-free s=1 sub-center loss equals CE over aggregated logits") {
  Rng rng(48);
  for (int iter = 0; iter < 20; ++iter) {
    int n = 2 + static_cast<int>(rng.next_below(4));
    int c = 1 + static_cast<int>(rng.next_below(4));
    int l = 3;
    SubCenterBank bank = SubCenterBank::random(n, c, l, rng);
    Batch batch = random_batch(rng, 3, l, n);
    LossConfig cfg;
    cfg.margin = 0.0;
    cfg.scale = 1.0;
    cfg.subcenters = c;

    double expected = 0.0;
    for (std::size_t i = 0; i < batch.count; ++i) {
      Vec xn = normalize(batch.example(i));
      std::vector<double> logits(n);
      for (int j = 0; j < n; ++j) {
        std::span<const double> rows(bank.weights.data() + static_cast<std::size_t>(j) * c * l,
                                     static_cast<std::size_t>(c) * l);
        logits[j] = aggregate_similarity(xn, rows, c, cfg.temperature);
      }
      expected += softmax_ce(logits, batch.labels[i]) / static_cast<double>(batch.count);
    }
    CHECK(subcenter_loss(batch, bank, cfg).loss == Approx(expected).margin(1e-9));
  }
}

TEST_CASE("loss is positive and falls as the target similarity rises") {
  // 3-D construction keeps the non-target similarity pinned at zero while
  // the target angle shrinks.
  SubCenterBank bank(2, 1, 3);
  bank.weights = {1.0, 0.0, 0.0, 0.0, 0.0, 1.0};
  LossConfig cfg;
  cfg.subcenters = 1;
  double prev = std::numeric_limits<double>::infinity();
  for (double angle : {1.4, 1.0, 0.6, 0.2, 0.0}) {
    Batch batch;
    batch.count = 1;
    batch.dim = 3;
    batch.features = {std::cos(angle), std::sin(angle), 0.0};
    batch.labels = {0};
    double loss = subcenter_loss(batch, bank, cfg).loss;
    CHECK(loss > 0.0);
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("permuting sub-centers permutes weight gradients and nothing else") {
  Rng rng(49);
  int n = 3, c = 4, l = 5;
  SubCenterBank bank = SubCenterBank::random(n, c, l, rng);
  Batch batch = random_batch(rng, 4, l, n);
  LossConfig cfg;
  cfg.subcenters = c;
  LossOutput base = subcenter_loss(batch, bank, cfg);

  // rotate class 1's sub-centers by one
  SubCenterBank permuted = bank;
  std::vector<int> perm{1, 2, 3, 0};
  for (int q = 0; q < c; ++q) {
    auto dst = permuted.row(1, q);
    auto src = bank.row(1, perm[q]);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  LossOutput out = subcenter_loss(batch, permuted, cfg);

  CHECK(out.loss == Approx(base.loss).margin(1e-12));
  for (std::size_t k = 0; k < base.grad_embeddings.size(); ++k)
    CHECK(std::abs(out.grad_embeddings[k] - base.grad_embeddings[k]) < 1e-12);
  for (int cls = 0; cls < n; ++cls)
    for (int q = 0; q < c; ++q) {
      int src_q = cls == 1 ? perm[q] : q;
      std::size_t dst_off = (static_cast<std::size_t>(cls) * c + q) * l;
      std::size_t src_off = (static_cast<std::size_t>(cls) * c + src_q) * l;
      for (int d = 0; d < l; ++d)
        CHECK(std::abs(out.grad_weights[dst_off + d] - base.grad_weights[src_off + d]) < 1e-12);
    }
}

TEST_CASE("gradient check against central differences") {
  SECTION("C=1") {
    Rng rng(50);
    for (int iter = 0; iter < 20; ++iter) {
      int n = 2 + static_cast<int>(rng.next_below(4));
      SubCenterBank bank = gradcheck_bank(rng, n, 1, 4);
      Batch batch = random_batch(rng, 3, 4, n);
      LossConfig cfg = gradcheck_cfg(rng, 1, 1.0);
      CHECK(loss_backward_check(batch, bank, cfg, 1e-4) < 1e-4);
    }
  }
  SECTION("C=10, T=1") {
    Rng rng(51);
    for (int iter = 0; iter < 10; ++iter) {
      int n = 2 + static_cast<int>(rng.next_below(4));
      SubCenterBank bank = gradcheck_bank(rng, n, 10, 4);
      Batch batch = random_batch(rng, 3, 4, n);
      LossConfig cfg = gradcheck_cfg(rng, 10, 1.0);
      CHECK(loss_backward_check(batch, bank, cfg, 1e-4) < 1e-4);
    }
  }
  SECTION("C=10, T=0.1 with the looser bound") {
    Rng rng(52);
    for (int iter = 0; iter < 10; ++iter) {
      int n = 2 + static_cast<int>(rng.next_below(4));
      SubCenterBank bank = gradcheck_bank(rng, n, 10, 4);
      Batch batch = random_batch(rng, 3, 4, n);
      LossConfig cfg = gradcheck_cfg(rng, 10, 0.1);
      CHECK(loss_backward_check(batch, bank, cfg, 1e-4) < 1e-3);
    }
  }
  SECTION("step size is validated") {
    Rng rng(53);
    SubCenterBank bank = SubCenterBank::random(2, 1, 3, rng);
    Batch batch = random_batch(rng, 2, 3, 2);
    LossConfig cfg;
    cfg.subcenters = 1;
    CHECK_THROWS_AS(loss_backward_check(batch, bank, cfg, 1e-3), std::invalid_argument);
  }
}
