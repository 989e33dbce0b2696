#include <doctest.h>

#include <cmath>
#include <vector>

#include "lcal/error.hpp"
#include "lcal/kernels.hpp"
#include "lcal/rng.hpp"

using namespace lcal;

TEST_CASE("kernel value") {
  KernelConfig cfg{2.0, true};
  std::vector<double> a{1.0, 2.0}, b{1.0, 2.0};
  CHECK(kernel_value(cfg, a, b) == 1.0);

  // ||a-b|| = gamma * sqrt(2) forces exp(-1).
  std::vector<double> c{1.0 + 2.0 * std::sqrt(2.0), 2.0};
  CHECK(kernel_value(cfg, a, c) == doctest::Approx(std::exp(-1.0)).epsilon(1e-12));

  Rng rng(3);
  KernelConfig wide{10.0, true};
  for (int t = 0; t < 50; ++t) {
    std::vector<double> u(4), v(4);
    for (int i = 0; i < 4; ++i) {
      u[i] = rng.uniform(-5.0, 5.0);
      v[i] = rng.uniform(-5.0, 5.0);
    }
    long double d2 = 0.0L;
    for (int i = 0; i < 4; ++i) d2 += (static_cast<long double>(u[i]) - v[i]) *
                                      (static_cast<long double>(u[i]) - v[i]);
    long double want = std::exp(-d2 / (2.0L * 100.0L));
    CHECK(std::abs(kernel_value(wide, u, v) - static_cast<double>(want)) <= 1e-15);
  }

  std::vector<double> short_vec{1.0};
  CHECK_THROWS_AS((void)kernel_value(cfg, a, short_vec), Error);
}

TEST_CASE("nw estimate convex combinations") {
  KernelConfig cfg{1.0, false};
  Matrix pts(3, 2, 0.0);  // coincident neighbors -> uniform weights
  Matrix targets(3, 2, 0.0);
  targets(0, 0) = 1.0;
  targets(1, 1) = 1.0;
  targets(2, 1) = 1.0;
  std::vector<double> anchor{0.0, 0.0};
  auto est = nw_estimate(cfg, anchor, pts, targets);
  CHECK(est[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(est[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));

  Matrix one(1, 2, 0.0);
  one(0, 0) = 3.0;
  Matrix t1(1, 2, 0.0);
  t1(0, 1) = 1.0;
  auto single = nw_estimate(cfg, anchor, one, t1);
  CHECK(single[0] == 0.0);
  CHECK(single[1] == 1.0);
}

TEST_CASE("nw estimate matches a hand-rolled weighted mean") {
  // Dyadic coordinates so the long-double recomputation is clean.
  KernelConfig cfg{1.0, false};
  Matrix pts(5, 1);
  double coords[5] = {0.0, 0.5, 1.0, 1.5, 2.0};
  for (int i = 0; i < 5; ++i) pts(i, 0) = coords[i];
  Matrix targets(5, 2, 0.0);
  int labs[5] = {0, 1, 0, 1, 1};
  for (int i = 0; i < 5; ++i) targets(i, labs[i]) = 1.0;
  std::vector<double> anchor{0.25};

  long double num0 = 0.0L, num1 = 0.0L, den = 0.0L;
  for (int i = 0; i < 5; ++i) {
    long double d = static_cast<long double>(coords[i]) - 0.25L;
    long double k = std::exp(-d * d / 2.0L);
    den += k;
    if (labs[i] == 0) num0 += k;
    else num1 += k;
  }
  auto est = nw_estimate(cfg, anchor, pts, targets);
  CHECK(est[0] == doctest::Approx(static_cast<double>(num0 / den)).epsilon(1e-13));
  CHECK(est[1] == doctest::Approx(static_cast<double>(num1 / den)).epsilon(1e-13));
  CHECK(est[0] + est[1] == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("self exclusion and empty neighborhoods") {
  KernelConfig cfg{1.0, true};
  Matrix pts(1, 2, 0.0);
  Matrix targets(1, 2, 0.0);
  targets(0, 0) = 1.0;
  std::vector<double> anchor{0.0, 0.0};
  CHECK_THROWS_AS((void)nw_estimate(cfg, anchor, pts, targets, 0), Error);

  // kernel_weights drops the anchor row.
  Matrix pts3(3, 1);
  pts3(0, 0) = 0.0;
  pts3(1, 0) = 1.0;
  pts3(2, 0) = 2.0;
  KernelWeights kw = kernel_weights(cfg, pts3, 1);
  CHECK(kw.neighbors.size() == 2);
  for (std::size_t j : kw.neighbors) CHECK(j != 1);
  double sum = 0.0;
  for (double w : kw.weights) sum += w;
  CHECK(std::abs(sum - 1.0) <= 1e-12);
}

TEST_CASE("effective sample size") {
  KernelWeights kw;
  kw.weights = {0.25, 0.25, 0.25, 0.25};
  CHECK(effective_sample_size(kw) == doctest::Approx(4.0).epsilon(1e-12));
  kw.weights = {1.0, 0.0, 0.0};
  CHECK(effective_sample_size(kw) == doctest::Approx(1.0).epsilon(1e-12));
  kw.weights = {0.5, 0.25, 0.25};
  CHECK(effective_sample_size(kw) == doctest::Approx(1.0 / 0.375).epsilon(1e-12));
}

TEST_CASE("weights are permutation equivariant") {
  Rng rng(17);
  Matrix pts(6, 3);
  for (auto& v : pts.data) v = rng.uniform(-2.0, 2.0);
  KernelConfig cfg{1.5, true};
  KernelWeights base = kernel_weights(cfg, pts, 2);

  // Swap two neighbor rows and recheck: weights follow the rows.
  Matrix swapped = pts;
  for (std::size_t j = 0; j < 3; ++j) std::swap(swapped(0, j), swapped(4, j));
  KernelWeights after = kernel_weights(cfg, swapped, 2);
  auto weight_of = [](const KernelWeights& kw, std::size_t idx) {
    for (std::size_t t = 0; t < kw.neighbors.size(); ++t)
      if (kw.neighbors[t] == idx) return kw.weights[t];
    return -1.0;
  };
  CHECK(weight_of(base, 0) == doctest::Approx(weight_of(after, 4)).epsilon(1e-14));
  CHECK(weight_of(base, 4) == doctest::Approx(weight_of(after, 0)).epsilon(1e-14));
  CHECK(weight_of(base, 3) == doctest::Approx(weight_of(after, 3)).epsilon(1e-14));
}

TEST_CASE("constant targets and shrinking bandwidth") {
  Rng rng(19);
  Matrix pts(8, 2);
  for (auto& v : pts.data) v = rng.uniform(-1.0, 1.0);
  Matrix constant(8, 3, 0.0);
  for (std::size_t i = 0; i < 8; ++i) {
    constant(i, 0) = 0.2;
    constant(i, 1) = 0.5;
    constant(i, 2) = 0.3;
  }
  KernelConfig cfg{0.7, true};
  Matrix est = nw_estimate_all(cfg, pts, constant);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(est(i, 0) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(est(i, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }

  // gamma -> 0 converges to the nearest neighbor's target.
  Matrix line(4, 1);
  line(0, 0) = 0.0;
  line(1, 0) = 1.0;
  line(2, 0) = 2.5;
  line(3, 0) = 4.0;
  Matrix tgt(4, 2, 0.0);
  tgt(0, 0) = 1.0;
  tgt(1, 1) = 1.0;
  tgt(2, 0) = 1.0;
  tgt(3, 1) = 1.0;
  KernelConfig tiny{0.05, true};
  Matrix nn = nw_estimate_all(tiny, line, tgt);
  CHECK(nn(0, 0) == doctest::Approx(0.0).epsilon(1e-8));  // nearest neighbor of row0 is row1
  CHECK(nn(0, 1) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(nn(3, 0) == doctest::Approx(1.0).epsilon(1e-8));  // nearest neighbor of row3 is row2
}

TEST_CASE("cross-set estimates ignore self exclusion") {
  Rng rng(29);
  Matrix ref(20, 2), anchors(5, 2);
  for (auto& v : ref.data) v = rng.normal();
  for (auto& v : anchors.data) v = rng.normal();
  Matrix tgt(20, 2, 0.0);
  for (std::size_t i = 0; i < 20; ++i) tgt(i, i % 2) = 1.0;
  KernelConfig cfg{1.0, true};
  Matrix est = nw_estimate_cross(cfg, anchors, ref, tgt);
  for (std::size_t i = 0; i < 5; ++i)
    CHECK(est(i, 0) + est(i, 1) == doctest::Approx(1.0).epsilon(1e-12));
}
