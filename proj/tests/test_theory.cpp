#include <doctest.h>

#include <cmath>
#include <vector>

#include "lcal/error.hpp"
#include "lcal/kernels.hpp"
#include "lcal/metrics.hpp"
#include "lcal/rng.hpp"
#include "lcal/synth.hpp"
#include "lcal/theory.hpp"

using namespace lcal;

TEST_CASE("toy example exact values") {
  // Equal sizes: the focus group recalibrates to exactly 0.6 with +-0.05
  // residuals on its two regions.
  ToyReport rep = toy_example({400, 400, 400, 400, 400, 400});
  CHECK(rep.p_cal_focus == 0.6);
  CHECK(rep.regions[1].residual == 0.05);
  CHECK(rep.regions[2].residual == -0.05);
  CHECK(rep.regions[0].p_cal == 0.95);   // singleton group collapses to its own frequency
  CHECK(rep.regions[0].residual == 0.0);
  CHECK(rep.regions[5].residual == 0.0);
  CHECK(rep.regions[3].residual == 0.05);
  CHECK(rep.regions[4].residual == -0.05);

  // b = 3c: p_cal = (3*0.55 + 0.65)/4 = 0.575, exactly.
  ToyReport skew = toy_example({100, 300, 100, 100, 100, 100});
  CHECK(skew.p_cal_focus == 0.575);

  // c -> 0 collapses to region b's frequency.
  ToyReport solo = toy_example({100, 100, 0, 100, 100, 100});
  CHECK(solo.p_cal_focus == 0.55);

  // Exactness holds across magnitudes (rational arithmetic path).
  ToyReport big = toy_example({1000000, 999999, 999999, 1, 1, 1000000});
  CHECK(big.p_cal_focus == 0.6);  // equal b and c again

  std::string js = rep.to_json();
  CHECK(js.find("\"p_cal\":0.6") != std::string::npos);
  CHECK_THROWS_AS((void)toy_example({1, 2, 3}), Error);
}

TEST_CASE("proximity scores against a naive oracle") {
  Matrix two(2, 2, 0.0);
  two(1, 0) = 1.0;
  auto s = proximity_scores(two, 1);
  CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(1.0).epsilon(1e-12));

  // Regular 5x5 grid with spacing h: interior points have pi_4 = h.
  double h = 0.75;
  Matrix grid(25, 2);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c) {
      grid(r * 5 + c, 0) = h * c;
      grid(r * 5 + c, 1) = h * r;
    }
  auto g = proximity_scores(grid, 4);
  CHECK(g[12] == doctest::Approx(h).epsilon(1e-12));  // center point

  Rng rng(3);
  Matrix cloud(50, 3);
  for (auto& v : cloud.data) v = rng.normal();
  auto mine = proximity_scores(cloud, 5);
  for (std::size_t i = 0; i < 50; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < 50; ++j) {
      if (j == i) continue;
      d.push_back(std::sqrt(squared_distance(cloud.row(i), cloud.row(j))));
    }
    std::sort(d.begin(), d.end());
    double want = (d[0] + d[1] + d[2] + d[3] + d[4]) / 5.0;
    CHECK(mine[i] == doctest::Approx(want).epsilon(1e-12));
  }

  CHECK_THROWS_AS((void)proximity_scores(two, 2), Error);
}

TEST_CASE("proximity scores are translation invariant and permutation equivariant") {
  Rng rng(5);
  Matrix cloud(30, 2);
  for (auto& v : cloud.data) v = rng.normal();
  auto base = proximity_scores(cloud, 4);

  Matrix shifted = cloud;
  for (std::size_t i = 0; i < 30; ++i) {
    shifted(i, 0) += 17.0;
    shifted(i, 1) -= 4.5;
  }
  auto moved = proximity_scores(shifted, 4);
  for (std::size_t i = 0; i < 30; ++i) CHECK(moved[i] == doctest::Approx(base[i]).epsilon(1e-12));

  Matrix swapped = cloud;
  for (std::size_t j = 0; j < 2; ++j) std::swap(swapped(3, j), swapped(20, j));
  auto perm = proximity_scores(swapped, 4);
  CHECK(perm[3] == doctest::Approx(base[20]).epsilon(1e-12));
  CHECK(perm[20] == doctest::Approx(base[3]).epsilon(1e-12));
  CHECK(perm[7] == doctest::Approx(base[7]).epsilon(1e-12));
}

TEST_CASE("theorem2 bound holds on constructed predictors") {
  Thm2Params p;
  p.trials = 30;
  p.n = 800;
  p.seed = 11;
  p.eps = 0.0;
  auto reports = verify_theorem2(p);
  REQUIRE(reports.size() == 30);
  std::size_t held = 0;
  for (const auto& r : reports) {
    held += r.holds ? 1 : 0;
    CHECK(r.eps_term <= 1e-12);  // eps = 0 construction
    CHECK(r.bound >= 0.0);
  }
  CHECK(held >= 28);  // >= 1 - delta fraction with slack for 30-trial noise

  // Large eps dominates: everything holds.
  Thm2Params loose = p;
  loose.trials = 10;
  loose.eps = 0.5;
  auto loose_reports = verify_theorem2(loose);
  for (const auto& r : loose_reports) CHECK(r.holds);

  // Single bin and large n collapse the bound toward eps.
  Thm2Params single = p;
  single.trials = 3;
  single.m_bins = 1;
  single.n = 4000;
  single.eps = 0.25;
  for (const auto& r : verify_theorem2(single)) {
    CHECK(r.holds);
    CHECK(r.bound <= 0.25 + 0.1);
    CHECK(r.bound >= 0.25 - 1e-9);
  }
}

TEST_CASE("corollary 1 trend: shrinking eps approaches the stochastic floor") {
  double prev_bound = 1e9;
  double floor_gap = 0.0;
  for (double eps : {0.2, 0.1, 0.0}) {
    Thm2Params p;
    p.trials = 12;
    p.n = 600;
    p.eps = eps;
    p.seed = 31;
    auto reports = verify_theorem2(p);
    double bound = 0.0, eps_part = 0.0;
    std::size_t held = 0;
    for (const auto& r : reports) {
      bound += r.bound;
      eps_part += r.eps_term;
      held += r.holds ? 1 : 0;
    }
    bound /= reports.size();
    eps_part /= reports.size();
    CHECK(bound < prev_bound);
    CHECK(held >= 11);
    prev_bound = bound;
    floor_gap = eps_part;  // last iteration: eps = 0
  }
  // At eps = 0 the bound is pure stochastic fluctuation.
  CHECK(floor_gap <= 1e-12);
}

TEST_CASE("theorem3 terms on coincident features") {
  // All rows share one feature point: uniform weights, zero bias term.
  std::size_t n = 40;
  CalibrationDataset d;
  d.features = Matrix(n, 2, 0.0);
  d.logits = Matrix(n, 2);
  d.labels.resize(n);
  Rng rng(7);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = i % 2;
    d.logits(i, 0) = 0.1;  // constant predictions: single confidence bin
    d.logits(i, 1) = -0.1;
  }
  d.priors = priors_from_labels(d.labels, 2);
  ProbabilityMatrix probs = dataset_probs(d);
  double delta = 0.05;

  BoundReport inc = verify_theorem3(d, probs, 0.1, {BinMode::ClasswiseEqualWidth, 15, 1},
                                    KernelConfig{1.0, false}, delta);
  double n_d = static_cast<double>(n);
  CHECK(inc.variance_term ==
        doctest::Approx(std::sqrt(2.0 * std::log(n_d / delta) / n_d)).epsilon(1e-12));
  CHECK(inc.bias_term == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(inc.eps_term == 0.1);

  BoundReport exc = verify_theorem3(d, probs, 0.1, {BinMode::ClasswiseEqualWidth, 15, 1},
                                    KernelConfig{1.0, true}, delta);
  CHECK(exc.variance_term ==
        doctest::Approx(std::sqrt(2.0 * std::log(n_d / delta) / (n_d - 1.0))).epsilon(1e-12));
}

TEST_CASE("theorem3 holds and the bandwidth sweep trades bias for variance") {
  // Low-dimensional unit-scale features keep every sweep bandwidth in the
  // smoothing regime (weights never collapse onto a single neighbor).
  SynthSpec spec;
  spec.n = 1500;
  spec.seed = 13;
  spec.n_classes = 2;
  spec.n_features = 2;
  spec.sigma = 1.0;
  spec.mean_scale = 1.75;
  SynthResult res = generate(spec);
  CalibrationDataset d =
      inject_local_miscalibration(res.dataset, res.true_conditionals, 0.05,
                                  PerturbMode::UniformL1, 5, nullptr);
  ProbabilityMatrix probs = dataset_probs(d);
  BinningScheme scheme{BinMode::ClasswiseEqualWidth, 15, 20};

  // Ascending gamma: weights spread out, so the weighted-distance bias term
  // grows while the effective-sample-size variance term shrinks.
  double prev_bias = -1.0, prev_var = 1e300;
  for (double g : {0.5, 1.0, 2.0, 5.0, 10.0}) {
    BoundReport r = verify_theorem3(d, probs, std::nullopt, scheme, KernelConfig{g, true}, 0.05);
    CHECK(r.holds);
    CHECK(r.bias_term > prev_bias);
    CHECK(r.variance_term < prev_var);
    prev_bias = r.bias_term;
    prev_var = r.variance_term;
  }
}

TEST_CASE("theorem5 identical sub-bins trivially hold") {
  // Duplicate every point and use k = 1: every proximity score is exactly 0,
  // so the stable median split returns the two copies as the two sub-bins.
  std::size_t half = 60;
  CalibrationDataset d;
  d.features = Matrix(2 * half, 2);
  d.logits = Matrix(2 * half, 2);
  d.labels.resize(2 * half);
  Rng rng(17);
  for (std::size_t i = 0; i < half; ++i) {
    double x = rng.normal(), y = rng.normal();
    std::uint32_t lab = rng.uniform() < 0.6 ? 1u : 0u;
    for (std::size_t copy = 0; copy < 2; ++copy) {
      std::size_t r = i + copy * half;  // copy A block, then copy B block
      d.features(r, 0) = x;
      d.features(r, 1) = y;
      d.labels[r] = lab;
      d.logits(r, 0) = std::log(0.4);
      d.logits(r, 1) = std::log(0.6);
    }
  }
  d.priors = priors_from_labels(d.labels, 2);
  ProbabilityMatrix probs = dataset_probs(d);
  ProximityReport rep = verify_theorem5(d, probs, 0.0, 1, 0.05,
                                        {BinMode::ClasswiseEqualWidth, 15, 0});
  REQUIRE(!rep.pairs.empty());
  for (const auto& pr : rep.pairs) {
    CHECK(pr.freq_gap <= 1e-9);
    CHECK(pr.holds);
  }
}

TEST_CASE("theorem5 flags the proximity-biased construction") {
  SynthSpec spec;
  spec.kind = SynthKind::ProximityBiased;
  spec.n = 2000;
  spec.seed = 19;
  SynthResult res = generate(spec);
  ProbabilityMatrix probs = dataset_probs(res.dataset);
  double eps = estimate_local_eps_dense(res.dataset, probs, KernelConfig{10.0, true}, 5);
  ProximityReport rep = verify_theorem5(res.dataset, probs, eps, 5, 0.05,
                                        {BinMode::ClasswiseEqualWidth, 15, 0});
  REQUIRE(!rep.pairs.empty());
  bool flagged = false;
  for (const auto& pr : rep.pairs) flagged |= !pr.holds;
  CHECK(flagged);
  std::string js = rep.to_json();
  CHECK(js.find("\"holds\":false") != std::string::npos);
}

TEST_CASE("theorem5 holds on locally calibrated data") {
  std::size_t held = 0, total = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SynthSpec spec;
    spec.n = 1500;
    spec.seed = 100 + seed;
    SynthResult res = generate(spec);
    CalibrationDataset d = inject_local_miscalibration(res.dataset, res.true_conditionals, 0.05,
                                                       PerturbMode::UniformL1, seed, nullptr);
    ProbabilityMatrix probs = dataset_probs(d);
    ProximityReport rep = verify_theorem5(d, probs, 0.08, 5, 0.05,
                                          {BinMode::ClasswiseEqualWidth, 15, 0});
    for (const auto& pr : rep.pairs) {
      ++total;
      held += pr.holds ? 1 : 0;
    }
  }
  REQUIRE(total > 0);
  CHECK(static_cast<double>(held) >= 0.95 * static_cast<double>(total));
}

TEST_CASE("bound report json line") {
  BoundReport r;
  r.theorem = "thm2";
  r.observed = 0.0123456789;
  r.bound = 0.2;
  r.holds = true;
  r.delta = 0.05;
  std::string js = r.to_json();
  CHECK(js.find("\"theorem\":\"thm2\"") != std::string::npos);
  CHECK(js.find("\"holds\":true") != std::string::npos);
  CHECK(js.find("\"observed\":0.0123456789") != std::string::npos);
}
