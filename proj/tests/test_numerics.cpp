#include <doctest.h>

#include <cmath>
#include <vector>

#include "lcal/error.hpp"
#include "lcal/numerics.hpp"
#include "lcal/rng.hpp"
#include "oracle_naive.hpp"

using namespace lcal;

TEST_CASE("softmax basics") {
  std::vector<double> z{0.0, 0.0};
  auto p = softmax(z);
  CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));

  std::vector<double> z2{2.0, 0.0};
  auto p2 = softmax(z2);
  double e2 = std::exp(2.0);
  CHECK(p2[0] == doctest::Approx(e2 / (e2 + 1.0)).epsilon(1e-12));
  CHECK(p2[0] == doctest::Approx(0.880797).epsilon(1e-6));

  std::vector<double> big{1000.0, 0.0};
  auto p3 = softmax(big);
  CHECK(p3[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(p3[1]));

  std::vector<double> bad{1.0, std::nan("")};
  CHECK_THROWS_AS((void)softmax(bad), Error);
}

TEST_CASE("softmax simplex and shift invariance") {
  Rng rng(11);
  for (int t = 0; t < 200; ++t) {
    std::size_t c = 2 + rng.below(6);
    std::vector<double> z(c), zs(c);
    double shift = rng.uniform(-50.0, 50.0);
    for (std::size_t i = 0; i < c; ++i) {
      z[i] = rng.uniform(-10.0, 10.0);
      zs[i] = z[i] + shift;
    }
    auto p = softmax(z), ps = softmax(zs);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    for (std::size_t i = 0; i < c; ++i) CHECK(std::abs(p[i] - ps[i]) <= 1e-12);
  }
}

TEST_CASE("jsd distance values") {
  std::vector<double> u{0.5, 0.5};
  CHECK(jsd_distance(u, u) == 0.0);

  std::vector<double> e0{1.0, 0.0}, e1{0.0, 1.0};
  CHECK(jsd_distance(e0, e1) == doctest::Approx(std::sqrt(std::log(2.0))).epsilon(1e-14));
  CHECK(jsd_distance(e0, e1) == doctest::Approx(0.832555).epsilon(1e-6));

  // High-precision evaluation of the (0.9,0.1) vs (0.1,0.9) case.
  long double p0 = 0.9L, p1 = 0.1L;
  long double acc = 0.5L * (p0 * std::log(p0 / 0.5L) + p1 * std::log(p1 / 0.5L));
  acc += 0.5L * (p1 * std::log(p1 / 0.5L) + p0 * std::log(p0 / 0.5L));
  double expect = static_cast<double>(std::sqrt(acc));
  std::vector<double> a{0.9, 0.1}, b{0.1, 0.9};
  CHECK(jsd_distance(a, b) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("jsd is a metric on random triples") {
  Rng rng(23);
  double max_over = 0.0;
  for (int t = 0; t < 10000; ++t) {
    std::size_t c = 2 + rng.below(4);
    auto draw = [&]() {
      std::vector<double> v(c);
      double s = 0.0;
      for (auto& x : v) {
        x = -std::log(1.0 - rng.uniform());
        s += x;
      }
      for (auto& x : v) x /= s;
      return v;
    };
    auto p = draw(), q = draw(), r = draw();
    double pq = jsd_distance(p, q), qp = jsd_distance(q, p);
    CHECK(pq == qp);  // symmetric by construction
    CHECK(pq <= std::sqrt(std::log(2.0)) + 1e-12);
    double viol = pq - (jsd_distance(p, r) + jsd_distance(r, q));
    max_over = std::max(max_over, viol);
  }
  CHECK(max_over <= 1e-10);
}

TEST_CASE("pca recovers a line") {
  Matrix x(20, 3, 0.0);
  Rng rng(5);
  for (std::size_t i = 0; i < 20; ++i) x(i, 0) = rng.uniform(-3.0, 3.0);
  PcaProjection p = fit_pca(x, 1);
  CHECK(std::abs(std::abs(p.components(0, 0)) - 1.0) <= 1e-8);
  CHECK(std::abs(p.components(0, 1)) <= 1e-8);
  CHECK(std::abs(p.components(0, 2)) <= 1e-8);
}

TEST_CASE("pca reconstruction error equals discarded eigenvalue mass") {
  Rng rng(7);
  const std::size_t n = 300, m = 5, d = 2;
  Matrix x(n, m);
  for (auto& v : x.data) v = rng.normal() + 0.3 * rng.uniform();
  PcaProjection full = fit_pca(x, m);  // oracle: full eigendecomposition
  PcaProjection red = fit_pca(x, d);

  // Orthonormal rows.
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = 0; b < d; ++b) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += red.components(a, j) * red.components(b, j);
      CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) <= 1e-8);
    }

  Matrix proj = pca_project(red, x);
  double recon_err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double rec = red.mean[j];
      for (std::size_t r = 0; r < d; ++r) rec += proj(i, r) * red.components(r, j);
      double diff = x(i, j) - rec;
      recon_err += diff * diff;
    }
  }
  recon_err /= static_cast<double>(n - 1);
  double discarded = 0.0;
  for (std::size_t r = d; r < m; ++r) discarded += full.eigenvalues[r];
  CHECK(recon_err == doctest::Approx(discarded).epsilon(1e-8));
}

TEST_CASE("pca beats arbitrary rank-d projections at reconstruction") {
  Rng rng(77);
  const std::size_t n = 120, m = 4, d = 2;
  Matrix x(n, m);
  for (auto& v : x.data) v = rng.normal() * (1.0 + 0.5 * rng.uniform());
  PcaProjection p = fit_pca(x, d);

  auto recon_error = [&](const Matrix& basis) {
    // basis rows orthonormal; reconstruct centered data through it.
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double proj[d] = {0.0, 0.0};
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t j = 0; j < m; ++j) proj[r] += (x(i, j) - p.mean[j]) * basis(r, j);
      for (std::size_t j = 0; j < m; ++j) {
        double rec = 0.0;
        for (std::size_t r = 0; r < d; ++r) rec += proj[r] * basis(r, j);
        double diff = (x(i, j) - p.mean[j]) - rec;
        err += diff * diff;
      }
    }
    return err;
  };
  double best = recon_error(p.components);
  for (int t = 0; t < 20; ++t) {
    // Random orthonormal pair via Gram-Schmidt.
    Matrix q(d, m);
    for (auto& v : q.data) v = rng.normal();
    double n0 = 0.0;
    for (std::size_t j = 0; j < m; ++j) n0 += q(0, j) * q(0, j);
    for (std::size_t j = 0; j < m; ++j) q(0, j) /= std::sqrt(n0);
    double dot = 0.0;
    for (std::size_t j = 0; j < m; ++j) dot += q(0, j) * q(1, j);
    double n1 = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      q(1, j) -= dot * q(0, j);
      n1 += q(1, j) * q(1, j);
    }
    for (std::size_t j = 0; j < m; ++j) q(1, j) /= std::sqrt(n1);
    CHECK(recon_error(q) >= best - 1e-8);
  }
}

TEST_CASE("pca with full dimension is an isometry of centered data") {
  Rng rng(9);
  Matrix x(50, 4);
  for (auto& v : x.data) v = rng.uniform(-2.0, 2.0);
  PcaProjection p = fit_pca(x, 4);
  Matrix proj = pca_project(p, x);
  for (int t = 0; t < 50; ++t) {
    std::size_t i = rng.below(50), j = rng.below(50);
    double d_orig = 0.0, d_proj = 0.0;
    for (std::size_t a = 0; a < 4; ++a) {
      double da = x(i, a) - x(j, a);
      d_orig += da * da;
      double dp = proj(i, a) - proj(j, a);
      d_proj += dp * dp;
    }
    CHECK(std::abs(d_orig - d_proj) <= 1e-8 * (1.0 + d_orig));
  }
}

TEST_CASE("pav isotonic basics") {
  std::vector<double> inc{0.0, 0.2, 0.2, 0.9};
  std::vector<double> w(4, 1.0);
  CHECK(pav_isotonic(inc, w) == inc);

  std::vector<double> y{0.0, 1.0, 0.0, 1.0};
  auto fit = pav_isotonic(y, w);
  std::vector<double> want{0.0, 0.5, 0.5, 1.0};
  for (std::size_t i = 0; i < 4; ++i) CHECK(fit[i] == doctest::Approx(want[i]).epsilon(1e-12));

  std::vector<double> rev{3.0, 2.0, 1.0};
  std::vector<double> wr{1.0, 2.0, 1.0};
  auto flat = pav_isotonic(rev, wr);
  double mean = (3.0 + 2.0 * 2.0 + 1.0) / 4.0;
  for (double v : flat) CHECK(v == doctest::Approx(mean).epsilon(1e-12));

  CHECK_THROWS_AS((void)pav_isotonic(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST_CASE("pav equals brute-force projection on short grids") {
  // All {0, 0.5, 1} sequences up to length 5, plus all 0/1 of length 8.
  std::vector<double> grid{0.0, 0.5, 1.0};
  for (std::size_t len = 1; len <= 5; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= grid.size();
    for (std::size_t code = 0; code < total; ++code) {
      std::vector<double> y(len);
      std::size_t c = code;
      for (std::size_t i = 0; i < len; ++i) {
        y[i] = grid[c % grid.size()];
        c /= grid.size();
      }
      std::vector<double> w(len, 1.0);
      auto got = pav_isotonic(y, w);
      auto want = oracle::brute_isotonic(y, w);
      for (std::size_t i = 0; i < len; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-10);
      for (std::size_t i = 1; i < len; ++i) CHECK(got[i] >= got[i - 1] - 1e-12);
    }
  }
  for (std::size_t code = 0; code < 256; ++code) {
    std::vector<double> y(8), w(8);
    for (std::size_t i = 0; i < 8; ++i) {
      y[i] = (code >> i) & 1 ? 1.0 : 0.0;
      w[i] = 1.0 + static_cast<double>(i % 3);
    }
    auto got = pav_isotonic(y, w);
    auto want = oracle::brute_isotonic(y, w);
    for (std::size_t i = 0; i < 8; ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-10);
  }
}

TEST_CASE("golden section minimization") {
  double t = golden_section_min([](double x) { return (x - 3.0) * (x - 3.0); }, 0.0, 10.0, 1e-6);
  CHECK(std::abs(t - 3.0) <= 1e-6);
  double u = golden_section_min([](double x) { return std::abs(x - 1.0); }, 0.0, 2.0, 1e-7);
  CHECK(std::abs(u - 1.0) <= 1e-6);
  CHECK_THROWS_AS((void)golden_section_min([](double x) { return x; }, 1.0, 1.0, 1e-6), Error);
}

TEST_CASE("adam step behavior") {
  AdamState st(1, 1e-1);
  std::vector<double> params{1.0};
  std::vector<double> g{0.0};
  adam_step(st, params, g);
  CHECK(params[0] == 1.0);
  CHECK(st.step == 1);

  // Constant positive gradient moves the parameter down.
  AdamState st2(1, 1e-2);
  std::vector<double> p2{0.5};
  std::vector<double> g2{2.0};
  for (int i = 0; i < 20; ++i) adam_step(st2, p2, g2);
  CHECK(p2[0] < 0.5);

  // 100 steps on f(x) = x^2 from x = 1 at lr 0.1 lands near the minimum.
  AdamState st3(1, 1e-1);
  std::vector<double> x{1.0};
  for (int i = 0; i < 100; ++i) {
    std::vector<double> grad{2.0 * x[0]};
    adam_step(st3, x, grad);
  }
  CHECK(std::abs(x[0]) < 0.05);

  std::vector<double> wrong{1.0, 2.0};
  CHECK_THROWS_AS(adam_step(st3, wrong, wrong), Error);
}

TEST_CASE("rng determinism and streams") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  bool differs = false;
  Rng a2(42);
  for (int i = 0; i < 10; ++i) differs |= a2.next_u64() != c.next_u64();
  CHECK(differs);

  Rng s1 = Rng(7).stream(3), s2 = Rng(7).stream(3), s3 = Rng(7).stream(4);
  CHECK(s1.next_u64() == s2.next_u64());
  CHECK(s1.next_u64() != s3.next_u64());

  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}
