#include "lcal/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lcal/error.hpp"

namespace lcal {

void softmax_inplace(std::span<const double> z, std::span<double> out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    if (!std::isfinite(v)) throw Error(Err::NonFiniteInput, "softmax input");
    mx = std::max(mx, v);
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - mx);
    sum += out[i];
  }
  for (std::size_t i = 0; i < z.size(); ++i) out[i] /= sum;
}

std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> out(z.size());
  softmax_inplace(z, out);
  return out;
}

double jsd_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw Error(Err::DimensionMismatch, "jsd operands");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double m = 0.5 * (p[i] + q[i]);
    // One commutative addition per coordinate keeps the distance bitwise
    // symmetric in its arguments.
    double tp = p[i] > 0.0 ? 0.5 * p[i] * std::log(p[i] / m) : 0.0;
    double tq = q[i] > 0.0 ? 0.5 * q[i] * std::log(q[i] / m) : 0.0;
    acc += tp + tq;
  }
  // Rounding can push the divergence a hair below zero when p == q.
  return std::sqrt(std::max(acc, 0.0));
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix. a is overwritten;
// v accumulates the rotations (columns are eigenvectors).
void jacobi_eigen(Matrix& a, Matrix& v, std::vector<double>& eig) {
  const std::size_t n = a.rows;
  v = Matrix(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eig.resize(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
}

}  // namespace

PcaProjection fit_pca(const Matrix& x, std::size_t d_reduced) {
  const std::size_t n = x.rows, m = x.cols;
  if (n < 2) throw Error(Err::EmptyInput, "pca needs at least 2 rows");
  if (d_reduced < 1 || d_reduced > m)
    throw Error(Err::DimensionMismatch, "pca reduced dimension out of range");

  PcaProjection proj;
  proj.mean.assign(m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) proj.mean[j] += x(i, j);
  for (std::size_t j = 0; j < m; ++j) proj.mean[j] /= static_cast<double>(n);

  Matrix cov(m, m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < m; ++a) {
      double da = x(i, a) - proj.mean[a];
      for (std::size_t b = a; b < m; ++b) cov(a, b) += da * (x(i, b) - proj.mean[b]);
    }
  }
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a; b < m; ++b) {
      cov(a, b) /= static_cast<double>(n - 1);
      cov(b, a) = cov(a, b);
    }

  Matrix vecs;
  std::vector<double> eig;
  jacobi_eigen(cov, vecs, eig);

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return eig[a] > eig[b]; });

  double max_eig = std::max(eig[order[0]], 0.0);
  proj.components = Matrix(d_reduced, m, 0.0);
  proj.eigenvalues.resize(d_reduced);
  for (std::size_t r = 0; r < d_reduced; ++r) {
    std::size_t col = order[r];
    proj.eigenvalues[r] = eig[col];
    // Deterministic sign: largest-magnitude entry positive.
    std::size_t arg = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (std::abs(vecs(j, col)) > std::abs(vecs(arg, col))) arg = j;
    double sgn = vecs(arg, col) >= 0.0 ? 1.0 : -1.0;
    for (std::size_t j = 0; j < m; ++j) proj.components(r, j) = sgn * vecs(j, col);
    if (eig[col] <= 1e-12 * std::max(max_eig, 1e-300)) proj.degenerate = true;
  }
  return proj;
}

Matrix pca_project(const PcaProjection& p, const Matrix& x) {
  if (x.cols != p.mean.size()) throw Error(Err::DimensionMismatch, "pca projection input width");
  Matrix out(x.rows, p.components.rows, 0.0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t r = 0; r < p.components.rows; ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j)
        acc += (x(i, j) - p.mean[j]) * p.components(r, j);
      out(i, r) = acc;
    }
  }
  return out;
}

std::vector<double> pav_isotonic(std::span<const double> y, std::span<const double> w) {
  if (y.empty()) throw Error(Err::EmptyInput, "pav input");
  if (y.size() != w.size()) throw Error(Err::ShapeMismatch, "pav weight length");
  struct Block {
    double mean, weight;
    std::size_t count;
  };
  std::vector<Block> blocks;
  blocks.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    blocks.push_back({y[i], w[i], 1});
    while (blocks.size() >= 2 && blocks[blocks.size() - 2].mean >= blocks.back().mean) {
      Block b = blocks.back();
      blocks.pop_back();
      Block& a = blocks.back();
      double tw = a.weight + b.weight;
      a.mean = (a.mean * a.weight + b.mean * b.weight) / tw;
      a.weight = tw;
      a.count += b.count;
    }
  }
  std::vector<double> out;
  out.reserve(y.size());
  for (const Block& b : blocks) out.insert(out.end(), b.count, b.mean);
  return out;
}

double golden_section_min(const std::function<double(double)>& g, double lo, double hi,
                          double tol) {
  if (!(lo < hi)) throw Error(Err::InvalidBracket, "golden section needs lo < hi");
  const double phi = 0.61803398874989484820;
  double a = lo, b = hi;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  double fc = g(c), fd = g(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = g(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = g(d);
    }
  }
  return 0.5 * (a + b);
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw Error(Err::ShapeMismatch, "adam parameter/gradient/state sizes differ");
  state.step += 1;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    params[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

bool row_on_simplex(std::span<const double> p, double tol) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

void renormalize_row(std::span<double> p) {
  double s = 0.0;
  for (double& v : p) {
    if (v < 0.0) v = 0.0;
    s += v;
  }
  if (s <= 0.0) {
    double u = 1.0 / static_cast<double>(p.size());
    for (double& v : p) v = u;
    return;
  }
  for (double& v : p) v /= s;
}

}  // namespace lcal
