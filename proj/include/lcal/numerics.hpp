#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "lcal/matrix.hpp"

namespace lcal {

// Shift-stable softmax. Throws NonFiniteInput on NaN/inf entries.
std::vector<double> softmax(std::span<const double> z);
void softmax_inplace(std::span<const double> z, std::span<double> out);

// Jensen-Shannon distance with natural log: sqrt(0.5 KL(p||m) + 0.5 KL(q||m)),
// m = (p+q)/2, 0*ln 0 = 0. Range [0, sqrt(ln 2)].
double jsd_distance(std::span<const double> p, std::span<const double> q);

struct PcaProjection {
  std::vector<double> mean;  // length m
  Matrix components;         // d' x m, orthonormal rows, nonincreasing eigenvalue order
  std::vector<double> eigenvalues;
  bool degenerate = false;  // covariance rank < d'; trailing rows are an arbitrary complement
};

PcaProjection fit_pca(const Matrix& x, std::size_t d_reduced);
Matrix pca_project(const PcaProjection& p, const Matrix& x);

// Weighted least-squares projection onto nondecreasing sequences
// (pool-adjacent-violators).
std::vector<double> pav_isotonic(std::span<const double> y, std::span<const double> w);

// Minimizes a unimodal scalar function on [lo, hi] to within tol.
double golden_section_min(const std::function<double(double)>& g, double lo, double hi, double tol);

struct AdamState {
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;  // first moments, same length as the parameter vector
  std::vector<double> v;  // second moments

  explicit AdamState(std::size_t n_params = 0, double learning_rate = 1e-3)
      : lr(learning_rate), m(n_params, 0.0), v(n_params, 0.0) {}
};

// One bias-corrected update; params and grads must match the state's size.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

// Row-level helpers shared across modules.
bool row_on_simplex(std::span<const double> p, double tol = 1e-9);
void renormalize_row(std::span<double> p);  // clips below 0, rescales to sum 1

}  // namespace lcal
