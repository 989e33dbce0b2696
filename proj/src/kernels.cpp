#include "lcal/kernels.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "lcal/error.hpp"
#include "lcal/parallel.hpp"

namespace lcal {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc;
}

double kernel_value(const KernelConfig& cfg, std::span<const double> a,
                    std::span<const double> b) {
  if (a.size() != b.size()) throw Error(Err::DimensionMismatch, "kernel operand dimensions");
  return std::exp(-squared_distance(a, b) / (2.0 * cfg.bandwidth * cfg.bandwidth));
}

KernelWeights kernel_weights(const KernelConfig& cfg, const Matrix& points, std::size_t anchor,
                             std::span<const std::size_t> subset) {
  KernelWeights out;
  out.anchor = anchor;
  const double inv = -1.0 / (2.0 * cfg.bandwidth * cfg.bandwidth);
  auto a = points.row(anchor);

  std::vector<double> logk;
  auto consider = [&](std::size_t j) {
    if (cfg.exclude_self && j == anchor) return;
    out.neighbors.push_back(j);
    logk.push_back(inv * squared_distance(a, points.row(j)));
  };
  if (subset.empty())
    for (std::size_t j = 0; j < points.rows; ++j) consider(j);
  else
    for (std::size_t j : subset) consider(j);

  if (out.neighbors.empty())
    throw Error(Err::NoNeighbors, "anchor " + std::to_string(anchor) + " has no neighbors");

  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logk) mx = std::max(mx, v);
  double sum = 0.0;
  out.weights.resize(logk.size());
  for (std::size_t i = 0; i < logk.size(); ++i) {
    out.weights[i] = std::exp(logk[i] - mx);
    sum += out.weights[i];
  }
  for (double& w : out.weights) w /= sum;
  return out;
}

std::vector<double> nw_estimate(const KernelConfig& cfg, std::span<const double> anchor,
                                const Matrix& neighbors, const Matrix& targets, long self_row) {
  if (neighbors.rows != targets.rows)
    throw Error(Err::ShapeMismatch, "neighbor/target row counts differ");
  if (neighbors.cols != anchor.size())
    throw Error(Err::DimensionMismatch, "anchor dimension differs from neighbors");

  const double inv = -1.0 / (2.0 * cfg.bandwidth * cfg.bandwidth);
  std::vector<double> logk;
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < neighbors.rows; ++j) {
    if (cfg.exclude_self && self_row >= 0 && j == static_cast<std::size_t>(self_row)) continue;
    idx.push_back(j);
    logk.push_back(inv * squared_distance(anchor, neighbors.row(j)));
  }
  if (idx.empty()) throw Error(Err::NoNeighbors, "no usable neighbors after self-exclusion");

  double mx = -std::numeric_limits<double>::infinity();
  for (double v : logk) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : logk) {
    v = std::exp(v - mx);
    sum += v;
  }
  std::vector<double> est(targets.cols, 0.0);
  for (std::size_t t = 0; t < idx.size(); ++t) {
    double w = logk[t] / sum;
    auto row = targets.row(idx[t]);
    for (std::size_t c = 0; c < targets.cols; ++c) est[c] += w * row[c];
  }
  return est;
}

Matrix nw_estimate_all(const KernelConfig& cfg, const Matrix& points, const Matrix& targets) {
  if (points.rows != targets.rows)
    throw Error(Err::ShapeMismatch, "point/target row counts differ");
  Matrix out(points.rows, targets.cols);
  parallel_for(points.rows, [&](std::size_t i) {
    KernelWeights kw = kernel_weights(cfg, points, i);
    auto dst = out.row(i);
    for (std::size_t t = 0; t < kw.neighbors.size(); ++t) {
      auto row = targets.row(kw.neighbors[t]);
      for (std::size_t c = 0; c < targets.cols; ++c) dst[c] += kw.weights[t] * row[c];
    }
  });
  return out;
}

Matrix nw_estimate_cross(const KernelConfig& cfg, const Matrix& anchors, const Matrix& ref_points,
                         const Matrix& ref_targets) {
  if (ref_points.rows != ref_targets.rows)
    throw Error(Err::ShapeMismatch, "reference point/target row counts differ");
  Matrix out(anchors.rows, ref_targets.cols);
  KernelConfig cross = cfg;
  cross.exclude_self = false;  // anchors are not members of the reference set
  parallel_for(anchors.rows, [&](std::size_t i) {
    std::vector<double> est = nw_estimate(cross, anchors.row(i), ref_points, ref_targets);
    auto dst = out.row(i);
    for (std::size_t c = 0; c < est.size(); ++c) dst[c] = est[c];
  });
  return out;
}

double effective_sample_size(const KernelWeights& w) {
  double s2 = 0.0;
  for (double v : w.weights) s2 += v * v;
  return 1.0 / s2;
}

}  // namespace lcal
