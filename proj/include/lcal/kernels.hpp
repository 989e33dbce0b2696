#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lcal/matrix.hpp"

namespace lcal {

// Gaussian kernel over Euclidean distance; exclude_self mirrors the j != i
// convention of the kernel estimator definition.
struct KernelConfig {
  double bandwidth = 10.0;
  bool exclude_self = true;
};

struct KernelWeights {
  std::size_t anchor = 0;
  std::vector<std::size_t> neighbors;
  std::vector<double> weights;  // >= 0, sums to 1
};

// exp(-||a-b||^2 / (2 gamma^2)), in (0, 1].
double kernel_value(const KernelConfig& cfg, std::span<const double> a, std::span<const double> b);

// Normalized weights of all points[j] (j != anchor when excluding self) around
// points[anchor]. Log-domain shift keeps the normalizer alive at large
// distances. `subset` restricts the candidate set (e.g. one confidence bin);
// empty subset means all rows.
KernelWeights kernel_weights(const KernelConfig& cfg, const Matrix& points, std::size_t anchor,
                             std::span<const std::size_t> subset = {});

// Nadaraya-Watson estimate: convex combination of target rows under the kernel
// weights of `anchor` against `neighbors`. self_row >= 0 marks a neighbor row
// to drop when cfg.exclude_self.
std::vector<double> nw_estimate(const KernelConfig& cfg, std::span<const double> anchor,
                                const Matrix& neighbors, const Matrix& targets,
                                long self_row = -1);

// Estimates for every row of `points` against targets attached to the same
// rows (Definition-style leave-one-out when excluding self).
Matrix nw_estimate_all(const KernelConfig& cfg, const Matrix& points, const Matrix& targets);

// Cross-set variant: anchors estimated from a disjoint reference set.
Matrix nw_estimate_cross(const KernelConfig& cfg, const Matrix& anchors, const Matrix& ref_points,
                         const Matrix& ref_targets);

// 1 / sum w^2; in [1, #neighbors].
double effective_sample_size(const KernelWeights& w);

double squared_distance(std::span<const double> a, std::span<const double> b);
double l1_distance(std::span<const double> a, std::span<const double> b);

}  // namespace lcal
