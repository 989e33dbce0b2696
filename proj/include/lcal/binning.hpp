#pragma once

#include <cstdint>
#include <vector>

#include "lcal/dataset.hpp"
#include "lcal/matrix.hpp"

namespace lcal {

enum class BinMode { ClasswiseEqualWidth, ClasswiseEqualFrequency };

struct BinningScheme {
  BinMode mode = BinMode::ClasswiseEqualWidth;
  std::size_t m_bins = 15;
  std::size_t min_bin_size = 0;  // bins below this are dropped; 0 keeps all nonempty
};

// Per-(class, bin) aggregates for the class-wise confidence binnings. Bin b of
// class c holds the rows whose predicted probability for class c falls in the
// b-th confidence group; bins are ordered by ascending confidence.
struct BinStats {
  std::size_t m_bins = 0;
  std::size_t n_classes = 0;
  std::size_t n_rows = 0;
  std::vector<std::vector<std::vector<std::size_t>>> members;  // [c][b] -> row indices
  std::vector<std::vector<double>> freq;                       // [c][b] empirical class-c rate
  std::vector<std::vector<double>> conf;                       // [c][b] mean predicted prob
  std::vector<std::vector<std::size_t>> count;                 // [c][b]
  std::vector<std::vector<bool>> retained;                     // [c][b]
  std::vector<std::vector<double>> bin_weight;  // [c][b], sums to 1 per class over retained bins
  std::vector<double> class_weight;             // pi_c
};

// Scalar comparator of the generic metric; abs_diff has Lipschitz constant 1.
struct Comparator {
  enum class Kind { AbsDiff } kind = Kind::AbsDiff;
  double lipschitz = 1.0;
  double operator()(double freq, double conf) const;
};

BinStats assign_bins(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                     const BinningScheme& scheme, const std::vector<double>& priors);

// sum_b w_b sum_c pi_c * phi(freq, conf) over retained bins.
double generic_metric(const BinStats& stats, const Comparator& cmp);

// L_phi * [eps + sum_b w_b sqrt(log(2 C m_B / delta) / (2 |Psi(b)|))] with
// |Psi(b)| the smallest nonempty class population of bin b and w_b the
// class-weighted average of the per-class bin weights.
double theorem2_bound(const BinStats& stats, double eps, double delta, double lipschitz);

// Equal-width bin of a confidence in [0,1]: floor(p * m), last bin closed.
std::size_t equal_width_bin(double p, std::size_t m_bins);

}  // namespace lcal
