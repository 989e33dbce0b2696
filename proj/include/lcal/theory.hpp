#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lcal/binning.hpp"
#include "lcal/dataset.hpp"
#include "lcal/kernels.hpp"
#include "lcal/synth.hpp"

namespace lcal {

// Observed metric against its theoretical bound, with the bound's terms.
struct BoundReport {
  std::string theorem;
  double observed = 0.0;
  double bound = 0.0;
  double eps_term = 0.0;       // local-calibration tolerance used in the bound
  double variance_term = 0.0;  // Hoeffding component
  double bias_term = 0.0;      // weighted feature-distance component (thm3)
  double delta = 0.0;
  bool holds = false;
  std::uint64_t seed = 0;
  std::size_t n = 0, n_classes = 0, m_bins = 0;
  double gamma = 0.0;

  std::string to_json() const;  // one line per report
};

struct Thm2Params {
  std::size_t trials = 200;
  std::size_t n = 2000;        // evaluation rows per trial
  std::size_t n_classes = 4;
  std::size_t m_bins = 15;
  double eps = 0.0;            // injected l1 budget around the kernel estimate
  double delta = 0.05;
  std::uint64_t seed = 0;
  double gamma = 5.0;          // estimation-kernel bandwidth
  std::size_t min_bin_size = 10;
  std::size_t est_factor = 2;  // estimation set = est_factor * n
};

// Constructed locally calibrated predictors against the generic-metric bound.
// Kernel estimates come from a disjoint estimation draw (two-split mode), the
// bound uses the realized per-trial tolerance.
std::vector<BoundReport> verify_theorem2(const Thm2Params& p);

// LCE decomposition: observed vector-variant LCE against
// k [eps + variance + bias] with k the largest class prior, variance from the
// per-anchor effective sample sizes and bias from the empirical weighted l1
// feature distances (L = 1, kernel on the provided representation).
BoundReport verify_theorem3(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                            std::optional<double> eps_hat, const BinningScheme& scheme,
                            const KernelConfig& kernel, double delta);

// Mean Euclidean distance to the k nearest neighbors, self excluded, ties by
// index.
std::vector<double> proximity_scores(const Matrix& features, std::size_t k);

struct ProximityPair {
  std::size_t bin = 0;
  std::size_t size_dense = 0, size_sparse = 0;
  double freq_gap = 0.0;  // || freq(S1) - freq(S2) ||_1
  double conf_gap = 0.0;
  double hoeffding = 0.0;
  double eps2 = 0.0;  // 2 eps
  bool holds = false;
};

struct ProximityReport {
  std::size_t k = 0;
  double delta = 0.0;
  double eps_hat = 0.0;
  std::vector<double> scores;
  std::vector<ProximityPair> pairs;
  std::size_t skipped_bins = 0;

  std::string to_json() const;
};

// Splits each confidence bin at the median proximity score and checks the
// freq-gap decomposition per (bin) pair. Sub-bins need >= 10 members each.
ProximityReport verify_theorem5(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                                double eps_hat, std::size_t k, double delta,
                                const BinningScheme& scheme);

// Max l1 deviation between predictions and leave-one-out kernel estimates.
double estimate_local_eps(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                          const KernelConfig& kernel);

// Same, restricted to rows whose proximity score lies below the median: the
// well-populated half, where kernel estimates are trustworthy.
double estimate_local_eps_dense(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                                const KernelConfig& kernel, std::size_t k);

struct ToyRegionReport {
  char name = 'A';
  std::size_t size = 0;
  double density = 0.0;
  double predicted = 0.0;
  double frequency = 0.0;
  double p_cal = 0.0;     // recalibrated value of this region's (p, density) group
  double residual = 0.0;  // p_cal - frequency, exact rational arithmetic
};

struct ToyReport {
  std::vector<ToyRegionReport> regions;
  double p_cal_focus = 0.0;  // the (p = 0.6, density = 0.075) group

  std::string to_json() const;
};

// Density-confidence conditional recalibration of the six-region example in
// exact integer-rational arithmetic.
ToyReport toy_example(const std::vector<std::size_t>& sizes);

}  // namespace lcal
