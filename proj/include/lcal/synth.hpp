#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcal/dataset.hpp"
#include "lcal/matrix.hpp"
#include "lcal/rng.hpp"

namespace lcal {

enum class SynthKind {
  GaussianMixture,       // calibrated: softmax(logits) equals the analytic posterior
  ToyRegions,            // six-region grouped construction with exact frequencies
  TemperatureCorrupted,  // logits scaled by t_corrupt on top of the base mixture
  LocallyCorrupted,      // temperature plus a region-dependent logit bias
  ProximityBiased,       // dense well-calibrated mass plus a sparse mislabeled cluster
};

struct SynthSpec {
  SynthKind kind = SynthKind::GaussianMixture;
  std::size_t n = 20000;
  std::uint64_t seed = 0;

  // gaussian_mixture family
  std::size_t n_classes = 4;
  std::size_t n_features = 8;
  double sigma = 10.0;        // isotropic component stddev
  double mean_scale = 21.5;   // class k mean = mean_scale * e_k (Bayes accuracy ~ 0.85)
  std::vector<double> priors; // empty = uniform

  // corruption knobs
  double t_corrupt = 3.0;     // logits multiplied by this (overconfident for > 1)
  double local_bias = 1.8;    // logit offset toggled by the sign of a noise coordinate
  std::size_t bias_axis = 7;  // feature coordinate driving the regional bias

  // toy_regions sizes a..f (multiples of 20 keep frequencies exact)
  std::vector<std::size_t> region_sizes = {400, 400, 400, 400, 400, 400};

  void validate() const;
};

struct SynthResult {
  CalibrationDataset dataset;
  ProbabilityMatrix true_conditionals;  // exact p(y|x) per row
};

SynthResult generate(const SynthSpec& spec);

// Analytic mixture posterior for arbitrary points.
ProbabilityMatrix mixture_posterior(const SynthSpec& spec, const Matrix& x);

// Zero-sum l1-bounded perturbation of simplex rows. Rows stay on the simplex
// without renormalization; infeasible rows are scaled down and the realized
// per-row l1 error is returned.
enum class PerturbMode { UniformL1, PerClass };
struct PerturbResult {
  Matrix probs;
  std::vector<double> realized;  // per-row ||p' - p||_1
  double realized_max = 0.0;
};
PerturbResult perturb_simplex_rows(const Matrix& probs, double eps, PerturbMode mode, Rng& rng);

// Applies the perturbation to the dataset's implied probabilities and rewrites
// logits as shift-normalized log probabilities.
CalibrationDataset inject_local_miscalibration(const CalibrationDataset& d,
                                               const ProbabilityMatrix& true_conditionals,
                                               double eps, PerturbMode mode, std::uint64_t seed,
                                               std::vector<double>* realized_out = nullptr);

// Shift-normalized log of clipped probabilities (softmax inverts it exactly up
// to clipping).
Matrix logits_from_probs(const Matrix& probs);

// Key-value config file (one `key = value` per line, # comments).
SynthSpec parse_synth_spec(const std::string& path);

}  // namespace lcal
