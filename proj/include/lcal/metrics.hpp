#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lcal/binning.hpp"
#include "lcal/dataset.hpp"
#include "lcal/kernels.hpp"

namespace lcal {

enum class LceVariant { ClasswiseScalar, VectorL1 };

struct MetricConfig {
  BinningScheme ece_scheme{BinMode::ClasswiseEqualWidth, 15, 0};
  BinningScheme lce_scheme{BinMode::ClasswiseEqualWidth, 15, 20};
  KernelConfig kernel{10.0, true};
  LceVariant variant = LceVariant::ClasswiseScalar;
  std::string prior_source = "train";  // which priors populated pi_c

  std::string fingerprint() const;
};

struct MetricReport {
  double ece = 0.0;
  double ecce = 0.0;
  double lce = 0.0;
  double mlce = 0.0;
  double nll = 0.0;
  double accuracy = 0.0;
  std::vector<double> per_class_ece;
  MetricConfig config;

  std::string to_json() const;  // flat object, 12 significant digits
};

double classwise_ece(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                     const BinningScheme& scheme, const std::vector<double>& priors);

// Cumulative-prefix variant: per class, |sum over bins <= b of pooled signed
// gaps| / S_b, weighted by bin mass then priors.
double classwise_ecce(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                      const BinningScheme& scheme, const std::vector<double>& priors);

// Per-anchor data behind LCE/MLCE, reused by the bound harnesses.
struct LceAnchor {
  std::size_t row = 0;
  std::size_t cls = 0;  // class whose binning produced this anchor (vector mode: argmax class)
  std::size_t bin = 0;
  double deviation = 0.0;     // scalar |.| or vector l1 deviation
  double n_eff = 0.0;         // 1 / sum w^2 over the anchor's weights
  double weighted_l1 = 0.0;   // sum_j w_ij ||phi_i - phi_j||_1
  double eps_dev = 0.0;       // ||p_i - sum_j w_ij y_j||  (l1 in vector mode, |.| classwise)
};

struct LceResult {
  double lce = 0.0;
  double mlce = 0.0;
  std::size_t n_rows = 0;
  std::vector<LceAnchor> anchors;
};

LceResult lce_details(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                      const Matrix& features, const BinningScheme& scheme,
                      const KernelConfig& kernel, const std::vector<double>& priors,
                      LceVariant variant, bool collect_anchors = false);

double lce(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
           const Matrix& features, const BinningScheme& scheme, const KernelConfig& kernel,
           const std::vector<double>& priors, LceVariant variant = LceVariant::ClasswiseScalar);

double mlce(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
            const Matrix& features, const BinningScheme& scheme, const KernelConfig& kernel,
            const std::vector<double>& priors, LceVariant variant = LceVariant::ClasswiseScalar);

double nll(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels);
double accuracy(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels);

// Upper bound on the softmax Lipschitz constant from the last-layer weights:
// max over columns of the column l1 norm.
double softmax_lipschitz(const Matrix& last_layer);

struct RhoCheck {
  double rho = 0.0;
  double lipschitz = 1.0;
  std::size_t violations = 0;  // (instance, class) pairs breaking |p - theta| <= L rho
  double max_abs_deviation = 0.0;
};

RhoCheck rho_check(const ProbabilityMatrix& probs, const Matrix& features,
                   const std::vector<std::uint32_t>& labels, const KernelConfig& kernel,
                   double rho, double lipschitz);

MetricReport evaluate_all(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                          const std::vector<double>& priors, const MetricConfig& cfg);

Matrix one_hot(const std::vector<std::uint32_t>& labels, std::size_t n_classes);

// Fixed-precision float formatting shared by every JSON writer.
std::string format_sig(double v, int digits);

}  // namespace lcal
