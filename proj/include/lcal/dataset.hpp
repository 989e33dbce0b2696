#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcal/matrix.hpp"

namespace lcal {

// The universal input: exported (features, logits, labels) plus class priors.
// Immutable after construction; all operations return fresh datasets.
struct CalibrationDataset {
  Matrix features;              // n x m
  Matrix logits;                // n x C
  std::vector<std::uint32_t> labels;  // length n, values in [0, C)
  std::vector<double> priors;   // length C, sums to 1

  std::size_t n() const { return labels.size(); }
  std::size_t m() const { return features.cols; }
  std::size_t n_classes() const { return logits.cols; }

  // Checks every invariant; throws on violation.
  void validate() const;
};

// Rows on the probability simplex.
struct ProbabilityMatrix {
  Matrix probs;  // n x C
  void validate(double tol = 1e-9) const;
};

struct SplitSpec {
  std::vector<std::pair<std::string, double>> fractions;
  std::uint64_t seed = 0;
};

enum class DatasetFormat { Binary, Csv };

// Normalized label histogram.
std::vector<double> priors_from_labels(const std::vector<std::uint32_t>& labels,
                                       std::size_t n_classes);

CalibrationDataset load_dataset(const std::string& path, DatasetFormat format);
void save_dataset(const CalibrationDataset& d, const std::string& path, DatasetFormat format);

// Deterministic disjoint row partition; priors recomputed per split.
std::vector<CalibrationDataset> split(const CalibrationDataset& d, const SplitSpec& spec);

// Same labels/priors, substituted matrices (used to evaluate learned
// representations with the stock metric stack).
CalibrationDataset replace_representation(const CalibrationDataset& d, const Matrix& new_features,
                                          const Matrix& new_logits);

ProbabilityMatrix dataset_probs(const CalibrationDataset& d);  // row-wise softmax of logits

}  // namespace lcal
