#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "lcal/dataset.hpp"

namespace lcal {

struct TemperatureModel {
  double t = 1.0;
};

struct PlattModel {
  std::vector<double> a;  // per-class slope on the raw logit
  std::vector<double> b;  // per-class intercept
};

struct IsotonicModel {
  // Per class: strictly increasing knots (training scores) with nondecreasing
  // fitted values; application is a right-continuous step with constant
  // extrapolation.
  std::vector<std::vector<double>> knots;
  std::vector<std::vector<double>> values;
};

struct DirichletModel {
  Matrix w;               // C x C on log-probability inputs
  std::vector<double> b;  // length C
};

struct Calibrator {
  std::variant<TemperatureModel, PlattModel, IsotonicModel, DirichletModel> model;
  std::size_t n_classes = 0;
  std::string fingerprint;

  std::string method() const;
  std::string to_json() const;
  static Calibrator from_json(const std::string& text);
};

struct FitConfig {
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  std::size_t max_steps = 2000;  // dirichlet optimizer budget
  double lr = 1e-2;
};

Calibrator fit_temperature(const CalibrationDataset& cal);
Calibrator fit_platt(const CalibrationDataset& cal);
Calibrator fit_isotonic(const CalibrationDataset& cal);
Calibrator fit_dirichlet(const CalibrationDataset& cal, const FitConfig& cfg = {});

ProbabilityMatrix apply_calibrator(const Calibrator& cal, const CalibrationDataset& d);

// NLL of softmax(logits / t); shared by the fit and its tests.
double temperature_nll(const CalibrationDataset& d, double t);

}  // namespace lcal
