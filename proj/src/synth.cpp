#include "lcal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lcal/error.hpp"
#include "lcal/numerics.hpp"
#include "lcal/parallel.hpp"

namespace lcal {

namespace {

// Six-region table: (density, predicted p, empirical frequency).
struct ToyRegion {
  double density, p, y;
  double x0, x1;
};
constexpr ToyRegion kToyRegions[6] = {
    {0.35, 0.9, 0.95, 0.0, 0.0},  {0.075, 0.6, 0.55, 10.0, 0.0}, {0.075, 0.6, 0.65, 20.0, 0.0},
    {0.075, 0.4, 0.35, 0.0, 10.0}, {0.075, 0.4, 0.45, 10.0, 10.0}, {0.35, 0.1, 0.05, 20.0, 10.0},
};

std::size_t sample_class(const std::vector<double>& probs, double u) {
  double acc = 0.0;
  for (std::size_t c = 0; c + 1 < probs.size(); ++c) {
    acc += probs[c];
    if (u < acc) return c;
  }
  return probs.size() - 1;
}

}  // namespace

void SynthSpec::validate() const {
  if (n < 1) throw Error(Err::SpecInvalid, "n must be >= 1");
  if (kind == SynthKind::ToyRegions) {
    if (region_sizes.size() != 6) throw Error(Err::SpecInvalid, "toy_regions needs 6 sizes");
    for (std::size_t s : region_sizes)
      if (s < 1) throw Error(Err::SpecInvalid, "toy region sizes must be positive");
    return;
  }
  if (kind == SynthKind::ProximityBiased) return;
  if (n_classes < 2) throw Error(Err::SpecInvalid, "need at least 2 classes");
  if (n_features < 1) throw Error(Err::SpecInvalid, "need at least 1 feature");
  if (!(sigma > 0.0)) throw Error(Err::SpecInvalid, "sigma must be > 0");
  if (!priors.empty()) {
    if (priors.size() != n_classes) throw Error(Err::SpecInvalid, "priors length != classes");
    double s = std::accumulate(priors.begin(), priors.end(), 0.0);
    if (std::abs(s - 1.0) > 1e-9) throw Error(Err::SpecInvalid, "priors must sum to 1");
  }
  if (kind == SynthKind::LocallyCorrupted && bias_axis >= n_features)
    throw Error(Err::SpecInvalid, "bias_axis out of range");
}

ProbabilityMatrix mixture_posterior(const SynthSpec& spec, const Matrix& x) {
  const std::size_t C = spec.n_classes;
  std::vector<double> pri = spec.priors;
  if (pri.empty()) pri.assign(C, 1.0 / static_cast<double>(C));
  ProbabilityMatrix out;
  out.probs = Matrix(x.rows, C);
  const double inv = -1.0 / (2.0 * spec.sigma * spec.sigma);
  parallel_for(x.rows, [&](std::size_t i) {
    auto row = x.row(i);
    std::vector<double> logp(C);
    for (std::size_t c = 0; c < C; ++c) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < x.cols; ++j) {
        double mu = (j == c) ? spec.mean_scale : 0.0;
        double d = row[j] - mu;
        d2 += d * d;
      }
      logp[c] = std::log(pri[c]) + inv * d2;
    }
    softmax_inplace(logp, out.probs.row(i));
  });
  return out;
}

Matrix logits_from_probs(const Matrix& probs) {
  Matrix out(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    double mean = 0.0;
    for (std::size_t c = 0; c < probs.cols; ++c) {
      out(i, c) = std::log(std::max(probs(i, c), 1e-12));
      mean += out(i, c);
    }
    mean /= static_cast<double>(probs.cols);
    for (std::size_t c = 0; c < probs.cols; ++c) out(i, c) -= mean;
  }
  return out;
}

namespace {

SynthResult generate_mixture(const SynthSpec& spec) {
  const std::size_t C = spec.n_classes, m = spec.n_features, n = spec.n;
  std::vector<double> pri = spec.priors;
  if (pri.empty()) pri.assign(C, 1.0 / static_cast<double>(C));

  SynthResult res;
  res.dataset.features = Matrix(n, m);
  res.dataset.labels.resize(n);
  Rng base(spec.seed);

  // Features first: row i's stream draws its component and its noise.
  std::vector<std::uint32_t> component(n);
  parallel_for(n, [&](std::size_t i) {
    Rng r = base.stream(i);
    component[i] = static_cast<std::uint32_t>(sample_class(pri, r.uniform()));
    for (std::size_t j = 0; j < m; ++j) {
      double mu = (j == component[i]) ? spec.mean_scale : 0.0;
      res.dataset.features(i, j) = mu + spec.sigma * r.normal();
    }
  });

  res.true_conditionals = mixture_posterior(spec, res.dataset.features);

  // Labels are redrawn from the exact posterior so the conditionals are the
  // generator's ground truth, not the component assignment.
  parallel_for(n, [&](std::size_t i) {
    Rng r = base.stream(i ^ 0x8000000000000000ull);
    std::vector<double> p(res.true_conditionals.probs.row(i).begin(),
                          res.true_conditionals.probs.row(i).end());
    res.dataset.labels[i] = static_cast<std::uint32_t>(sample_class(p, r.uniform()));
  });

  res.dataset.logits = logits_from_probs(res.true_conditionals.probs);
  if (spec.kind == SynthKind::TemperatureCorrupted || spec.kind == SynthKind::LocallyCorrupted)
    for (double& v : res.dataset.logits.data) v *= spec.t_corrupt;
  if (spec.kind == SynthKind::LocallyCorrupted) {
    // Region-dependent push on class 0: overconfident on one side of the
    // bias axis, underconfident on the other. Logit-only calibrators cannot
    // undo it because the sign is invisible from the logits.
    for (std::size_t i = 0; i < n; ++i) {
      double s = res.dataset.features(i, spec.bias_axis) >= 0.0 ? 1.0 : -1.0;
      res.dataset.logits(i, 0) += s * spec.local_bias;
    }
  }
  res.dataset.priors = priors_from_labels(res.dataset.labels, C);
  res.dataset.validate();
  return res;
}

SynthResult generate_toy(const SynthSpec& spec) {
  std::size_t n = 0;
  for (std::size_t s : spec.region_sizes) n += s;
  SynthResult res;
  res.dataset.features = Matrix(n, 2);
  res.dataset.logits = Matrix(n, 2);
  res.dataset.labels.resize(n);
  res.true_conditionals.probs = Matrix(n, 2);

  std::size_t row = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    const ToyRegion& reg = kToyRegions[r];
    const std::size_t sz = spec.region_sizes[r];
    // Exact per-region frequency: the first round(sz * y) rows carry label 1.
    const std::size_t ones = static_cast<std::size_t>(std::llround(reg.y * static_cast<double>(sz)));
    for (std::size_t t = 0; t < sz; ++t, ++row) {
      res.dataset.features(row, 0) = reg.x0;
      res.dataset.features(row, 1) = reg.x1;
      res.dataset.labels[row] = t < ones ? 1u : 0u;
      res.dataset.logits(row, 0) = std::log(1.0 - reg.p);
      res.dataset.logits(row, 1) = std::log(reg.p);
      res.true_conditionals.probs(row, 0) = 1.0 - reg.y;
      res.true_conditionals.probs(row, 1) = reg.y;
    }
  }
  res.dataset.priors = priors_from_labels(res.dataset.labels, 2);
  res.dataset.validate();
  return res;
}

SynthResult generate_proximity_biased(const SynthSpec& spec) {
  const std::size_t n = spec.n;
  const std::size_t n_sparse = static_cast<std::size_t>(std::llround(0.3 * static_cast<double>(n)));
  const std::size_t n_dense = n - n_sparse;

  SynthResult res;
  res.dataset.features = Matrix(n, 2);
  res.dataset.logits = Matrix(n, 2);
  res.dataset.labels.resize(n);
  res.true_conditionals.probs = Matrix(n, 2);
  Rng base(spec.seed);

  parallel_for(n, [&](std::size_t i) {
    Rng r = base.stream(i);
    bool sparse = i >= n_dense;
    if (!sparse) {
      res.dataset.features(i, 0) = r.normal();
      res.dataset.features(i, 1) = r.normal();
    } else {
      // Area-uniform annulus, far enough out that nearest neighbors are
      // mutually distant.
      double rad = std::sqrt(r.uniform() * (45.0 * 45.0 - 15.0 * 15.0) + 15.0 * 15.0);
      double ang = r.uniform() * 6.283185307179586;
      res.dataset.features(i, 0) = rad * std::cos(ang);
      res.dataset.features(i, 1) = rad * std::sin(ang);
    }
    double p1_true = sparse ? 0.1 : 0.6;
    res.true_conditionals.probs(i, 0) = 1.0 - p1_true;
    res.true_conditionals.probs(i, 1) = p1_true;
    res.dataset.labels[i] = r.uniform() < p1_true ? 1u : 0u;
    // The model reports the dense-region conditional everywhere.
    res.dataset.logits(i, 0) = std::log(0.4);
    res.dataset.logits(i, 1) = std::log(0.6);
  });
  res.dataset.priors = priors_from_labels(res.dataset.labels, 2);
  res.dataset.validate();
  return res;
}

}  // namespace

SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case SynthKind::ToyRegions:
      return generate_toy(spec);
    case SynthKind::ProximityBiased:
      return generate_proximity_biased(spec);
    default:
      return generate_mixture(spec);
  }
}

PerturbResult perturb_simplex_rows(const Matrix& probs, double eps, PerturbMode mode, Rng& rng) {
  if (eps < 0.0 || eps > 2.0)
    throw Error(Err::EpsilonTooLarge, "l1 budget must lie in [0, 2]; max feasible is 2");
  PerturbResult out;
  out.probs = probs;
  out.realized.assign(probs.rows, 0.0);
  if (eps == 0.0) return out;

  const std::size_t C = probs.cols;
  for (std::size_t i = 0; i < probs.rows; ++i) {
    Rng r = rng.stream(i);
    std::vector<double> pert(C, 0.0);
    if (mode == PerturbMode::UniformL1) {
      double mean = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        pert[c] = r.normal();
        mean += pert[c];
      }
      mean /= static_cast<double>(C);
      double l1 = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        pert[c] -= mean;  // zero-sum keeps the row on the simplex
        l1 += std::abs(pert[c]);
      }
      if (l1 <= 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) pert[c] *= eps / l1;
    } else {
      // All mass on one up/down pair: push a random class up, take the mass
      // from the largest remaining coordinate.
      std::size_t up = static_cast<std::size_t>(r.below(C));
      std::size_t down = up == 0 ? 1 : 0;
      for (std::size_t c = 0; c < C; ++c)
        if (c != up && probs(i, c) > probs(i, down)) down = c;
      pert[up] = eps / 2.0;
      pert[down] = -eps / 2.0;
    }

    // Shrink to the feasible cone: every coordinate must stay in [0, 1].
    double t = 1.0;
    for (std::size_t c = 0; c < C; ++c) {
      if (pert[c] < 0.0) t = std::min(t, probs(i, c) / -pert[c]);
      if (pert[c] > 0.0) t = std::min(t, (1.0 - probs(i, c)) / pert[c]);
    }
    t = std::max(t, 0.0);
    double realized = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      out.probs(i, c) = probs(i, c) + t * pert[c];
      realized += std::abs(t * pert[c]);
    }
    renormalize_row(out.probs.row(i));  // swallows rounding residue only
    out.realized[i] = realized;
    out.realized_max = std::max(out.realized_max, realized);
  }
  return out;
}

CalibrationDataset inject_local_miscalibration(const CalibrationDataset& d,
                                               const ProbabilityMatrix& true_conditionals,
                                               double eps, PerturbMode mode, std::uint64_t seed,
                                               std::vector<double>* realized_out) {
  if (true_conditionals.probs.rows != d.n())
    throw Error(Err::ShapeMismatch, "conditional row count differs from dataset");
  Rng rng(seed);
  PerturbResult pr = perturb_simplex_rows(true_conditionals.probs, eps, mode, rng);
  if (realized_out) *realized_out = pr.realized;
  CalibrationDataset out = d;
  out.logits = logits_from_probs(pr.probs);
  return out;
}

SynthSpec parse_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Err::IoFailure, "cannot open " + path);
  SynthSpec spec;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) continue;
    try {
      if (key == "kind") {
        if (val == "gaussian_mixture") spec.kind = SynthKind::GaussianMixture;
        else if (val == "toy_regions") spec.kind = SynthKind::ToyRegions;
        else if (val == "temperature_corrupted") spec.kind = SynthKind::TemperatureCorrupted;
        else if (val == "locally_corrupted") spec.kind = SynthKind::LocallyCorrupted;
        else if (val == "proximity_biased") spec.kind = SynthKind::ProximityBiased;
        else throw Error(Err::SpecInvalid, "unknown generator kind '" + val + "'");
      } else if (key == "n") spec.n = std::stoull(val);
      else if (key == "seed") spec.seed = std::stoull(val);
      else if (key == "classes") spec.n_classes = std::stoull(val);
      else if (key == "features") spec.n_features = std::stoull(val);
      else if (key == "sigma") spec.sigma = std::stod(val);
      else if (key == "mean_scale") spec.mean_scale = std::stod(val);
      else if (key == "t_corrupt") spec.t_corrupt = std::stod(val);
      else if (key == "local_bias") spec.local_bias = std::stod(val);
      else if (key == "bias_axis") spec.bias_axis = std::stoull(val);
      else if (key == "region_sizes" || key == "priors") {
        std::vector<double> vals;
        std::stringstream ss(val);
        std::string tok;
        while (std::getline(ss, tok, ',')) vals.push_back(std::stod(trim(tok)));
        if (key == "priors") spec.priors = vals;
        else {
          spec.region_sizes.clear();
          for (double v : vals) spec.region_sizes.push_back(static_cast<std::size_t>(v));
        }
      } else {
        throw Error(Err::SpecInvalid, "unknown key '" + key + "'");
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      throw Error(Err::SpecInvalid, "bad value for '" + key + "' at line " + std::to_string(lineno));
    }
  }
  spec.validate();
  return spec;
}

}  // namespace lcal
