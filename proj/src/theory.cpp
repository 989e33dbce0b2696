#include "lcal/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "lcal/error.hpp"
#include "lcal/metrics.hpp"
#include "lcal/parallel.hpp"

namespace lcal {

std::string BoundReport::to_json() const {
  std::ostringstream os;
  os << "{\"theorem\":\"" << theorem << "\",\"observed\":" << format_sig(observed, 12)
     << ",\"bound\":" << format_sig(bound, 12) << ",\"eps\":" << format_sig(eps_term, 12)
     << ",\"variance\":" << format_sig(variance_term, 12)
     << ",\"bias\":" << format_sig(bias_term, 12) << ",\"delta\":" << format_sig(delta, 12)
     << ",\"holds\":" << (holds ? "true" : "false") << ",\"seed\":" << seed << ",\"n\":" << n
     << ",\"C\":" << n_classes << ",\"m_bins\":" << m_bins
     << ",\"gamma\":" << format_sig(gamma, 12) << "}";
  return os.str();
}

std::vector<BoundReport> verify_theorem2(const Thm2Params& p) {
  if (!(p.delta > 0.0 && p.delta <= 1.0)) throw Error(Err::InvalidDelta, "delta in (0,1]");
  std::vector<BoundReport> reports;
  reports.reserve(p.trials);

  SynthSpec base;
  base.kind = SynthKind::GaussianMixture;
  base.n_classes = p.n_classes;
  base.n_features = 8;
  base.sigma = 10.0;
  base.mean_scale = 21.5;

  Rng trial_seeds(p.seed);
  for (std::size_t t = 0; t < p.trials; ++t) {
    std::uint64_t s_eval = trial_seeds.next_u64();
    std::uint64_t s_est = trial_seeds.next_u64();
    std::uint64_t s_pert = trial_seeds.next_u64();

    SynthSpec eval_spec = base;
    eval_spec.n = p.n;
    eval_spec.seed = s_eval;
    SynthResult eval = generate(eval_spec);

    SynthSpec est_spec = base;
    est_spec.n = p.n * p.est_factor;
    est_spec.seed = s_est;
    SynthResult est = generate(est_spec);

    // Kernel estimates conditioned on a disjoint draw.
    KernelConfig kc{p.gamma, false};
    Matrix theta = nw_estimate_cross(kc, eval.dataset.features, est.dataset.features,
                                     one_hot(est.dataset.labels, p.n_classes));

    Rng prng(s_pert);
    PerturbResult pr = perturb_simplex_rows(theta, p.eps, PerturbMode::UniformL1, prng);

    ProbabilityMatrix phat;
    phat.probs = std::move(pr.probs);
    BinningScheme scheme{BinMode::ClasswiseEqualWidth, p.m_bins, p.min_bin_size};
    BinStats stats = assign_bins(phat, eval.dataset.labels, scheme, eval.dataset.priors);

    BoundReport r;
    r.theorem = "thm2";
    r.observed = generic_metric(stats, Comparator{});
    r.eps_term = pr.realized_max;
    r.bound = theorem2_bound(stats, pr.realized_max, p.delta, 1.0);
    r.variance_term = r.bound - pr.realized_max;
    r.delta = p.delta;
    r.holds = r.observed <= r.bound;
    r.seed = s_eval;
    r.n = p.n;
    r.n_classes = p.n_classes;
    r.m_bins = p.m_bins;
    r.gamma = p.gamma;
    reports.push_back(r);
  }
  return reports;
}

BoundReport verify_theorem3(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                            std::optional<double> eps_hat, const BinningScheme& scheme,
                            const KernelConfig& kernel, double delta) {
  if (!(delta > 0.0 && delta <= 1.0)) throw Error(Err::InvalidDelta, "delta in (0,1]");
  LceResult res = lce_details(probs, d.labels, d.features, scheme, kernel, d.priors,
                              LceVariant::VectorL1, true);
  const double n = static_cast<double>(res.n_rows);
  double variance = 0.0, bias = 0.0, eps_obs = 0.0;
  for (const LceAnchor& a : res.anchors) {
    variance += std::sqrt(2.0 * std::log(n / delta) / a.n_eff);
    bias += a.weighted_l1;  // L = 1: kernel runs on the carried representation
    eps_obs = std::max(eps_obs, a.eps_dev);
  }
  variance /= n;
  bias /= n;
  double eps = eps_hat.value_or(eps_obs);
  double k = *std::max_element(d.priors.begin(), d.priors.end());

  BoundReport r;
  r.theorem = "thm3";
  r.observed = res.lce;
  r.eps_term = eps;
  r.variance_term = variance;
  r.bias_term = bias;
  r.bound = k * (eps + variance + bias);
  r.delta = delta;
  r.holds = r.observed <= r.bound;
  r.n = d.n();
  r.n_classes = d.n_classes();
  r.m_bins = scheme.m_bins;
  r.gamma = kernel.bandwidth;
  return r;
}

std::vector<double> proximity_scores(const Matrix& features, std::size_t k) {
  const std::size_t n = features.rows;
  if (k < 1 || k >= n) throw Error(Err::KTooLarge, "need 1 <= k < n");
  std::vector<double> scores(n, 0.0);
  parallel_for(n, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      dist.emplace_back(std::sqrt(squared_distance(features.row(i), features.row(j))), j);
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double acc = 0.0;
    for (std::size_t t = 0; t < k; ++t) acc += dist[t].first;
    scores[i] = acc / static_cast<double>(k);
  });
  return scores;
}

std::string ProximityReport::to_json() const {
  std::ostringstream os;
  os << "{\"theorem\":\"thm5\",\"k\":" << k << ",\"delta\":" << format_sig(delta, 12)
     << ",\"eps\":" << format_sig(eps_hat, 12) << ",\"skipped_bins\":" << skipped_bins
     << ",\"pairs\":[";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const ProximityPair& p = pairs[i];
    if (i) os << ",";
    os << "{\"bin\":" << p.bin << ",\"s1\":" << p.size_dense << ",\"s2\":" << p.size_sparse
       << ",\"freq_gap\":" << format_sig(p.freq_gap, 12)
       << ",\"conf_gap\":" << format_sig(p.conf_gap, 12)
       << ",\"hoeffding\":" << format_sig(p.hoeffding, 12)
       << ",\"holds\":" << (p.holds ? "true" : "false") << "}";
  }
  os << "]}";
  return os.str();
}

ProximityReport verify_theorem5(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                                double eps_hat, std::size_t k, double delta,
                                const BinningScheme& scheme) {
  if (!(delta > 0.0 && delta <= 1.0)) throw Error(Err::InvalidDelta, "delta in (0,1]");
  const std::size_t n = d.n(), C = d.n_classes();
  ProximityReport rep;
  rep.k = k;
  rep.delta = delta;
  rep.eps_hat = eps_hat;
  rep.scores = proximity_scores(d.features, k);

  // Score-based bins keyed by the confidence of the argmax class.
  std::vector<std::vector<std::size_t>> bins(scheme.m_bins);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = probs.probs.row(i);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < C; ++c)
      if (row[c] > row[arg]) arg = c;
    bins[equal_width_bin(row[arg], scheme.m_bins)].push_back(i);
  }

  Matrix onehot = one_hot(d.labels, C);
  for (std::size_t b = 0; b < bins.size(); ++b) {
    auto& rows = bins[b];
    if (rows.size() < 20) {
      if (!rows.empty()) ++rep.skipped_bins;
      continue;
    }
    std::stable_sort(rows.begin(), rows.end(), [&](std::size_t x, std::size_t y) {
      return rep.scores[x] < rep.scores[y];
    });
    std::size_t half = rows.size() / 2;
    std::vector<std::size_t> s1(rows.begin(), rows.begin() + half);       // dense
    std::vector<std::size_t> s2(rows.begin() + half, rows.end());        // sparse
    if (s1.size() < 10 || s2.size() < 10) {
      ++rep.skipped_bins;
      continue;
    }
    auto mean_rows = [&](const std::vector<std::size_t>& set, const Matrix& src) {
      std::vector<double> out(C, 0.0);
      for (std::size_t i : set)
        for (std::size_t c = 0; c < C; ++c) out[c] += src(i, c);
      for (double& v : out) v /= static_cast<double>(set.size());
      return out;
    };
    std::vector<double> f1 = mean_rows(s1, onehot), f2 = mean_rows(s2, onehot);
    std::vector<double> c1 = mean_rows(s1, probs.probs), c2 = mean_rows(s2, probs.probs);

    ProximityPair pr;
    pr.bin = b;
    pr.size_dense = s1.size();
    pr.size_sparse = s2.size();
    pr.freq_gap = l1_distance(f1, f2);
    pr.conf_gap = l1_distance(c1, c2);
    pr.hoeffding = std::sqrt(2.0 * std::log(4.0 * static_cast<double>(C) / delta) /
                             static_cast<double>(std::min(s1.size(), s2.size())));
    pr.eps2 = 2.0 * eps_hat;
    pr.holds = pr.freq_gap <= pr.eps2 + pr.hoeffding + pr.conf_gap;
    rep.pairs.push_back(pr);
  }
  return rep;
}

double estimate_local_eps(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                          const KernelConfig& kernel) {
  Matrix theta = nw_estimate_all(kernel, d.features, one_hot(d.labels, d.n_classes()));
  double eps = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i)
    eps = std::max(eps, l1_distance(probs.probs.row(i), theta.row(i)));
  return eps;
}

double estimate_local_eps_dense(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                                const KernelConfig& kernel, std::size_t k) {
  std::vector<double> pi = proximity_scores(d.features, k);
  std::vector<double> sorted = pi;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  double median = sorted[sorted.size() / 2];
  Matrix theta = nw_estimate_all(kernel, d.features, one_hot(d.labels, d.n_classes()));
  double eps = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i)
    if (pi[i] <= median)
      eps = std::max(eps, l1_distance(probs.probs.row(i), theta.row(i)));
  return eps;
}

namespace {

struct ToyTableRow {
  char name;
  double density;
  int p100;  // predicted probability in hundredths
  int y100;  // empirical frequency in hundredths
};
constexpr ToyTableRow kToyTable[6] = {
    {'A', 0.35, 90, 95}, {'B', 0.075, 60, 55}, {'C', 0.075, 60, 65},
    {'D', 0.075, 40, 35}, {'E', 0.075, 40, 45}, {'F', 0.35, 10, 5},
};

long long igcd(long long a, long long b) {
  while (b) {
    long long t = a % b;
    a = b;
    b = t;
  }
  return a < 0 ? -a : a;
}

}  // namespace

std::string ToyReport::to_json() const {
  std::ostringstream os;
  os << "{\"p_cal\":" << format_sig(p_cal_focus, 15) << ",\"regions\":[";
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const ToyRegionReport& r = regions[i];
    if (i) os << ",";
    os << "{\"name\":\"" << r.name << "\",\"size\":" << r.size
       << ",\"density\":" << format_sig(r.density, 12) << ",\"p\":" << format_sig(r.predicted, 12)
       << ",\"y\":" << format_sig(r.frequency, 12) << ",\"p_cal\":" << format_sig(r.p_cal, 15)
       << ",\"residual\":" << format_sig(r.residual, 15) << "}";
  }
  os << "]}";
  return os.str();
}

ToyReport toy_example(const std::vector<std::size_t>& sizes) {
  if (sizes.size() != 6) throw Error(Err::SpecInvalid, "toy example needs 6 region sizes");
  std::size_t total = 0;
  for (std::size_t s : sizes) {
    if (s > 1000000) throw Error(Err::SpecInvalid, "region sizes must be <= 1e6");
    total += s;
  }
  if (total == 0) throw Error(Err::SpecInvalid, "all regions empty");

  ToyReport rep;
  rep.regions.resize(6);
  // Group regions by identical (p, density); the recalibrated value of a group
  // is the size-weighted mean of its empirical frequencies, kept as an exact
  // integer ratio: sum(size_r * y100_r) / (100 * sum(size_r)).
  for (std::size_t r = 0; r < 6; ++r) {
    long long num = 0, den_sz = 0;
    for (std::size_t s = 0; s < 6; ++s) {
      if (kToyTable[s].p100 != kToyTable[r].p100 || kToyTable[s].density != kToyTable[r].density)
        continue;
      num += static_cast<long long>(sizes[s]) * kToyTable[s].y100;
      den_sz += static_cast<long long>(sizes[s]);
    }
    if (den_sz == 0) {  // the whole (p, density) group is empty
      ToyRegionReport& out = rep.regions[r];
      out.name = kToyTable[r].name;
      out.size = 0;
      out.density = kToyTable[r].density;
      out.predicted = kToyTable[r].p100 / 100.0;
      out.frequency = kToyTable[r].y100 / 100.0;
      continue;
    }
    long long den = 100 * den_sz;
    long long g = igcd(num, den);
    if (g > 0) {
      num /= g;
      den /= g;
    }
    ToyRegionReport& out = rep.regions[r];
    out.name = kToyTable[r].name;
    out.size = sizes[r];
    out.density = kToyTable[r].density;
    out.predicted = kToyTable[r].p100 / 100.0;
    out.frequency = kToyTable[r].y100 / 100.0;
    out.p_cal = static_cast<double>(num) / static_cast<double>(den);
    // residual = num/den - y100/100, still exact in 64-bit integers
    long long rnum = 100 * num - static_cast<long long>(kToyTable[r].y100) * den;
    long long rden = 100 * den;
    long long rg = igcd(rnum, rden);
    if (rg > 0) {
      rnum /= rg;
      rden /= rg;
    }
    out.residual = static_cast<double>(rnum) / static_cast<double>(rden);
    if (kToyTable[r].p100 == 60) rep.p_cal_focus = out.p_cal;
  }
  return rep;
}

}  // namespace lcal
