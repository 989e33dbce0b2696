#include "lcal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>

#include "lcal/error.hpp"
#include "lcal/numerics.hpp"
#include "lcal/parallel.hpp"

namespace lcal {

std::string format_sig(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string MetricConfig::fingerprint() const {
  std::ostringstream os;
  os << "bins=" << ece_scheme.m_bins << ";lce_bins=" << lce_scheme.m_bins
     << ";min_bin=" << lce_scheme.min_bin_size << ";gamma=" << format_sig(kernel.bandwidth, 12)
     << ";exclude_self=" << (kernel.exclude_self ? 1 : 0)
     << ";variant=" << (variant == LceVariant::ClasswiseScalar ? "classwise" : "vector")
     << ";vector_bins_by=argmax_conf"
     << ";priors=" << prior_source;
  return os.str();
}

std::string MetricReport::to_json() const {
  std::ostringstream os;
  os << "{\"ece\":" << format_sig(ece, 12) << ",\"ecce\":" << format_sig(ecce, 12)
     << ",\"lce\":" << format_sig(lce, 12) << ",\"mlce\":" << format_sig(mlce, 12)
     << ",\"nll\":" << format_sig(nll, 12) << ",\"acc\":" << format_sig(accuracy, 12)
     << ",\"per_class_ece\":[";
  for (std::size_t c = 0; c < per_class_ece.size(); ++c) {
    if (c) os << ",";
    os << format_sig(per_class_ece[c], 12);
  }
  os << "],\"config\":{\"fingerprint\":\"" << config.fingerprint() << "\"}}";
  return os.str();
}

double classwise_ece(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                     const BinningScheme& scheme, const std::vector<double>& priors) {
  BinStats st = assign_bins(probs, labels, scheme, priors);
  return generic_metric(st, Comparator{});
}

double classwise_ecce(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                      const BinningScheme& scheme, const std::vector<double>& priors) {
  BinStats st = assign_bins(probs, labels, scheme, priors);
  double acc = 0.0;
  for (std::size_t c = 0; c < st.n_classes; ++c) {
    // Signed pooled gap per retained bin, in ascending confidence order.
    double total = 0.0;
    for (std::size_t b = 0; b < st.m_bins; ++b)
      if (st.retained[c][b]) total += static_cast<double>(st.count[c][b]);
    if (total == 0.0) continue;
    double prefix_gap = 0.0;   // sum over bins <= b of sum_j (1{y=c} - f_c)
    double prefix_count = 0.0; // S_b over retained bins
    double inner = 0.0;
    for (std::size_t b = 0; b < st.m_bins; ++b) {
      if (!st.retained[c][b]) continue;
      double cnt = static_cast<double>(st.count[c][b]);
      prefix_gap += (st.freq[c][b] - st.conf[c][b]) * cnt;
      prefix_count += cnt;
      inner += (cnt / total) * std::abs(prefix_gap / prefix_count);
    }
    acc += st.class_weight[c] * inner;
  }
  return acc;
}

namespace {

std::size_t row_argmax(std::span<const double> row) {
  std::size_t arg = 0;
  for (std::size_t c = 1; c < row.size(); ++c)
    if (row[c] > row[arg]) arg = c;
  return arg;
}

// Bin memberships for the vector variant: rows grouped by the confidence of
// their argmax class.
std::vector<std::vector<std::size_t>> vector_bins(const ProbabilityMatrix& probs,
                                                  const BinningScheme& scheme) {
  std::vector<std::vector<std::size_t>> bins(scheme.m_bins);
  for (std::size_t i = 0; i < probs.probs.rows; ++i) {
    auto row = probs.probs.row(i);
    bins[equal_width_bin(row[row_argmax(row)], scheme.m_bins)].push_back(i);
  }
  return bins;
}

}  // namespace

LceResult lce_details(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                      const Matrix& features, const BinningScheme& scheme,
                      const KernelConfig& kernel, const std::vector<double>& priors,
                      LceVariant variant, bool collect_anchors) {
  const std::size_t n = probs.probs.rows;
  const std::size_t C = probs.probs.cols;
  if (features.rows != n || labels.size() != n)
    throw Error(Err::ShapeMismatch, "probs/features/labels row counts differ");

  LceResult res;
  res.n_rows = n;
  const std::size_t floor_size = std::max<std::size_t>(scheme.min_bin_size, 1);
  // Self-excluded anchors alone in their bin have no neighborhood; they are
  // skipped rather than scored.
  const bool skip_singletons = kernel.exclude_self;
  std::size_t skipped = 0;

  if (variant == LceVariant::ClasswiseScalar) {
    BinStats st = assign_bins(probs, labels, scheme, priors);
    bool any = false;
    double lce_total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<std::pair<const std::vector<std::size_t>*, std::size_t>> work;
      std::size_t anchors_c = 0;
      for (std::size_t b = 0; b < st.m_bins; ++b) {
        if (!st.retained[c][b]) continue;
        if (skip_singletons && st.members[c][b].size() < 2) {
          skipped += st.members[c][b].size();
          continue;
        }
        work.push_back({&st.members[c][b], b});
        anchors_c += st.members[c][b].size();
      }
      if (anchors_c == 0) continue;
      any = true;

      std::vector<LceAnchor> local(anchors_c);
      std::size_t cursor = 0;
      std::vector<std::size_t> offsets;
      for (const auto& [rows, b] : work) {
        offsets.push_back(cursor);
        cursor += rows->size();
      }
      for (std::size_t w = 0; w < work.size(); ++w) {
        const auto& rows = *work[w].first;
        const std::size_t b = work[w].second;
        const std::size_t off = offsets[w];
        parallel_for(rows.size(), [&](std::size_t t) {
          std::size_t i = rows[t];
          KernelWeights kw = kernel_weights(kernel, features, i, rows);
          double dev = 0.0, s2 = 0.0, wl1 = 0.0, theta_c = 0.0;
          for (std::size_t u = 0; u < kw.neighbors.size(); ++u) {
            std::size_t j = kw.neighbors[u];
            double wj = kw.weights[u];
            dev += wj * (probs.probs(j, c) - (labels[j] == c ? 1.0 : 0.0));
            theta_c += wj * (labels[j] == c ? 1.0 : 0.0);
            s2 += wj * wj;
            wl1 += wj * l1_distance(features.row(i), features.row(j));
          }
          local[off + t] = LceAnchor{i,   c,        b,  std::abs(dev), 1.0 / s2,
                                     wl1, std::abs(probs.probs(i, c) - theta_c)};
        });
      }
      double sum_dev = 0.0;
      for (const LceAnchor& a : local) {
        sum_dev += a.deviation;
        res.mlce = std::max(res.mlce, a.deviation);
      }
      lce_total += priors[c] * (sum_dev / static_cast<double>(anchors_c));
      if (collect_anchors)
        res.anchors.insert(res.anchors.end(), local.begin(), local.end());
    }
    if (!any) throw Error(Err::NoRetainedBins, "no class has a retained bin");
    if (skipped > 0)
      std::cerr << "warning: skipped " << skipped
                << " singleton-bin anchors with no usable neighborhood\n";
    res.lce = lce_total;
    return res;
  }

  // Vector variant: main-text formula, 1/C prefactor, bins by argmax-class
  // confidence, literal 1/n over the full row count.
  auto bins = vector_bins(probs, scheme);
  Matrix onehot = one_hot(labels, C);
  bool any = false;
  double sum_dev = 0.0;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const auto& rows = bins[b];
    if (rows.size() < floor_size) continue;
    if (skip_singletons && rows.size() < 2) {
      skipped += rows.size();
      continue;
    }
    any = true;
    std::vector<LceAnchor> local(rows.size());
    parallel_for(rows.size(), [&](std::size_t t) {
      std::size_t i = rows[t];
      KernelWeights kw = kernel_weights(kernel, features, i, rows);
      std::vector<double> vec(C, 0.0), theta(C, 0.0);
      double s2 = 0.0, wl1 = 0.0;
      for (std::size_t u = 0; u < kw.neighbors.size(); ++u) {
        std::size_t j = kw.neighbors[u];
        double wj = kw.weights[u];
        for (std::size_t c = 0; c < C; ++c) {
          vec[c] += wj * (probs.probs(j, c) - onehot(j, c));
          theta[c] += wj * onehot(j, c);
        }
        s2 += wj * wj;
        wl1 += wj * l1_distance(features.row(i), features.row(j));
      }
      double dev = 0.0, edev = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        dev += std::abs(vec[c]);
        edev += std::abs(probs.probs(i, c) - theta[c]);
      }
      local[t] = LceAnchor{i, row_argmax(probs.probs.row(i)), b, dev, 1.0 / s2, wl1, edev};
    });
    for (const LceAnchor& a : local) {
      sum_dev += a.deviation;
      res.mlce = std::max(res.mlce, a.deviation);
    }
    if (collect_anchors) res.anchors.insert(res.anchors.end(), local.begin(), local.end());
  }
  if (!any) throw Error(Err::NoRetainedBins, "no bin meets the minimum size");
  if (skipped > 0)
    std::cerr << "warning: skipped " << skipped
              << " singleton-bin anchors with no usable neighborhood\n";
  res.lce = sum_dev / (static_cast<double>(C) * static_cast<double>(n));
  return res;
}

double lce(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
           const Matrix& features, const BinningScheme& scheme, const KernelConfig& kernel,
           const std::vector<double>& priors, LceVariant variant) {
  return lce_details(probs, labels, features, scheme, kernel, priors, variant).lce;
}

double mlce(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
            const Matrix& features, const BinningScheme& scheme, const KernelConfig& kernel,
            const std::vector<double>& priors, LceVariant variant) {
  return lce_details(probs, labels, features, scheme, kernel, priors, variant).mlce;
}

double nll(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels) {
  double acc = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    acc -= std::log(std::max(probs.probs(i, labels[i]), 1e-12));
  return acc / static_cast<double>(labels.size());
}

double accuracy(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (row_argmax(probs.probs.row(i)) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double softmax_lipschitz(const Matrix& last_layer) {
  double best = 0.0;
  for (std::size_t j = 0; j < last_layer.cols; ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < last_layer.rows; ++i) col += std::abs(last_layer(i, j));
    best = std::max(best, col);
  }
  return best;
}

RhoCheck rho_check(const ProbabilityMatrix& probs, const Matrix& features,
                   const std::vector<std::uint32_t>& labels, const KernelConfig& kernel,
                   double rho, double lipschitz) {
  Matrix onehot = one_hot(labels, probs.probs.cols);
  Matrix theta = nw_estimate_all(kernel, features, onehot);
  RhoCheck rc;
  rc.rho = rho;
  rc.lipschitz = lipschitz;
  const double budget = lipschitz * rho;
  for (std::size_t i = 0; i < probs.probs.rows; ++i)
    for (std::size_t c = 0; c < probs.probs.cols; ++c) {
      double dev = std::abs(probs.probs(i, c) - theta(i, c));
      rc.max_abs_deviation = std::max(rc.max_abs_deviation, dev);
      if (dev > budget) ++rc.violations;
    }
  return rc;
}

MetricReport evaluate_all(const CalibrationDataset& d, const ProbabilityMatrix& probs,
                          const std::vector<double>& priors, const MetricConfig& cfg) {
  MetricReport r;
  r.config = cfg;
  BinStats st = assign_bins(probs, d.labels, cfg.ece_scheme, priors);
  r.ece = generic_metric(st, Comparator{});
  r.per_class_ece.assign(d.n_classes(), 0.0);
  for (std::size_t c = 0; c < d.n_classes(); ++c)
    for (std::size_t b = 0; b < st.m_bins; ++b)
      if (st.retained[c][b])
        r.per_class_ece[c] += st.bin_weight[c][b] * std::abs(st.freq[c][b] - st.conf[c][b]);
  r.ecce = classwise_ecce(probs, d.labels, cfg.ece_scheme, priors);
  LceResult lr = lce_details(probs, d.labels, d.features, cfg.lce_scheme, cfg.kernel, priors,
                             cfg.variant);
  r.lce = lr.lce;
  r.mlce = lr.mlce;
  r.nll = nll(probs, d.labels);
  r.accuracy = accuracy(probs, d.labels);
  return r;
}

Matrix one_hot(const std::vector<std::uint32_t>& labels, std::size_t n_classes) {
  Matrix out(labels.size(), n_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) out(i, labels[i]) = 1.0;
  return out;
}

}  // namespace lcal
