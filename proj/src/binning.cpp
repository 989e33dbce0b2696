#include "lcal/binning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lcal/error.hpp"

namespace lcal {

double Comparator::operator()(double freq, double conf) const {
  switch (kind) {
    case Kind::AbsDiff:
      return std::abs(freq - conf);
  }
  return 0.0;
}

std::size_t equal_width_bin(double p, std::size_t m_bins) {
  if (p >= 1.0) return m_bins - 1;
  if (p < 0.0) return 0;
  std::size_t b = static_cast<std::size_t>(p * static_cast<double>(m_bins));
  return b >= m_bins ? m_bins - 1 : b;
}

BinStats assign_bins(const ProbabilityMatrix& probs, const std::vector<std::uint32_t>& labels,
                     const BinningScheme& scheme, const std::vector<double>& priors) {
  const std::size_t n = probs.probs.rows;
  const std::size_t C = probs.probs.cols;
  const std::size_t m = scheme.m_bins;
  if (m < 1) throw Error(Err::SpecInvalid, "m_bins must be >= 1");
  if (labels.size() != n) throw Error(Err::ShapeMismatch, "label count != probability rows");
  if (priors.size() != C) throw Error(Err::ShapeMismatch, "priors length != class count");

  BinStats st;
  st.m_bins = m;
  st.n_classes = C;
  st.n_rows = n;
  st.members.assign(C, std::vector<std::vector<std::size_t>>(m));
  st.freq.assign(C, std::vector<double>(m, 0.0));
  st.conf.assign(C, std::vector<double>(m, 0.0));
  st.count.assign(C, std::vector<std::size_t>(m, 0));
  st.retained.assign(C, std::vector<bool>(m, false));
  st.bin_weight.assign(C, std::vector<double>(m, 0.0));
  st.class_weight = priors;

  for (std::size_t c = 0; c < C; ++c) {
    if (scheme.mode == BinMode::ClasswiseEqualWidth) {
      for (std::size_t i = 0; i < n; ++i)
        st.members[c][equal_width_bin(probs.probs(i, c), m)].push_back(i);
    } else {
      // Equal frequency: contiguous groups of the confidence-sorted rows,
      // stable on (value, index) so ties are deterministic.
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return probs.probs(a, c) < probs.probs(b, c);
      });
      std::size_t base = n / m, extra = n % m, pos = 0;
      for (std::size_t b = 0; b < m; ++b) {
        std::size_t sz = base + (b < extra ? 1 : 0);
        for (std::size_t t = 0; t < sz; ++t) st.members[c][b].push_back(order[pos++]);
        std::sort(st.members[c][b].begin(), st.members[c][b].end());
      }
    }

    const std::size_t floor_size = std::max<std::size_t>(scheme.min_bin_size, 1);
    double total_retained = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
      const auto& rows = st.members[c][b];
      st.count[c][b] = rows.size();
      if (rows.size() < floor_size) continue;
      st.retained[c][b] = true;
      double fsum = 0.0, csum = 0.0;
      for (std::size_t i : rows) {
        fsum += labels[i] == c ? 1.0 : 0.0;
        csum += probs.probs(i, c);
      }
      st.freq[c][b] = fsum / static_cast<double>(rows.size());
      st.conf[c][b] = csum / static_cast<double>(rows.size());
      total_retained += static_cast<double>(rows.size());
    }
    // Dropped bins are excluded from the weight normalization.
    if (total_retained > 0.0)
      for (std::size_t b = 0; b < m; ++b)
        if (st.retained[c][b])
          st.bin_weight[c][b] = static_cast<double>(st.count[c][b]) / total_retained;
  }

  bool any = false;
  for (std::size_t c = 0; c < C && !any; ++c)
    for (std::size_t b = 0; b < m; ++b)
      if (st.retained[c][b]) {
        any = true;
        break;
      }
  if (!any) throw Error(Err::AllBinsEmpty, "no bin meets the minimum size");
  return st;
}

double generic_metric(const BinStats& stats, const Comparator& cmp) {
  double acc = 0.0;
  for (std::size_t c = 0; c < stats.n_classes; ++c) {
    double inner = 0.0;
    for (std::size_t b = 0; b < stats.m_bins; ++b)
      if (stats.retained[c][b])
        inner += stats.bin_weight[c][b] * cmp(stats.freq[c][b], stats.conf[c][b]);
    acc += stats.class_weight[c] * inner;
  }
  return acc;
}

double theorem2_bound(const BinStats& stats, double eps, double delta, double lipschitz) {
  if (!(delta > 0.0 && delta <= 1.0)) throw Error(Err::InvalidDelta, "delta must be in (0,1]");
  if (eps < 0.0) throw Error(Err::SpecInvalid, "eps must be >= 0");
  const double logterm = std::log(2.0 * static_cast<double>(stats.n_classes) *
                                  static_cast<double>(stats.m_bins) / delta);
  double hoeffding = 0.0;
  for (std::size_t b = 0; b < stats.m_bins; ++b) {
    double wbar = 0.0;
    std::size_t psi = 0;
    bool have = false;
    for (std::size_t c = 0; c < stats.n_classes; ++c) {
      if (!stats.retained[c][b]) continue;
      wbar += stats.class_weight[c] * stats.bin_weight[c][b];
      psi = have ? std::min(psi, stats.count[c][b]) : stats.count[c][b];
      have = true;
    }
    if (!have) continue;
    hoeffding += wbar * std::sqrt(logterm / (2.0 * static_cast<double>(psi)));
  }
  return lipschitz * (eps + hoeffding);
}

}  // namespace lcal
