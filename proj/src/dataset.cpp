#include "lcal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "lcal/error.hpp"
#include "lcal/numerics.hpp"
#include "lcal/rng.hpp"

namespace lcal {

namespace {

constexpr char kMagic[8] = {'L', 'C', 'A', 'L', 'D', 'S', '0', '1'};

// Flags word of the LCDS header.
constexpr std::uint64_t kHasFeatures = 1ull << 0;
constexpr std::uint64_t kHasLogits = 1ull << 1;
constexpr std::uint64_t kHasLabels = 1ull << 2;
constexpr std::uint64_t kHasPriors = 1ull << 3;

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}
void put_f64(std::string& buf, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) {
    if (pos + n > buf.size())
      throw Error(Err::TruncatedFile,
                  "need " + std::to_string(n) + " bytes at offset " + std::to_string(pos));
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
};

CalibrationDataset load_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Err::IoFailure, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();

  if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
    throw Error(Err::MagicMismatch, "bad magic at offset 0 in " + path);

  Reader r{buf, 8};
  std::uint64_t n = r.u64();
  std::uint64_t m = r.u64();
  std::uint64_t C = r.u64();
  std::uint64_t flags = r.u64();

  CalibrationDataset d;
  d.features = Matrix(n, m);
  d.logits = Matrix(n, static_cast<std::size_t>(C));
  if (flags & kHasFeatures) {
    for (std::uint64_t i = 0; i < n; ++i)
      for (std::uint64_t j = 0; j < m; ++j) {
        double v = static_cast<double>(r.f32());
        if (!std::isfinite(v))
          throw Error(Err::NonFiniteValue, "feature row " + std::to_string(i));
        d.features(i, j) = v;
      }
  }
  if (flags & kHasLogits) {
    for (std::uint64_t i = 0; i < n; ++i)
      for (std::uint64_t j = 0; j < C; ++j) {
        double v = static_cast<double>(r.f32());
        if (!std::isfinite(v)) throw Error(Err::NonFiniteValue, "logit row " + std::to_string(i));
        d.logits(i, j) = v;
      }
  }
  if (flags & kHasLabels) {
    d.labels.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
      std::uint32_t lab = r.u32();
      if (lab >= C)
        throw Error(Err::LabelOutOfRange,
                    "label " + std::to_string(lab) + " at row " + std::to_string(i));
      d.labels[i] = lab;
    }
  }
  if (flags & kHasPriors) {
    d.priors.resize(C);
    for (std::uint64_t c = 0; c < C; ++c) d.priors[c] = r.f64();
  } else {
    d.priors = priors_from_labels(d.labels, C);
  }
  d.validate();
  return d;
}

void save_binary(const CalibrationDataset& d, const std::string& path) {
  std::string buf;
  buf.append(kMagic, 8);
  put_u64(buf, d.n());
  put_u64(buf, d.m());
  put_u64(buf, d.n_classes());
  put_u64(buf, kHasFeatures | kHasLogits | kHasLabels | kHasPriors);
  for (std::size_t i = 0; i < d.n(); ++i)
    for (std::size_t j = 0; j < d.m(); ++j) put_f32(buf, static_cast<float>(d.features(i, j)));
  for (std::size_t i = 0; i < d.n(); ++i)
    for (std::size_t j = 0; j < d.n_classes(); ++j)
      put_f32(buf, static_cast<float>(d.logits(i, j)));
  for (std::uint32_t lab : d.labels) put_u32(buf, lab);
  for (double p : d.priors) put_f64(buf, p);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Err::IoFailure, "cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error(Err::IoFailure, "short write to " + path);
}

CalibrationDataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Err::IoFailure, "cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw Error(Err::TruncatedFile, "missing csv header");

  std::size_t m = 0, C = 0;
  {
    std::stringstream hs(header);
    std::string col;
    bool saw_label = false;
    while (std::getline(hs, col, ',')) {
      if (!col.empty() && col.back() == '\r') col.pop_back();
      if (col.rfind("f", 0) == 0 && col.size() > 1 && std::isdigit(static_cast<unsigned char>(col[1])))
        ++m;
      else if (col.rfind("l", 0) == 0 && col.size() > 1 &&
               std::isdigit(static_cast<unsigned char>(col[1])))
        ++C;
      else if (col == "label")
        saw_label = true;
      else
        throw Error(Err::MagicMismatch, "unexpected csv column '" + col + "'");
    }
    if (!saw_label || C < 2) throw Error(Err::MagicMismatch, "csv header lacks l*/label columns");
  }

  std::vector<double> feats, logs;
  std::vector<std::uint32_t> labels;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(Err::NonFiniteValue, "unparsable cell at row " + std::to_string(row));
      }
    }
    if (vals.size() != m + C + 1)
      throw Error(Err::TruncatedFile, "row " + std::to_string(row) + " has " +
                                          std::to_string(vals.size()) + " cells, want " +
                                          std::to_string(m + C + 1));
    for (std::size_t j = 0; j < m + C; ++j)
      if (!std::isfinite(vals[j]))
        throw Error(Err::NonFiniteValue, "row " + std::to_string(row));
    double lab = vals.back();
    if (lab < 0 || lab >= static_cast<double>(C) || lab != std::floor(lab))
      throw Error(Err::LabelOutOfRange, "row " + std::to_string(row));
    feats.insert(feats.end(), vals.begin(), vals.begin() + m);
    logs.insert(logs.end(), vals.begin() + m, vals.begin() + m + C);
    labels.push_back(static_cast<std::uint32_t>(lab));
    ++row;
  }
  if (row == 0) throw Error(Err::RejectedEmptyDataset, "csv has no data rows");

  CalibrationDataset d;
  d.features = Matrix(row, m);
  d.features.data = std::move(feats);
  d.logits = Matrix(row, C);
  d.logits.data = std::move(logs);
  d.labels = std::move(labels);
  d.priors = priors_from_labels(d.labels, C);
  d.validate();
  return d;
}

void save_csv(const CalibrationDataset& d, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Err::IoFailure, "cannot open " + path + " for writing");
  for (std::size_t j = 0; j < d.m(); ++j) out << "f" << j << ",";
  for (std::size_t j = 0; j < d.n_classes(); ++j) out << "l" << j << ",";
  out << "label\n";
  char cell[64];
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t j = 0; j < d.m(); ++j) {
      std::snprintf(cell, sizeof cell, "%.9g,", d.features(i, j));
      out << cell;
    }
    for (std::size_t j = 0; j < d.n_classes(); ++j) {
      std::snprintf(cell, sizeof cell, "%.9g,", d.logits(i, j));
      out << cell;
    }
    out << d.labels[i] << "\n";
  }
  if (!out) throw Error(Err::IoFailure, "short write to " + path);
}

}  // namespace

void CalibrationDataset::validate() const {
  const std::size_t N = n(), C = n_classes();
  if (N < 1) throw Error(Err::RejectedEmptyDataset, "dataset has no rows");
  if (C < 2) throw Error(Err::ShapeMismatch, "dataset needs at least 2 classes");
  if (features.rows != N || logits.rows != N)
    throw Error(Err::ShapeMismatch, "feature/logit/label row counts differ");
  if (priors.size() != C) throw Error(Err::ShapeMismatch, "priors length != C");
  for (std::size_t i = 0; i < N; ++i)
    if (labels[i] >= C)
      throw Error(Err::LabelOutOfRange, "label at row " + std::to_string(i));
  for (double v : features.data)
    if (!std::isfinite(v)) throw Error(Err::NonFiniteValue, "features");
  for (double v : logits.data)
    if (!std::isfinite(v)) throw Error(Err::NonFiniteValue, "logits");
  double s = 0.0;
  for (double p : priors) {
    if (!(p >= 0.0)) throw Error(Err::NonFiniteValue, "negative prior");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error(Err::FractionSumInvalid, "priors do not sum to 1");
}

void ProbabilityMatrix::validate(double tol) const {
  for (std::size_t i = 0; i < probs.rows; ++i)
    if (!row_on_simplex(probs.row(i), tol))
      throw Error(Err::NonFiniteValue, "probability row " + std::to_string(i) + " off simplex");
}

std::vector<double> priors_from_labels(const std::vector<std::uint32_t>& labels,
                                       std::size_t n_classes) {
  std::vector<double> p(n_classes, 0.0);
  for (std::uint32_t lab : labels) p[lab] += 1.0;
  if (!labels.empty())
    for (double& v : p) v /= static_cast<double>(labels.size());
  return p;
}

CalibrationDataset load_dataset(const std::string& path, DatasetFormat format) {
  return format == DatasetFormat::Binary ? load_binary(path) : load_csv(path);
}

void save_dataset(const CalibrationDataset& d, const std::string& path, DatasetFormat format) {
  if (d.n() == 0) throw Error(Err::RejectedEmptyDataset, "refusing to save empty dataset");
  d.validate();
  if (format == DatasetFormat::Binary)
    save_binary(d, path);
  else
    save_csv(d, path);
}

std::vector<CalibrationDataset> split(const CalibrationDataset& d, const SplitSpec& spec) {
  if (spec.fractions.empty()) throw Error(Err::FractionSumInvalid, "no fractions");
  double fsum = 0.0;
  for (const auto& [name, f] : spec.fractions) {
    if (!(f > 0.0)) throw Error(Err::FractionSumInvalid, "fraction '" + name + "' must be > 0");
    fsum += f;
  }
  if (std::abs(fsum - 1.0) > 1e-12)
    throw Error(Err::FractionSumInvalid, "fractions sum to " + std::to_string(fsum));

  const std::size_t n = d.n();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(spec.seed);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(perm[i - 1], perm[j]);
  }

  // Floor sizes, then hand leftover rows to the largest remainders.
  const std::size_t k = spec.fractions.size();
  std::vector<std::size_t> sizes(k);
  std::vector<double> rem(k);
  std::size_t used = 0;
  for (std::size_t s = 0; s < k; ++s) {
    double exact = spec.fractions[s].second * static_cast<double>(n);
    sizes[s] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[s] = exact - static_cast<double>(sizes[s]);
    used += sizes[s];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t s = 0; used < n; ++s, ++used) sizes[order[s % k]] += 1;

  std::vector<CalibrationDataset> parts;
  parts.reserve(k);
  std::size_t offset = 0;
  for (std::size_t s = 0; s < k; ++s) {
    CalibrationDataset part;
    part.features = Matrix(sizes[s], d.m());
    part.logits = Matrix(sizes[s], d.n_classes());
    part.labels.resize(sizes[s]);
    for (std::size_t r = 0; r < sizes[s]; ++r) {
      std::size_t src = perm[offset + r];
      for (std::size_t j = 0; j < d.m(); ++j) part.features(r, j) = d.features(src, j);
      for (std::size_t j = 0; j < d.n_classes(); ++j) part.logits(r, j) = d.logits(src, j);
      part.labels[r] = d.labels[src];
    }
    part.priors = priors_from_labels(part.labels, d.n_classes());
    offset += sizes[s];
    parts.push_back(std::move(part));
  }
  return parts;
}

CalibrationDataset replace_representation(const CalibrationDataset& d, const Matrix& new_features,
                                          const Matrix& new_logits) {
  if (new_features.rows != d.n() || new_logits.rows != d.n())
    throw Error(Err::ShapeMismatch, "replacement row count differs from dataset");
  if (new_logits.cols != d.n_classes())
    throw Error(Err::ShapeMismatch, "replacement class count differs from dataset");
  CalibrationDataset out;
  out.features = new_features;
  out.logits = new_logits;
  out.labels = d.labels;
  out.priors = d.priors;
  return out;
}

ProbabilityMatrix dataset_probs(const CalibrationDataset& d) {
  ProbabilityMatrix pm;
  pm.probs = Matrix(d.n(), d.n_classes());
  for (std::size_t i = 0; i < d.n(); ++i) softmax_inplace(d.logits.row(i), pm.probs.row(i));
  return pm;
}

}  // namespace lcal
