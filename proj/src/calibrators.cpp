#include "lcal/calibrators.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "lcal/error.hpp"
#include "lcal/metrics.hpp"
#include "lcal/numerics.hpp"
#include "lcal/rng.hpp"

namespace lcal {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double dirichlet_nll(const Matrix& logp, const std::vector<std::uint32_t>& labels,
                     const std::vector<std::size_t>& rows, const Matrix& w,
                     const std::vector<double>& b) {
  const std::size_t C = logp.cols;
  std::vector<double> z(C), q(C);
  double acc = 0.0;
  for (std::size_t r : rows) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = b[c];
      for (std::size_t k = 0; k < C; ++k) s += w(c, k) * logp(r, k);
      z[c] = s;
    }
    softmax_inplace(z, q);
    acc -= std::log(std::max(q[labels[r]], 1e-12));
  }
  return acc / static_cast<double>(rows.size());
}

}  // namespace

std::string Calibrator::method() const {
  switch (model.index()) {
    case 0: return "ts";
    case 1: return "platt";
    case 2: return "isotonic";
    case 3: return "dirichlet";
  }
  return "?";
}

std::string Calibrator::to_json() const {
  nlohmann::json j;
  j["method"] = method();
  j["C"] = n_classes;
  j["fingerprint"] = fingerprint;
  nlohmann::json p;
  if (const auto* ts = std::get_if<TemperatureModel>(&model)) {
    p["t"] = ts->t;
  } else if (const auto* pl = std::get_if<PlattModel>(&model)) {
    p["a"] = pl->a;
    p["b"] = pl->b;
    p["variant"] = "one_vs_rest_sigmoid_renorm";
  } else if (const auto* iso = std::get_if<IsotonicModel>(&model)) {
    p["knots"] = iso->knots;
    p["values"] = iso->values;
  } else if (const auto* dc = std::get_if<DirichletModel>(&model)) {
    p["w"] = dc->w.data;
    p["b"] = dc->b;
  }
  j["params"] = p;
  return j.dump();
}

Calibrator Calibrator::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Calibrator cal;
  cal.n_classes = j.at("C").get<std::size_t>();
  cal.fingerprint = j.value("fingerprint", "");
  const std::string method = j.at("method").get<std::string>();
  const nlohmann::json& p = j.at("params");
  if (method == "ts") {
    cal.model = TemperatureModel{p.at("t").get<double>()};
  } else if (method == "platt") {
    PlattModel pl;
    pl.a = p.at("a").get<std::vector<double>>();
    pl.b = p.at("b").get<std::vector<double>>();
    cal.model = std::move(pl);
  } else if (method == "isotonic") {
    IsotonicModel iso;
    iso.knots = p.at("knots").get<std::vector<std::vector<double>>>();
    iso.values = p.at("values").get<std::vector<std::vector<double>>>();
    cal.model = std::move(iso);
  } else if (method == "dirichlet") {
    DirichletModel dc;
    dc.b = p.at("b").get<std::vector<double>>();
    dc.w = Matrix(cal.n_classes, cal.n_classes);
    dc.w.data = p.at("w").get<std::vector<double>>();
    if (dc.w.data.size() != cal.n_classes * cal.n_classes)
      throw Error(Err::ShapeMismatch, "dirichlet weight matrix size");
    cal.model = std::move(dc);
  } else {
    throw Error(Err::SpecInvalid, "unknown calibrator method '" + method + "'");
  }
  return cal;
}

double temperature_nll(const CalibrationDataset& d, double t) {
  const std::size_t C = d.n_classes();
  std::vector<double> z(C), q(C);
  double acc = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    for (std::size_t c = 0; c < C; ++c) z[c] = d.logits(i, c) / t;
    softmax_inplace(z, q);
    acc -= std::log(std::max(q[d.labels[i]], 1e-12));
  }
  return acc / static_cast<double>(d.n());
}

Calibrator fit_temperature(const CalibrationDataset& cal) {
  cal.validate();
  const double lo = 0.05, hi = 20.0;
  auto obj = [&](double t) { return temperature_nll(cal, t); };

  // Coarse scan first: locates the basin and guards the unimodality
  // assumption before golden section refines it.
  const int grid = 50;
  double best_t = 1.0, best_v = obj(1.0);
  double step = (hi - lo) / (grid - 1);
  for (int g = 0; g < grid; ++g) {
    double t = lo + step * g;
    double v = obj(t);
    if (v < best_v) {
      best_v = v;
      best_t = t;
    }
  }
  double a = std::max(lo, best_t - step), b = std::min(hi, best_t + step);
  double t_star = golden_section_min(obj, a, b, 1e-5);
  if (obj(t_star) > best_v) t_star = best_t;

  Calibrator out;
  out.model = TemperatureModel{t_star};
  out.n_classes = cal.n_classes();
  out.fingerprint = "ts;bracket=[0.05,20];tol=1e-5";
  return out;
}

Calibrator fit_platt(const CalibrationDataset& cal) {
  cal.validate();
  const std::size_t C = cal.n_classes(), n = cal.n();
  PlattModel pl;
  pl.a.assign(C, 1.0);
  pl.b.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    bool present = false;
    for (std::uint32_t lab : cal.labels)
      if (lab == c) {
        present = true;
        break;
      }
    if (!present) {
      std::cerr << "warning: class " << c
                << " absent from calibration split, keeping identity platt parameters\n";
      continue;
    }
    std::vector<double> params = {1.0, 0.0};
    AdamState adam(2, 1e-2);
    for (int it = 0; it < 500; ++it) {
      double ga = 0.0, gb = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double z = cal.logits(i, c);
        double t = cal.labels[i] == c ? 1.0 : 0.0;
        double err = sigmoid(params[0] * z + params[1]) - t;
        ga += err * z;
        gb += err;
      }
      double g[2] = {ga / static_cast<double>(n), gb / static_cast<double>(n)};
      adam_step(adam, params, std::span<const double>(g, 2));
    }
    pl.a[c] = params[0];
    pl.b[c] = params[1];
  }
  Calibrator out;
  out.model = std::move(pl);
  out.n_classes = C;
  out.fingerprint = "platt;one_vs_rest_sigmoid_renorm;adam=500x1e-2";
  return out;
}

Calibrator fit_isotonic(const CalibrationDataset& cal) {
  cal.validate();
  const std::size_t C = cal.n_classes(), n = cal.n();
  ProbabilityMatrix probs = dataset_probs(cal);
  IsotonicModel iso;
  iso.knots.resize(C);
  iso.values.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    bool present = false;
    for (std::uint32_t lab : cal.labels)
      if (lab == c) {
        present = true;
        break;
      }
    if (!present)
      std::cerr << "warning: class " << c
                << " absent from calibration split, isotonic map degenerates to 0\n";

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return probs.probs(x, c) < probs.probs(y, c);
    });
    // Pool exact score ties before PAV so the fitted map is single-valued.
    std::vector<double> xs, ys, ws;
    for (std::size_t t = 0; t < n; ++t) {
      double s = probs.probs(order[t], c);
      double lab = cal.labels[order[t]] == c ? 1.0 : 0.0;
      if (!xs.empty() && xs.back() == s) {
        ys.back() = (ys.back() * ws.back() + lab) / (ws.back() + 1.0);
        ws.back() += 1.0;
      } else {
        xs.push_back(s);
        ys.push_back(lab);
        ws.push_back(1.0);
      }
    }
    iso.knots[c] = std::move(xs);
    iso.values[c] = pav_isotonic(ys, ws);
  }
  Calibrator out;
  out.model = std::move(iso);
  out.n_classes = C;
  out.fingerprint = "isotonic;pav;step=right_continuous;extrapolate=nearest_knot";
  return out;
}

Calibrator fit_dirichlet(const CalibrationDataset& cal, const FitConfig& cfg) {
  cal.validate();
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
    throw Error(Err::FractionSumInvalid, "validation fraction must lie in (0,1)");
  const std::size_t C = cal.n_classes(), n = cal.n();

  ProbabilityMatrix probs = dataset_probs(cal);
  Matrix logp(n, C);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c)
      logp(i, c) = std::log(std::max(probs.probs(i, c), 1e-12));

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(cfg.seed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                   std::llround(cfg.val_fraction * n)));
  if (n_val >= n) n_val = n - 1;
  std::vector<std::size_t> val_rows(perm.begin(), perm.begin() + n_val);
  std::vector<std::size_t> fit_rows(perm.begin() + n_val, perm.end());

  // Identity initialization: the map starts as a no-op on probabilities.
  Matrix w(C, C, 0.0);
  for (std::size_t c = 0; c < C; ++c) w(c, c) = 1.0;
  std::vector<double> b(C, 0.0);

  Matrix best_w = w;
  std::vector<double> best_b = b;
  double best_val = dirichlet_nll(logp, cal.labels, val_rows, w, b);

  std::vector<double> params(C * C + C);
  auto pack = [&]() {
    std::copy(w.data.begin(), w.data.end(), params.begin());
    std::copy(b.begin(), b.end(), params.begin() + C * C);
  };
  auto unpack = [&]() {
    std::copy(params.begin(), params.begin() + C * C, w.data.begin());
    std::copy(params.begin() + C * C, params.end(), b.begin());
  };
  pack();
  AdamState adam(params.size(), cfg.lr);
  std::vector<double> grads(params.size());
  std::vector<double> z(C), q(C);
  std::size_t stale = 0;
  const std::size_t eval_every = 10, patience = 20;

  for (std::size_t it = 0; it < cfg.max_steps; ++it) {
    std::fill(grads.begin(), grads.end(), 0.0);
    for (std::size_t r : fit_rows) {
      for (std::size_t c = 0; c < C; ++c) {
        double s = b[c];
        for (std::size_t k = 0; k < C; ++k) s += w(c, k) * logp(r, k);
        z[c] = s;
      }
      softmax_inplace(z, q);
      for (std::size_t c = 0; c < C; ++c) {
        double err = q[c] - (cal.labels[r] == c ? 1.0 : 0.0);
        for (std::size_t k = 0; k < C; ++k) grads[c * C + k] += err * logp(r, k);
        grads[C * C + c] += err;
      }
    }
    for (double& g : grads) g /= static_cast<double>(fit_rows.size());
    adam_step(adam, params, grads);
    unpack();

    if ((it + 1) % eval_every == 0) {
      double v = dirichlet_nll(logp, cal.labels, val_rows, w, b);
      if (v < best_val - 1e-12) {
        best_val = v;
        best_w = w;
        best_b = b;
        stale = 0;
      } else if (++stale >= patience) {
        break;
      }
    }
  }

  Calibrator out;
  out.model = DirichletModel{std::move(best_w), std::move(best_b)};
  out.n_classes = C;
  out.fingerprint = "dirichlet;logprob_inputs;adam<=2000x1e-2;early_stop=val";
  return out;
}

ProbabilityMatrix apply_calibrator(const Calibrator& cal, const CalibrationDataset& d) {
  if (cal.n_classes != d.n_classes())
    throw Error(Err::ClassCountMismatch, "calibrator expects " + std::to_string(cal.n_classes) +
                                             " classes, dataset has " +
                                             std::to_string(d.n_classes()));
  const std::size_t n = d.n(), C = d.n_classes();
  ProbabilityMatrix out;
  out.probs = Matrix(n, C);

  if (const auto* ts = std::get_if<TemperatureModel>(&cal.model)) {
    std::vector<double> z(C);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < C; ++c) z[c] = d.logits(i, c) / ts->t;
      softmax_inplace(z, out.probs.row(i));
    }
    return out;
  }

  if (const auto* pl = std::get_if<PlattModel>(&cal.model)) {
    for (std::size_t i = 0; i < n; ++i) {
      auto row = out.probs.row(i);
      for (std::size_t c = 0; c < C; ++c) row[c] = sigmoid(pl->a[c] * d.logits(i, c) + pl->b[c]);
      renormalize_row(row);
    }
    return out;
  }

  if (const auto* iso = std::get_if<IsotonicModel>(&cal.model)) {
    ProbabilityMatrix probs = dataset_probs(d);
    std::size_t zero_rows = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto row = out.probs.row(i);
      for (std::size_t c = 0; c < C; ++c) {
        const auto& k = iso->knots[c];
        const auto& v = iso->values[c];
        double s = probs.probs(i, c);
        if (k.empty()) {
          row[c] = 0.0;
          continue;
        }
        auto it = std::upper_bound(k.begin(), k.end(), s);
        row[c] = it == k.begin() ? v.front() : v[static_cast<std::size_t>(it - k.begin()) - 1];
      }
      double sum = std::accumulate(row.begin(), row.end(), 0.0);
      if (sum <= 0.0) ++zero_rows;
      renormalize_row(row);
    }
    if (zero_rows > 0)
      std::cerr << "warning: " << zero_rows << " rows mapped to all-zero by isotonic, "
                << "renormalized to uniform\n";
    return out;
  }

  const auto& dc = std::get<DirichletModel>(cal.model);
  ProbabilityMatrix probs = dataset_probs(d);
  std::vector<double> z(C);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = dc.b[c];
      for (std::size_t k = 0; k < C; ++k)
        s += dc.w(c, k) * std::log(std::max(probs.probs(i, k), 1e-12));
      z[c] = s;
    }
    softmax_inplace(z, out.probs.row(i));
  }
  return out;
}

}  // namespace lcal
