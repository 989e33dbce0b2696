#include "lcal/lcn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "lcal/error.hpp"
#include "lcal/kernels.hpp"
#include "lcal/metrics.hpp"
#include "lcal/synth.hpp"

namespace lcal {

namespace {

constexpr double kProbClip = 1e-12;
constexpr double kJsdFloor = 1e-12;

// In-batch kernel estimate machinery shared by loss and backward. Weights are
// self-excluded and shift-normalized; the shift cancels in the ratio so the
// gradient math can use the unshifted form.
struct BatchKernel {
  std::size_t n = 0;
  Matrix w;      // n x n, w(i,i) = 0
  Matrix theta;  // n x C
};

BatchKernel batch_kernel(const Matrix& phi, const Matrix& onehot, double gamma) {
  const std::size_t n = phi.rows;
  if (n < 2) throw Error(Err::NoNeighbors, "batch kernel estimates need at least 2 rows");
  BatchKernel bk;
  bk.n = n;
  bk.w = Matrix(n, n, 0.0);
  bk.theta = Matrix(n, onehot.cols, 0.0);
  const double inv = -1.0 / (2.0 * gamma * gamma);
  std::vector<double> logk(n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      logk[j] = inv * squared_distance(phi.row(i), phi.row(j));
      mx = std::max(mx, logk[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      bk.w(i, j) = std::exp(logk[j] - mx);
      sum += bk.w(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      bk.w(i, j) /= sum;
      for (std::size_t c = 0; c < onehot.cols; ++c)
        bk.theta(i, c) += bk.w(i, j) * onehot(j, c);
    }
  }
  return bk;
}

}  // namespace

LcnModel lcn_init(const LcnConfig& cfg, const Matrix& cal_features, std::size_t n_classes,
                  Rng& rng) {
  LcnModel m;
  m.in_dim = cal_features.cols;
  m.hidden_dim = cfg.hidden_dim;
  m.feat_dim = std::min({cfg.pca_dim, cal_features.cols, cal_features.rows - 1});
  m.n_classes = n_classes;
  m.dropout_rate = cfg.dropout_rate;
  m.pca = fit_pca(cal_features, m.feat_dim);

  m.w1.resize(m.hidden_dim * m.in_dim);
  m.b1.assign(m.hidden_dim, 0.0);
  double scale = std::sqrt(2.0 / static_cast<double>(m.in_dim));
  for (double& v : m.w1) v = scale * rng.normal();
  // Heads start at zero so the residual path reproduces (PCA features,
  // original softmax) at initialization.
  m.wf.assign(m.feat_dim * m.hidden_dim, 0.0);
  m.bf.assign(m.feat_dim, 0.0);
  m.wg.assign(m.n_classes * m.hidden_dim, 0.0);
  m.bg.assign(m.n_classes, 0.0);
  m.w_phi = 1.0;
  m.w_g = 1.0;
  m.b_phi = 0.01 * rng.normal();
  m.b_g = 0.01 * rng.normal();
  return m;
}

LcnForward lcn_forward(const LcnModel& model, const Matrix& features, const Matrix& logits,
                       bool train_mode, Rng rng) {
  const std::size_t n = features.rows;
  if (features.cols != model.in_dim || logits.cols != model.n_classes || logits.rows != n)
    throw Error(Err::ShapeMismatch, "lcn forward input shapes");
  const std::size_t H = model.hidden_dim, F = model.feat_dim, C = model.n_classes;

  LcnForward f;
  f.preact = Matrix(n, H);
  f.hidden = Matrix(n, H);
  f.pca_feat = pca_project(model.pca, features);
  f.phi = Matrix(n, F);
  f.glogits = Matrix(n, C);
  f.probs = Matrix(n, C);
  const bool drop = train_mode && model.dropout_rate > 0.0;
  if (drop) f.drop_scale.assign(n * H, 0.0);
  const double keep = 1.0 - model.dropout_rate;

  for (std::size_t i = 0; i < n; ++i) {
    auto x = features.row(i);
    for (std::size_t h = 0; h < H; ++h) {
      double a = model.b1[h];
      const double* wrow = model.w1.data() + h * model.in_dim;
      for (std::size_t j = 0; j < model.in_dim; ++j) a += wrow[j] * x[j];
      f.preact(i, h) = a;
      double v = a > 0.0 ? a : 0.0;
      if (drop) {
        double s = rng.uniform() < keep ? 1.0 / keep : 0.0;  // inverted dropout
        f.drop_scale[i * H + h] = s;
        v *= s;
      }
      f.hidden(i, h) = v;
    }
    for (std::size_t d = 0; d < F; ++d) {
      double v = model.bf[d] + model.w_phi * f.pca_feat(i, d) + model.b_phi;
      const double* wrow = model.wf.data() + d * H;
      for (std::size_t h = 0; h < H; ++h) v += wrow[h] * f.hidden(i, h);
      f.phi(i, d) = v;
    }
    for (std::size_t c = 0; c < C; ++c) {
      double v = model.bg[c] + model.w_g * logits(i, c) + model.b_g;
      const double* wrow = model.wg.data() + c * H;
      for (std::size_t h = 0; h < H; ++h) v += wrow[h] * f.hidden(i, h);
      f.glogits(i, c) = v;
    }
    softmax_inplace(f.glogits.row(i), f.probs.row(i));
  }
  return f;
}

LcnLoss lcn_loss(const Matrix& phi, const Matrix& probs, const Matrix& onehot, double lambda,
                 double gamma) {
  const std::size_t n = phi.rows, C = probs.cols;
  BatchKernel bk = batch_kernel(phi, onehot, gamma);
  LcnLoss out;
  for (std::size_t i = 0; i < n; ++i) {
    double jsd = jsd_distance(probs.row(i), bk.theta.row(i));
    double ce = 0.0;
    for (std::size_t c = 0; c < C; ++c)
      if (onehot(i, c) > 0.0) ce -= std::log(std::max(bk.theta(i, c), kProbClip));
    out.alignment += jsd;
    out.similarity += ce;
    out.total += jsd + lambda * ce;
  }
  out.alignment /= static_cast<double>(n);
  out.similarity /= static_cast<double>(n);
  out.total /= static_cast<double>(n);
  return out;
}

LcnLoss lcn_backward(const LcnModel& model, const Matrix& features, const Matrix& logits,
                     const std::vector<std::uint32_t>& labels, double lambda, double gamma,
                     bool train_mode, Rng rng, LcnGradients& grads) {
  const std::size_t n = features.rows, H = model.hidden_dim, F = model.feat_dim,
                    C = model.n_classes, M = model.in_dim;
  LcnForward f = lcn_forward(model, features, logits, train_mode, rng);
  Matrix onehot = one_hot(labels, C);
  BatchKernel bk = batch_kernel(f.phi, onehot, gamma);
  const double invn = 1.0 / static_cast<double>(n);

  LcnLoss loss;
  Matrix g_p(n, C, 0.0);      // dL/d probs
  Matrix g_theta(n, C, 0.0);  // dL/d theta
  for (std::size_t i = 0; i < n; ++i) {
    double j_acc = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      double p = f.probs(i, c), q = bk.theta(i, c);
      double m = 0.5 * (p + q);
      if (p > 0.0) j_acc += 0.5 * p * std::log(p / m);
      if (q > 0.0) j_acc += 0.5 * q * std::log(q / m);
    }
    j_acc = std::max(j_acc, 0.0);
    double d_jsd = std::sqrt(j_acc);
    double ce = -std::log(std::max(bk.theta(i, labels[i]), kProbClip));
    loss.alignment += d_jsd;
    loss.similarity += ce;
    loss.total += d_jsd + lambda * ce;

    if (d_jsd > kJsdFloor) {
      double outer = invn / (2.0 * d_jsd);
      for (std::size_t c = 0; c < C; ++c) {
        double p = f.probs(i, c), q = bk.theta(i, c);
        double m = 0.5 * (p + q);
        g_p(i, c) = outer * 0.5 * std::log(p / m);
        // theta components that are structurally zero (no in-batch neighbor
        // of that class) cannot move; their partial is dropped.
        if (q > 0.0) g_theta(i, c) = outer * 0.5 * std::log(q / m);
      }
    }
    if (bk.theta(i, labels[i]) > kProbClip)
      g_theta(i, labels[i]) += invn * lambda * (-1.0 / bk.theta(i, labels[i]));
  }
  loss.alignment *= invn;
  loss.similarity *= invn;
  loss.total *= invn;

  // Through the softmax into the residual logits.
  Matrix g_glog(n, C, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += g_p(i, c) * f.probs(i, c);
    for (std::size_t c = 0; c < C; ++c) g_glog(i, c) = f.probs(i, c) * (g_p(i, c) - dot);
  }

  // Through theta into phi: theta_i = sum_j w_ij y_j with w_ij softmax-like in
  // the log-kernel, so dL/dlogk_ij = w_ij (gq_i[y_j] - sum_u w_iu gq_i[y_u]).
  Matrix g_phi(n, F, 0.0);
  const double inv_g2 = 1.0 / (gamma * gamma);
  std::vector<double> row_dot(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) acc += bk.w(i, j) * g_theta(i, labels[j]);
    row_dot[i] = acc;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double t = bk.w(i, j) * (g_theta(i, labels[j]) - row_dot[i]);
      if (t == 0.0) continue;
      // logk_ij = -||phi_i - phi_j||^2 / (2 gamma^2)
      for (std::size_t d = 0; d < F; ++d) {
        double diff = (f.phi(i, d) - f.phi(j, d)) * inv_g2;
        g_phi(i, d) -= t * diff;
        g_phi(j, d) += t * diff;
      }
    }
  }

  grads.w1.assign(H * M, 0.0);
  grads.b1.assign(H, 0.0);
  grads.wf.assign(F * H, 0.0);
  grads.bf.assign(F, 0.0);
  grads.wg.assign(C * H, 0.0);
  grads.bg.assign(C, 0.0);
  grads.w_phi = grads.b_phi = grads.w_g = grads.b_g = 0.0;

  std::vector<double> g_hidden(H);
  const bool drop = train_mode && model.dropout_rate > 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(g_hidden.begin(), g_hidden.end(), 0.0);
    for (std::size_t d = 0; d < F; ++d) {
      double g = g_phi(i, d);
      if (g == 0.0) continue;
      grads.bf[d] += g;
      grads.w_phi += g * f.pca_feat(i, d);
      grads.b_phi += g;
      const double* wrow = model.wf.data() + d * H;
      double* grow = grads.wf.data() + d * H;
      for (std::size_t h = 0; h < H; ++h) {
        grow[h] += g * f.hidden(i, h);
        g_hidden[h] += g * wrow[h];
      }
    }
    for (std::size_t c = 0; c < C; ++c) {
      double g = g_glog(i, c);
      if (g == 0.0) continue;
      grads.bg[c] += g;
      grads.w_g += g * logits(i, c);
      grads.b_g += g;
      const double* wrow = model.wg.data() + c * H;
      double* grow = grads.wg.data() + c * H;
      for (std::size_t h = 0; h < H; ++h) {
        grow[h] += g * f.hidden(i, h);
        g_hidden[h] += g * wrow[h];
      }
    }
    auto x = features.row(i);
    for (std::size_t h = 0; h < H; ++h) {
      double g = g_hidden[h];
      if (drop) g *= f.drop_scale[i * H + h];
      if (f.preact(i, h) <= 0.0) continue;  // relu gate
      grads.b1[h] += g;
      double* grow = grads.w1.data() + h * M;
      for (std::size_t j = 0; j < M; ++j) grow[j] += g * x[j];
    }
  }
  return loss;
}

namespace {

// Flat parameter views keep the Adam state in one vector.
std::vector<double*> param_slots(LcnModel& m, std::vector<std::size_t>& sizes) {
  sizes = {m.w1.size(), m.b1.size(), m.wf.size(), m.bf.size(), m.wg.size(), m.bg.size(),
           1,           1,           1,           1};
  return {m.w1.data(), m.b1.data(), m.wf.data(), m.bf.data(), m.wg.data(),
          m.bg.data(), &m.w_phi,    &m.b_phi,    &m.w_g,      &m.b_g};
}

std::vector<const double*> grad_slots(const LcnGradients& g) {
  return {g.w1.data(), g.b1.data(), g.wf.data(), g.bf.data(), g.wg.data(),
          g.bg.data(), &g.w_phi,    &g.b_phi,    &g.w_g,      &g.b_g};
}

}  // namespace

std::pair<LcnModel, TrainTrace> train_lcn(const CalibrationDataset& cal, const LcnConfig& cfg) {
  cal.validate();
  if (cfg.batch_size < 2) throw Error(Err::SpecInvalid, "batch size must be >= 2");
  const std::size_t n = cal.n();
  Rng base(cfg.seed);

  Rng init_rng = base.stream(0xfeed);
  LcnModel model = lcn_init(cfg, cal.features, cal.n_classes(), init_rng);

  // Validation rows come off a seeded shuffle; training uses the remainder.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng shuf = base.stream(0x5eed);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[shuf.below(i)]);
  std::size_t n_val = static_cast<std::size_t>(std::llround(cfg.val_fraction * n));
  if (n_val < 2) n_val = std::min<std::size_t>(2, n / 2);
  if (n - n_val < 2) n_val = n >= 4 ? 2 : 0;
  std::vector<std::size_t> val_rows(perm.begin(), perm.begin() + n_val);
  std::vector<std::size_t> train_rows(perm.begin() + n_val, perm.end());
  if (train_rows.size() < 2) {
    train_rows = perm;
    val_rows = perm;
  }

  auto gather = [&](const std::vector<std::size_t>& rows, Matrix& feat, Matrix& logi,
                    std::vector<std::uint32_t>& lab) {
    feat = Matrix(rows.size(), cal.m());
    logi = Matrix(rows.size(), cal.n_classes());
    lab.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t j = 0; j < cal.m(); ++j) feat(r, j) = cal.features(rows[r], j);
      for (std::size_t j = 0; j < cal.n_classes(); ++j) logi(r, j) = cal.logits(rows[r], j);
      lab[r] = cal.labels[rows[r]];
    }
  };
  Matrix val_feat, val_logi;
  std::vector<std::uint32_t> val_lab;
  gather(val_rows, val_feat, val_logi, val_lab);
  Matrix val_onehot = one_hot(val_lab, cal.n_classes());

  auto eval_val = [&](const LcnModel& m, double& lce_proxy) {
    LcnForward f = lcn_forward(m, val_feat, val_logi, false, base.stream(0));
    LcnLoss l = lcn_loss(f.phi, f.probs, val_onehot, cfg.lambda, cfg.gamma);
    BatchKernel bk = batch_kernel(f.phi, val_onehot, cfg.gamma);
    double acc = 0.0;
    for (std::size_t i = 0; i < f.probs.rows; ++i)
      acc += l1_distance(f.probs.row(i), bk.theta.row(i));
    lce_proxy = acc / static_cast<double>(f.probs.rows);
    return l.total;
  };

  double best_proxy = 0.0;
  double best_val = eval_val(model, best_proxy);
  LcnModel best_model = model;

  std::vector<std::size_t> sizes;
  std::vector<double*> slots = param_slots(model, sizes);
  std::size_t n_params = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  AdamState adam(n_params, cfg.lr);
  std::vector<double> flat(n_params), flat_g(n_params);

  TrainTrace trace;
  Matrix bf_feat, bf_logi;
  std::vector<std::uint32_t> bf_lab;
  std::vector<std::size_t> order = train_rows;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng erng = base.stream(0x1000 + epoch);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[erng.below(i)]);

    double ep_total = 0.0, ep_align = 0.0, ep_sim = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;  // kernel estimates need a neighbor
      std::vector<std::size_t> rows(order.begin() + start, order.begin() + end);
      gather(rows, bf_feat, bf_logi, bf_lab);

      LcnGradients g;
      LcnLoss l = lcn_backward(model, bf_feat, bf_logi, bf_lab, cfg.lambda, cfg.gamma, true,
                               erng.stream(start), g);
      ep_total += l.total;
      ep_align += l.alignment;
      ep_sim += l.similarity;
      ++n_batches;

      std::size_t off = 0;
      auto gs = grad_slots(g);
      for (std::size_t s = 0; s < slots.size(); ++s) {
        std::copy(slots[s], slots[s] + sizes[s], flat.begin() + off);
        std::copy(gs[s], gs[s] + sizes[s], flat_g.begin() + off);
        off += sizes[s];
      }
      adam_step(adam, flat, flat_g);
      off = 0;
      for (std::size_t s = 0; s < slots.size(); ++s) {
        std::copy(flat.begin() + off, flat.begin() + off + sizes[s], slots[s]);
        off += sizes[s];
      }
    }
    if (n_batches == 0) break;
    trace.total.push_back(ep_total / n_batches);
    trace.alignment.push_back(ep_align / n_batches);
    trace.similarity.push_back(ep_sim / n_batches);
    double proxy = 0.0;
    double v = eval_val(model, proxy);
    trace.val_total.push_back(v);
    trace.val_lce_proxy.push_back(proxy);
    if (v < best_val) {
      best_val = v;
      best_model = model;
    }
  }
  // Never return something worse than the residual-identity start.
  return {best_model, trace};
}

CalibrationDataset lcn_transform(const LcnModel& model, const CalibrationDataset& d) {
  LcnForward f = lcn_forward(model, d.features, d.logits, false, Rng(0));
  return replace_representation(d, f.phi, f.glogits);
}

std::vector<JsdConsistencyRow> jsd_consistency_experiment(const SynthSpec& generator,
                                                          const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) throw Error(Err::EmptyInput, "need at least one sample size");
  std::vector<JsdConsistencyRow> rows;
  const double n0 = static_cast<double>(sizes.front());
  const double d_exp = static_cast<double>(generator.n_features);
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    SynthSpec spec = generator;
    spec.n = sizes[s];
    spec.seed = Rng::mix(generator.seed ^ (0x517cc1b727220a95ull + s));
    SynthResult res = generate(spec);
    ProbabilityMatrix phat = dataset_probs(res.dataset);

    JsdConsistencyRow row;
    row.n = sizes[s];
    // gamma_n = sigma (n/n0)^(-1/(d+1)): gamma_n -> 0 while n gamma_n^d grows
    // like n^(1/(d+1)).
    row.bandwidth =
        generator.sigma * std::pow(static_cast<double>(sizes[s]) / n0, -1.0 / (d_exp + 1.0));
    KernelConfig kc{row.bandwidth, true};
    Matrix theta = nw_estimate_all(kc, res.dataset.features,
                                   one_hot(res.dataset.labels, res.dataset.n_classes()));
    double acc_est = 0.0, acc_true = 0.0;
    for (std::size_t i = 0; i < spec.n; ++i) {
      acc_est += jsd_distance(phat.probs.row(i), theta.row(i));
      acc_true += jsd_distance(phat.probs.row(i), res.true_conditionals.probs.row(i));
    }
    row.mean_jsd_estimate = acc_est / static_cast<double>(spec.n);
    row.mean_jsd_true = acc_true / static_cast<double>(spec.n);
    row.gap = std::abs(row.mean_jsd_estimate - row.mean_jsd_true);
    rows.push_back(row);
  }
  return rows;
}

std::string LcnModel::to_json(const std::string& fingerprint) const {
  nlohmann::json j;
  j["method"] = "lcn";
  j["fingerprint"] = fingerprint;
  j["activation"] = "relu";
  j["in_dim"] = in_dim;
  j["hidden_dim"] = hidden_dim;
  j["feat_dim"] = feat_dim;
  j["C"] = n_classes;
  j["dropout_rate"] = dropout_rate;
  j["pca_mean"] = pca.mean;
  j["pca_components"] = pca.components.data;
  j["w1"] = w1;
  j["b1"] = b1;
  j["wf"] = wf;
  j["bf"] = bf;
  j["wg"] = wg;
  j["bg"] = bg;
  j["w_phi"] = w_phi;
  j["b_phi"] = b_phi;
  j["w_g"] = w_g;
  j["b_g"] = b_g;
  return j.dump();
}

LcnModel LcnModel::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  LcnModel m;
  m.in_dim = j.at("in_dim").get<std::size_t>();
  m.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  m.feat_dim = j.at("feat_dim").get<std::size_t>();
  m.n_classes = j.at("C").get<std::size_t>();
  m.dropout_rate = j.at("dropout_rate").get<double>();
  m.pca.mean = j.at("pca_mean").get<std::vector<double>>();
  m.pca.components = Matrix(m.feat_dim, m.in_dim);
  m.pca.components.data = j.at("pca_components").get<std::vector<double>>();
  m.w1 = j.at("w1").get<std::vector<double>>();
  m.b1 = j.at("b1").get<std::vector<double>>();
  m.wf = j.at("wf").get<std::vector<double>>();
  m.bf = j.at("bf").get<std::vector<double>>();
  m.wg = j.at("wg").get<std::vector<double>>();
  m.bg = j.at("bg").get<std::vector<double>>();
  m.w_phi = j.at("w_phi").get<double>();
  m.b_phi = j.at("b_phi").get<double>();
  m.w_g = j.at("w_g").get<double>();
  m.b_g = j.at("b_g").get<double>();
  if (m.pca.components.data.size() != m.feat_dim * m.in_dim ||
      m.w1.size() != m.hidden_dim * m.in_dim || m.wf.size() != m.feat_dim * m.hidden_dim ||
      m.wg.size() != m.n_classes * m.hidden_dim)
    throw Error(Err::ShapeMismatch, "lcn model arrays inconsistent with dims");
  return m;
}

}  // namespace lcal
