#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lcal/dataset.hpp"
#include "lcal/matrix.hpp"
#include "lcal/numerics.hpp"
#include "lcal/rng.hpp"

namespace lcal {

struct LcnConfig {
  std::size_t hidden_dim = 64;
  double dropout_rate = 0.3;
  double lambda = 1.0;  // similarity-term weight
  double gamma = 10.0;  // kernel bandwidth for the in-batch estimates
  std::size_t pca_dim = 50;
  double lr = 1e-3;
  std::size_t epochs = 22;
  std::size_t batch_size = 1024;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

// Residual two-head MLP over backbone features: a shared hidden layer feeds a
// feature head (combined with the PCA projection) and a logit head (combined
// with the original logits).
struct LcnModel {
  PcaProjection pca;
  std::size_t in_dim = 0, hidden_dim = 0, feat_dim = 0, n_classes = 0;
  std::vector<double> w1, b1;  // hidden x in, hidden
  std::vector<double> wf, bf;  // feat x hidden, feat
  std::vector<double> wg, bg;  // C x hidden, C
  double w_phi = 1.0, b_phi = 0.0;
  double w_g = 1.0, b_g = 0.0;
  double dropout_rate = 0.0;

  std::string to_json(const std::string& fingerprint = "") const;
  static LcnModel from_json(const std::string& text);
};

LcnModel lcn_init(const LcnConfig& cfg, const Matrix& cal_features, std::size_t n_classes,
                  Rng& rng);

struct LcnForward {
  Matrix phi;      // n x feat_dim (residual reduced features)
  Matrix glogits;  // n x C (residual logits)
  Matrix probs;    // n x C (row softmax of glogits)
  // Caches for the backward pass.
  Matrix preact;   // n x hidden
  Matrix hidden;   // n x hidden, post-activation and dropout scaling
  Matrix pca_feat; // n x feat_dim
  std::vector<double> drop_scale;  // n*hidden, 1/(1-rate) kept / 0 dropped; empty in eval mode
};

// rng is taken by value: a forward pass is a pure function of (model, inputs,
// rng state), which keeps dropout reproducible for gradient checking.
LcnForward lcn_forward(const LcnModel& model, const Matrix& features, const Matrix& logits,
                       bool train_mode, Rng rng);

struct LcnLoss {
  double total = 0.0;
  double alignment = 0.0;   // mean JSD(p, theta)
  double similarity = 0.0;  // mean CE(y, theta)
};

// Loss of a batch given its forward outputs; theta is the in-batch
// self-excluded kernel estimate on phi.
LcnLoss lcn_loss(const Matrix& phi, const Matrix& probs, const Matrix& onehot, double lambda,
                 double gamma);

struct LcnGradients {
  std::vector<double> w1, b1, wf, bf, wg, bg;
  double w_phi = 0.0, b_phi = 0.0, w_g = 0.0, b_g = 0.0;
};

// Analytic gradients of the batch loss with respect to every parameter,
// including the kernel-weight dependence of theta on phi.
LcnLoss lcn_backward(const LcnModel& model, const Matrix& features, const Matrix& logits,
                     const std::vector<std::uint32_t>& labels, double lambda, double gamma,
                     bool train_mode, Rng rng, LcnGradients& grads);

struct TrainTrace {
  std::vector<double> total, alignment, similarity;  // per epoch, train batches
  std::vector<double> val_total;                     // eval-mode loss on the validation rows
  std::vector<double> val_lce_proxy;                 // mean ||p - theta||_1 on validation rows
};

std::pair<LcnModel, TrainTrace> train_lcn(const CalibrationDataset& cal, const LcnConfig& cfg);

// Eval-mode forward over a dataset, repackaged so the stock metrics run on the
// learned representation.
CalibrationDataset lcn_transform(const LcnModel& model, const CalibrationDataset& d);

struct JsdConsistencyRow {
  std::size_t n = 0;
  double bandwidth = 0.0;
  double mean_jsd_estimate = 0.0;  // mean d_JSD(p, theta) with leave-one-out theta
  double mean_jsd_true = 0.0;      // mean d_JSD(p, p_true)
  double gap = 0.0;                // |difference of the two means|
};

// Consistency trend of the alignment term: the bandwidth shrinks as
// gamma_n = sigma * (n / n0)^(-1/(d+1)), so gamma_n -> 0 while n gamma_n^d
// grows.
std::vector<JsdConsistencyRow> jsd_consistency_experiment(
    const struct SynthSpec& generator, const std::vector<std::size_t>& sizes);

}  // namespace lcal
