// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dpa/error.hpp"
#include "dpa/matrix.hpp"
#include "dpa/optim.hpp"
#include "dpa/prototypes.hpp"
#include "dpa/pseudo_label.hpp"

namespace dpa {

inline constexpr double kLogFloor = 1e-12;

/// A loss value with its gradients w.r.t. the textual prototypes and the
/// (adapted) feature rows it was evaluated on.
struct LossGrad {
  double value = 0.0;
  Mat dZ;
  Mat d_features;
};

namespace detail {

// Backprop of logits = F Z^T / tau.
inline void logits_backward(const Mat& features, const Mat& Z, const Mat& d_logits, double tau, Mat& dZ,
                            Mat& d_features) {
  dZ = Mat(Z.rows(), Z.cols(), 0.0);
  d_features = Mat(features.rows(), features.cols(), 0.0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    auto f = features.row(i);
    auto df = d_features.row(i);
    for (std::size_t c = 0; c < Z.rows(); ++c) {
      const double g = d_logits(i, c) / tau;
      if (g == 0.0) continue;
      auto z = Z.row(c);
      auto dz = dZ.row(c);
      for (std::size_t k = 0; k < f.size(); ++k) {
        dz[k] += g * f[k];
        df[k] += g * z[k];
      }
    }
  }
}

inline double log_sum_exp(std::span<const double> v) {
  double peak = v[0];
  for (double x : v) peak = std::max(peak, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - peak);
  return peak + std::log(s);
}

}  // namespace detail

struct SelfTrainingLoss : LossGrad {
  Mat probs;  // p_A, softmax of strong-view logits
};

/// Weighted cross-entropy of strong-view predictions against weak-view
/// pseudo-labels, averaged over the batch.
inline SelfTrainingLoss self_training_loss(const Mat& strong_f, std::span<const int> labels,
                                           std::span<const double> weights, const TextualPrototypes& tp,
                                           double tau_logit) {
  require(labels.size() == strong_f.rows() && weights.size() == strong_f.rows(), ErrorCode::ShapeMismatch,
          "labels/weights must match batch");
  SelfTrainingLoss out;
  out.probs = softmax_scores(strong_f, tp.Z, tau_logit);
  const std::size_t b = strong_f.rows();
  const std::size_t c = tp.n_classes();
  Mat d_logits(b, c, 0.0);
  if (b == 0) {
    detail::logits_backward(strong_f, tp.Z, d_logits, tau_logit, out.dZ, out.d_features);
    return out;
  }
  const Mat logits = matmul_transposed(strong_f, tp.Z);
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    require(y < c, ErrorCode::LabelOutOfRange, "pseudo-label");
    std::vector<double> scaled(c);
    for (std::size_t j = 0; j < c; ++j) scaled[j] = logits(i, j) / tau_logit;
    double log_p = scaled[y] - detail::log_sum_exp(scaled);
    const bool floored = log_p < std::log(kLogFloor);
    if (floored) log_p = std::log(kLogFloor);
    out.value += weights[i] * -log_p * inv_b;
    if (floored) continue;
    for (std::size_t j = 0; j < c; ++j)
      d_logits(i, j) = weights[i] * inv_b * (out.probs(i, j) - (j == y ? 1.0 : 0.0));
  }
  detail::logits_backward(strong_f, tp.Z, d_logits, tau_logit, out.dZ, out.d_features);
  return out;
}

/// -(1/C) sum_j log(mean_i p_A[i, j]); equals ln C when the batch-mean
/// prediction is uniform and grows as predictions collapse.
inline double fairness_loss(const Mat& p_A) {
  require(p_A.rows() >= 1, ErrorCode::EmptyInput, "fairness loss needs a non-empty batch");
  const std::size_t c = p_A.cols();
  double value = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < p_A.rows(); ++i) mean += p_A(i, j);
    mean /= static_cast<double>(p_A.rows());
    value -= std::log(std::max(mean, kLogFloor));
  }
  return value / static_cast<double>(c);
}

/// d fairness_loss / d p_A.
inline Mat fairness_loss_grad(const Mat& p_A) {
  require(p_A.rows() >= 1, ErrorCode::EmptyInput, "fairness loss needs a non-empty batch");
  const std::size_t b = p_A.rows(), c = p_A.cols();
  Mat g(b, c, 0.0);
  for (std::size_t j = 0; j < c; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < b; ++i) mean += p_A(i, j);
    mean /= static_cast<double>(b);
    if (mean < kLogFloor) continue;
    const double dj = -1.0 / (static_cast<double>(c) * mean * static_cast<double>(b));
    for (std::size_t i = 0; i < b; ++i) g(i, j) = dj;
  }
  return g;
}

/// Fairness regularizer as a function of the strong features and Z.
inline LossGrad fairness_term(const Mat& strong_f, const TextualPrototypes& tp, double tau_logit) {
  const Mat p = softmax_scores(strong_f, tp.Z, tau_logit);
  LossGrad out;
  out.value = fairness_loss(p);
  const Mat g = fairness_loss_grad(p);
  // softmax Jacobian: dl_ij = p_ij (g_ij - sum_k p_ik g_ik)
  Mat d_logits(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double inner = dot(p.row(i), g.row(i));
    for (std::size_t j = 0; j < p.cols(); ++j) d_logits(i, j) = p(i, j) * (g(i, j) - inner);
  }
  detail::logits_backward(strong_f, tp.Z, d_logits, tau_logit, out.dZ, out.d_features);
  return out;
}

/// InfoNCE between image prototype j and textual prototype j against all
/// textual prototypes. P is a constant here; only dZ is produced.
inline LossGrad alignment_loss(const ImagePrototypes& ip, const TextualPrototypes& tp, double tau_align) {
  if (!(tau_align > 0.0)) fail(ErrorCode::NonPositiveTemperature, "tau_align = " + std::to_string(tau_align));
  require(ip.P.rows() == tp.Z.rows() && ip.P.cols() == tp.Z.cols(), ErrorCode::ShapeMismatch,
          "prototype sets differ in shape");
  const std::size_t c = tp.n_classes();
  const Mat sim = matmul_transposed(ip.P, tp.Z);
  LossGrad out;
  out.dZ = Mat(c, tp.Z.cols(), 0.0);
  std::vector<double> scaled(c);
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t r = 0; r < c; ++r) scaled[r] = sim(j, r) / tau_align;
    const double lse = detail::log_sum_exp(scaled);
    out.value += lse - scaled[j];
    auto pj = ip.P.row(j);
    for (std::size_t r = 0; r < c; ++r) {
      const double g = (std::exp(scaled[r] - lse) - (r == j ? 1.0 : 0.0)) / tau_align;
      auto dz = out.dZ.row(r);
      for (std::size_t k = 0; k < dz.size(); ++k) dz[k] += g * pj[k];
    }
  }
  return out;
}

struct Lambdas {
  double st = 1.0;
  double reg = 1.0;
  double align = 1.0;

  bool operator==(const Lambdas&) const = default;
};

struct Temperatures {
  double logit = 0.01;
  double align = 0.05;
};

struct LossBreakdown {
  double l_st = 0.0;
  double l_reg = 0.0;
  double l_align = 0.0;
  double total = 0.0;
  Lambdas lambdas;
};

struct Gradients {
  Mat dZ;
  std::vector<double> d_adapter_scale;
  std::vector<double> d_adapter_bias;
};

struct ObjectiveResult {
  LossBreakdown losses;
  Gradients grads;
};

/// Combined objective on one batch. `strong_rows` are raw strong-view
/// embeddings; they go through the adapter here so that the self-training
/// and fairness terms reach the adapter parameters. Labels and weights come
/// from the weak view and carry no gradient.
inline ObjectiveResult total_loss_and_grads(const Mat& strong_rows, std::span<const int> labels,
                                            std::span<const double> weights, const TextualPrototypes& tp,
                                            const ImagePrototypes& ip, const Adapter& adapter,
                                            const Lambdas& lambdas, const Temperatures& temps) {
  const AdapterForward fwd = adapter_forward(adapter, strong_rows);
  const auto st = self_training_loss(fwd.out, labels, weights, tp, temps.logit);
  const auto reg = fairness_term(fwd.out, tp, temps.logit);
  const auto align = alignment_loss(ip, tp, temps.align);

  ObjectiveResult res;
  auto& l = res.losses;
  l.l_st = st.value;
  l.l_reg = reg.value;
  l.l_align = align.value;
  l.lambdas = lambdas;
  l.total = lambdas.st * l.l_st + lambdas.reg * l.l_reg + lambdas.align * l.l_align;

  const std::size_t c = tp.n_classes(), d = tp.Z.cols();
  res.grads.dZ = Mat(c, d, 0.0);
  auto dz = res.grads.dZ.flat();
  for (std::size_t k = 0; k < dz.size(); ++k)
    dz[k] = lambdas.st * st.dZ.flat()[k] + lambdas.reg * reg.dZ.flat()[k] + lambdas.align * align.dZ.flat()[k];

  Mat d_features(strong_rows.rows(), d, 0.0);
  auto df = d_features.flat();
  for (std::size_t k = 0; k < df.size(); ++k)
    df[k] = lambdas.st * st.d_features.flat()[k] + lambdas.reg * reg.d_features.flat()[k];
  auto ag = adapter_backward(strong_rows, fwd, d_features);
  res.grads.d_adapter_scale = std::move(ag.d_scale);
  res.grads.d_adapter_bias = std::move(ag.d_bias);
  return res;
}

}  // namespace dpa
