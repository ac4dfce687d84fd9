// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dpa/error.hpp"
#include "dpa/matrix.hpp"
#include "dpa/prototypes.hpp"

namespace dpa {

/// Row-wise softmax of (features . prototypes^T) / tau, computed with the
/// max-subtraction trick.
inline Mat softmax_scores(const Mat& features, const Mat& prototypes, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::NonPositiveTemperature, "tau = " + std::to_string(tau));
  Mat out = matmul_transposed(features, prototypes);
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const double peak = *std::ranges::max_element(row);
    double total = 0.0;
    for (auto& x : row) {
      x = std::exp((x - peak) / tau);
      total += x;
    }
    for (auto& x : row) x /= total;
  }
  return out;
}

inline Mat text_scores(const Mat& features, const TextualPrototypes& tp, double tau) {
  return softmax_scores(features, tp.Z, tau);
}

inline Mat image_scores(const Mat& features, const ImagePrototypes& ip, double tau) {
  return softmax_scores(features, ip.P, tau);
}

inline constexpr double kRunningMeanFloor = 1e-12;

/// Running average of text predictions used to rebalance pseudo-labels.
struct DAState {
  std::vector<double> running_mean;
  double momentum = 0.99;

  static DAState uniform(std::size_t n_classes, double momentum) {
    return {std::vector<double>(n_classes, 1.0 / static_cast<double>(n_classes)), momentum};
  }
  bool operator==(const DAState&) const = default;
};

/// Divides each row by the running mean and renormalizes to sum 1, then folds
/// the batch mean of `p_t` into the running mean. The division uses the
/// running mean from before the update.
inline Mat distribution_align(const Mat& p_t, DAState& da) {
  const std::size_t c = da.running_mean.size();
  require(p_t.rows() == 0 || p_t.cols() == c, ErrorCode::ShapeMismatch, "class count differs from DA state");
  for (std::size_t j = 0; j < c; ++j)
    if (!(da.running_mean[j] >= kRunningMeanFloor))
      fail(ErrorCode::DegenerateRunningMean, "running mean entry " + std::to_string(j));

  Mat out(p_t.rows(), c);
  std::vector<double> batch_mean(c, 0.0);
  for (std::size_t i = 0; i < p_t.rows(); ++i) {
    auto src = p_t.row(i);
    auto dst = out.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      dst[j] = src[j] / da.running_mean[j];
      total += dst[j];
      batch_mean[j] += src[j];
    }
    for (auto& x : dst) x /= total;
  }
  if (p_t.rows() > 0) {
    const double inv_b = 1.0 / static_cast<double>(p_t.rows());
    for (std::size_t j = 0; j < c; ++j)
      da.running_mean[j] = da.momentum * da.running_mean[j] + (1.0 - da.momentum) * batch_mean[j] * inv_b;
  }
  return out;
}

struct FusedLabels {
  Mat fused;
  Labels labels;
};

/// Convex combination beta * da_pt + (1 - beta) * p_v and its row argmax.
inline FusedLabels fuse_and_label(const Mat& da_pt, const Mat& p_v, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) fail(ErrorCode::BetaOutOfRange, "beta = " + std::to_string(beta));
  require(da_pt.rows() == p_v.rows() && da_pt.cols() == p_v.cols(), ErrorCode::ShapeMismatch,
          "score matrices differ in shape");
  FusedLabels out{Mat(da_pt.rows(), da_pt.cols()), Labels(da_pt.rows())};
  for (std::size_t i = 0; i < da_pt.rows(); ++i) {
    auto a = da_pt.row(i);
    auto b = p_v.row(i);
    auto f = out.fused.row(i);
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = beta * a[j] + (1.0 - beta) * b[j];
    out.labels[i] = static_cast<int>(argmax(f));
  }
  return out;
}

/// Loss weight per sample: product of the cosines to the text and image
/// prototypes of its pseudo-label, each clamped to [0, 1]. Assumes unit rows.
inline std::vector<double> sample_weights(const Mat& features, std::span<const int> labels,
                                          const TextualPrototypes& tp, const ImagePrototypes& ip) {
  require(labels.size() == features.rows(), ErrorCode::ShapeMismatch, "one label per feature row");
  std::vector<double> w(features.rows());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    require(y < tp.n_classes(), ErrorCode::LabelOutOfRange, "pseudo-label");
    const double ct = std::clamp(dot(features.row(i), tp.Z.row(y)), 0.0, 1.0);
    const double cp = std::clamp(dot(features.row(i), ip.P.row(y)), 0.0, 1.0);
    w[i] = ct * cp;
  }
  return w;
}

struct PseudoLabelOptions {
  double beta = 0.5;
  double tau_logit = 0.01;
  bool weighting = true;
};

struct PseudoLabelOutput {
  Mat fused;
  Labels labels;
  std::vector<double> weights;
};

/// Full labeling step on adapted weak-view features: text and image scores,
/// distribution alignment of the text side, fusion, labels, weights.
inline PseudoLabelOutput generate_pseudo_labels(const Mat& weak_features, const TextualPrototypes& tp,
                                                const ImagePrototypes& ip, DAState& da,
                                                const PseudoLabelOptions& opt) {
  const Mat p_t = text_scores(weak_features, tp, opt.tau_logit);
  const Mat p_v = image_scores(weak_features, ip, opt.tau_logit);
  const Mat aligned = distribution_align(p_t, da);
  auto fl = fuse_and_label(aligned, p_v, opt.beta);
  PseudoLabelOutput out{std::move(fl.fused), std::move(fl.labels), {}};
  out.weights = opt.weighting ? sample_weights(weak_features, out.labels, tp, ip)
                              : std::vector<double>(out.labels.size(), 1.0);
  return out;
}

}  // namespace dpa
