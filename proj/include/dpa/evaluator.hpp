// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpa/embedding_store.hpp"
#include "dpa/error.hpp"
#include "dpa/matrix.hpp"
#include "dpa/prototypes.hpp"
#include "dpa/trainer.hpp"

namespace dpa {

// This is the only module that reads ground-truth labels.

inline double top1_accuracy(std::span<const int> pred, std::span<const int> truth) {
  require(pred.size() == truth.size(), ErrorCode::LengthMismatch,
          std::to_string(pred.size()) + " predictions for " + std::to_string(truth.size()) + " labels");
  require(!pred.empty(), ErrorCode::EmptyInput, "no samples to score");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

/// Row = true class, column = predicted class.
struct ConfusionMatrix {
  std::size_t n_classes = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts[truth * n_classes + pred]; }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < n_classes; ++j) s += (*this)(j, j);
    return s;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const int> pred, std::span<const int> truth, std::size_t n_classes) {
  require(pred.size() == truth.size(), ErrorCode::LengthMismatch, "prediction and label counts differ");
  ConfusionMatrix cm{n_classes, std::vector<std::uint64_t>(n_classes * n_classes, 0)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool ok = pred[i] >= 0 && truth[i] >= 0 && static_cast<std::size_t>(pred[i]) < n_classes &&
                    static_cast<std::size_t>(truth[i]) < n_classes;
    require(ok, ErrorCode::LabelOutOfRange, "sample " + std::to_string(i));
    ++cm.counts[static_cast<std::size_t>(truth[i]) * n_classes + static_cast<std::size_t>(pred[i])];
  }
  return cm;
}

inline std::vector<std::pair<std::size_t, double>> pl_accuracy_curve(const TrainReport& report) {
  std::vector<std::pair<std::size_t, double>> curve;
  for (const auto& rec : report.epochs) {
    if (!rec.pl_accuracy) fail(ErrorCode::MissingLabels, "epoch " + std::to_string(rec.epoch) + " has no PL accuracy");
    curve.emplace_back(rec.epoch, *rec.pl_accuracy);
  }
  return curve;
}

struct ProtoCosine {
  Mat cosine;               // (j, r) = P_j . Z_r
  double diag_dominance;    // mean(diag) - mean(off-diagonal)
};

inline ProtoCosine proto_cosine_matrix(const ImagePrototypes& ip, const TextualPrototypes& tp) {
  ProtoCosine out{matmul_transposed(ip.P, tp.Z), 0.0};
  const std::size_t c = out.cosine.rows();
  double diag = 0.0, off = 0.0;
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t r = 0; r < c; ++r) (j == r ? diag : off) += out.cosine(j, r);
  out.diag_dominance = diag / static_cast<double>(c) - (c > 1 ? off / static_cast<double>(c * (c - 1)) : 0.0);
  return out;
}

/// Per-epoch hook for the trainer: pseudo-label accuracy of the memory bank
/// and accuracy of the textual-prototype classifier on the weak views.
inline EpochEvaluator make_label_evaluator(const EmbeddingDataset& ds, Labels truth) {
  require(truth.size() == ds.n_samples, ErrorCode::LengthMismatch, "label count differs from dataset");
  return [&ds, truth = std::move(truth)](const EpochView& view) {
    EpochEval ev;
    ev.pl_accuracy = top1_accuracy(view.pseudo_labels, truth);
    ev.test_accuracy = top1_accuracy(predict(view.textual, view.adapter, ds.weak), truth);
    return ev;
  };
}

/// Entropy (nats) of the batch-mean prediction; ln C when predictions are
/// spread evenly over classes.
inline double mean_prediction_entropy(const Mat& probs) {
  require(probs.rows() > 0, ErrorCode::EmptyInput, "no predictions");
  std::vector<double> mean(probs.cols(), 0.0);
  for (std::size_t i = 0; i < probs.rows(); ++i)
    for (std::size_t j = 0; j < probs.cols(); ++j) mean[j] += probs(i, j);
  double h = 0.0;
  for (double m : mean) {
    const double p = m / static_cast<double>(probs.rows());
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t j = 0; j < cm.n_classes; ++j) os << ',' << (j < names.size() ? names[j] : std::to_string(j));
  os << '\n';
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    os << (t < names.size() ? names[t] : std::to_string(t));
    for (std::size_t p = 0; p < cm.n_classes; ++p) os << ',' << cm(t, p);
    os << '\n';
  }
  return os.str();
}

inline nlohmann::json confusion_json(const ConfusionMatrix& cm, const std::vector<std::string>& names, double accuracy) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t t = 0; t < cm.n_classes; ++t) {
    std::vector<std::uint64_t> row(cm.counts.begin() + static_cast<std::ptrdiff_t>(t * cm.n_classes),
                                   cm.counts.begin() + static_cast<std::ptrdiff_t>((t + 1) * cm.n_classes));
    rows.push_back(row);
  }
  return {{"accuracy", accuracy}, {"class_names", names}, {"confusion", rows}};
}

inline std::string curve_csv(const std::vector<std::pair<std::size_t, double>>& curve) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,pl_accuracy\n";
  for (const auto& [epoch, acc] : curve) os << epoch << ',' << acc << '\n';
  return os.str();
}

inline std::string cosine_csv(const ProtoCosine& pc) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t j = 0; j < pc.cosine.rows(); ++j) {
    for (std::size_t r = 0; r < pc.cosine.cols(); ++r) os << (r ? "," : "") << pc.cosine(j, r);
    os << '\n';
  }
  return os.str();
}

}  // namespace dpa
